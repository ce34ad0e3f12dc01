"""Iterative summary search, interaction ranking and local linear summaries."""

from __future__ import annotations

import itertools
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .additive import (AdditiveSummaryFit, add_interaction, additive_terms, fit_additive,
                       project_additive)
from .core import DataError, Dataset, PosteriorDraws, PredictiveLocations, posterior_mean_fit
from .diagnostics import DiagnosticsReport, diagnose, summary_r2
from .linear import InclusionVector, LinearSummaryFit, project_draws

log = logging.getLogger(__name__)

PRUNE_ABOVE = 12
TOP_COLUMNS = 8


# -- interaction ranking -------------------------------------------------------

def default_candidates(base: AdditiveSummaryFit, p: int, tree_pairs=()) -> list[tuple[int, int]]:
    """All pairs for small p; otherwise tree-suggested pairs plus pairs among
    the columns whose fitted univariate terms vary most."""
    if p <= PRUNE_ABOVE:
        return list(itertools.combinations(range(p), 2))
    var = np.zeros(p)
    for t, curve in zip(base.terms, base.point_terms):
        if t.kind == "univariate":
            var[t.columns[0]] = np.var(curve)
    top = sorted(np.argsort(-var, kind="stable")[:TOP_COLUMNS].tolist())
    pairs = {tuple(sorted(map(int, pr))) for pr in tree_pairs}
    pairs.update(itertools.combinations(top, 2))
    return sorted(pairs)


def _fit_pair(pair, draws, locations, base, f_hat, bivariate_dim):
    terms = add_interaction(base.terms, pair, locations, basis_dim=bivariate_dim)
    fit = project_additive(draws, fit_additive(f_hat, terms, locations))
    r2 = summary_r2(draws, fit.gamma_draws(), locations.weights)
    return fit, r2


def interaction_search(draws: PosteriorDraws, locations: PredictiveLocations,
                       base: AdditiveSummaryFit | None = None,
                       candidates: Sequence[tuple[int, int]] | None = None,
                       basis_dim: int = 10, bivariate_dim: int = 30, workers: int = 1,
                       keep_fits: bool = False) -> list[dict[str, Any]]:
    """Rank two-way interactions by the posterior-median R^2 of the
    corresponding partially additive summary.

    Each entry holds ``pair`` (0-based, sorted), ``names``, ``r2_median``,
    ``r2_quantiles`` and ``delta`` (gain over the purely additive summary).
    Pairs whose fit fails are logged and left out.
    """
    draws.check_locations(locations)
    f_hat = posterior_mean_fit(draws)
    if base is None:
        base = project_additive(draws, fit_additive(f_hat, additive_terms(locations, basis_dim=basis_dim),
                                                    locations))
    elif base.term_draws is None:
        base = project_additive(draws, base)
    base_med = summary_r2(draws, base.gamma_draws(), locations.weights).median
    if candidates is None:
        candidates = default_candidates(base, locations.p)
    pairs = sorted({tuple(sorted((int(a), int(b)))) for a, b in candidates})
    if not pairs:
        raise ValueError("no candidate pairs")
    names = locations.names()

    def one(pair):
        try:
            return pair, _fit_pair(pair, draws, locations, base, f_hat, bivariate_dim), None
        except Exception as exc:  # noqa: BLE001 - recorded per pair
            return pair, None, exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, pairs))
    else:
        results = [one(pr) for pr in pairs]
    ranked = []
    for pair, out, exc in results:
        if exc is not None:
            log.warning("interaction %s skipped: %s", pair, exc)
            continue
        fit, r2 = out
        entry = {"pair": pair, "names": (names[pair[0]], names[pair[1]]),
                 "r2_median": r2.median, "r2_quantiles": r2.quantiles(),
                 "delta": r2.median - base_med}
        if keep_fits:
            entry["fit"] = fit
        ranked.append(entry)
    ranked.sort(key=lambda e: (-e["r2_median"], e["pair"]))
    return ranked


# -- Algorithm-style search ------------------------------------------------------

@dataclass
class SearchEntry:
    round: int
    spec: dict[str, Any]
    report: DiagnosticsReport
    summary: Any = field(repr=False, default=None)
    ranked_pairs: list[dict[str, Any]] | None = None

    @property
    def r2_median(self) -> float:
        return self.report.r2.median

    def to_dict(self) -> dict[str, Any]:
        d = {"round": self.round, "spec": self.spec, "diagnostics": self.report.to_dict()}
        if self.ranked_pairs is not None:
            d["ranked_pairs"] = [{k: (list(v) if isinstance(v, tuple) else v)
                                  for k, v in e.items() if k != "fit"} for e in self.ranked_pairs]
        return d


@dataclass
class SearchState:
    history: list[SearchEntry] = field(default_factory=list)
    stop_reason: str | None = None
    policy: dict[str, Any] = field(default_factory=dict)

    @property
    def current_spec(self) -> dict[str, Any] | None:
        return self.history[-1].spec if self.history else None

    def append(self, entry: SearchEntry) -> None:
        if self.history and self.history[-1].spec == entry.spec:
            raise ValueError("consecutive search rounds must use different summaries")
        self.history.append(entry)

    def to_dict(self) -> dict[str, Any]:
        return {"policy": self.policy, "stop_reason": self.stop_reason,
                "current_spec": self.current_spec,
                "history": [e.to_dict() for e in self.history]}


def run_summary_search(draws: PosteriorDraws, locations: PredictiveLocations,
                       r2_threshold: float = 0.9, max_rounds: int = 3, y_tilde=None,
                       basis_dim: int = 10, bivariate_dim: int = 30,
                       workers: int = 1) -> SearchState:
    """Escalate linear -> additive -> partially additive until the
    posterior-median R^2 reaches ``r2_threshold``.

    ``stop_reason`` is ``accepted`` when a summary clears the threshold,
    ``exhausted`` when every class was tried, and ``budget`` when
    ``max_rounds`` ran out first.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be at least 1")
    state = SearchState(policy={"r2_threshold": r2_threshold, "max_rounds": max_rounds})
    f_hat = posterior_mean_fit(draws)
    names = locations.names()

    def record(rnd, spec, fit, gamma_point, ranked=None):
        rep = diagnose(draws, fit.gamma_draws(), gamma_point, locations, y_tilde=y_tilde,
                       summary_id=spec["class"])
        state.append(SearchEntry(rnd, spec, rep, fit, ranked))
        return rep.r2.median >= r2_threshold

    lin = project_draws(draws, locations, InclusionVector.all(locations.p))
    if record(1, {"class": "linear"}, lin, lin.fitted_point()):
        state.stop_reason = "accepted"
        return state
    if max_rounds < 2:
        state.stop_reason = "budget"
        return state

    add = project_additive(draws, fit_additive(f_hat, additive_terms(locations, basis_dim=basis_dim),
                                               locations))
    if record(2, {"class": "additive"}, add, add.fitted_point()):
        state.stop_reason = "accepted"
        return state
    if max_rounds < 3:
        state.stop_reason = "budget"
        return state

    if locations.p < 2:
        state.stop_reason = "exhausted"
        return state
    tree = state.history[-1].report.tree
    tree_pairs = [pr for pr, _ in tree.candidate_pairs] if tree is not None else []
    cands = default_candidates(add, locations.p, tree_pairs)
    ranked = interaction_search(draws, locations, add, cands, basis_dim=basis_dim,
                                bivariate_dim=bivariate_dim, workers=workers, keep_fits=True)
    if not ranked:
        state.stop_reason = "exhausted"
        return state
    best = ranked[0]
    fit = best["fit"]
    spec = {"class": "partial-additive", "pairs": [list(best["pair"])],
            "names": [list(best["names"])]}
    for e in ranked:
        e.pop("fit", None)
    ok = record(3, spec, fit, fit.fitted_point(), ranked)
    state.stop_reason = "accepted" if ok else "exhausted"
    log.info("search stopped (%s) at %s", state.stop_reason,
             [names[j] for j in best["pair"]])
    return state


# -- local summaries -----------------------------------------------------------

REGION_KINDS = ("box", "point", "observed-subset")


@dataclass(frozen=True)
class LocalRegion:
    """Region of covariate space over which a local summary is fitted.

    ``bounds`` maps a geographic column index to ``(lo, hi)``; ``anchor``
    maps it to a fixed value for point regions. ``reference_bounds``
    selects the rows of the reference data used for the moments of the
    remaining columns (default: ``bounds``, or all rows for a point).
    """

    kind: str
    bounds: Mapping[int, tuple[float, float]] = field(default_factory=dict)
    anchor: Mapping[int, float] = field(default_factory=dict)
    n_tilde: int = 1000
    covariate_model: str = "empirical-gaussian"
    seed: int = 0
    reference_bounds: Mapping[int, tuple[float, float]] | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in REGION_KINDS:
            raise ValueError(f"unknown region kind {self.kind!r}")
        if self.covariate_model not in ("empirical-gaussian", "fixed"):
            raise ValueError(f"unknown covariate model {self.covariate_model!r}")
        if self.n_tilde < 1:
            raise ValueError("n_tilde must be at least 1")
        for j, (lo, hi) in self.bounds.items():
            if not lo < hi:
                raise ValueError(f"empty bounds for column {j}: ({lo}, {hi})")
        if self.kind == "point" and not self.anchor:
            raise ValueError("point regions need an anchor")
        if self.kind == "box" and not self.bounds:
            raise ValueError("box regions need bounds")


def _inside(X, bounds) -> np.ndarray:
    keep = np.ones(X.shape[0], dtype=bool)
    for j, (lo, hi) in bounds.items():
        keep &= (X[:, j] >= lo) & (X[:, j] <= hi)
    return keep


def factorizable_covariance(S) -> np.ndarray:
    """Cholesky factor of ``S``, shrinking toward the diagonal when needed."""
    S = 0.5 * (np.asarray(S, float) + np.asarray(S, float).T)
    D = np.diag(np.maximum(np.diag(S), 1e-12))
    for t in np.concatenate([[0.0], np.linspace(0.05, 1.0, 20)]):
        try:
            L = np.linalg.cholesky((1 - t) * S + t * D)
        except np.linalg.LinAlgError:
            continue
        if t > 0:
            warnings.warn(f"covariance shrunk toward its diagonal (weight {t:.2f})", stacklevel=3)
        return L
    raise DataError("covariance could not be factorized")


def generate_local_locations(region: LocalRegion, reference: Dataset,
                             geo_columns: Sequence[int]) -> PredictiveLocations:
    """Synthetic (or observed) predictive locations for a local summary."""
    X = reference.X
    geo = [int(j) for j in geo_columns]
    if any(j < 0 or j >= reference.p for j in geo):
        raise DataError("geographic column index out of range")
    other = [j for j in range(reference.p) if j not in geo]
    names = reference.column_names
    if region.kind == "observed-subset":
        rows = _inside(X, region.bounds)
        if not rows.any():
            raise DataError("no reference rows inside the region")
        return PredictiveLocations(X[rows], origin="observed-subset", column_names=names)

    ref_bounds = region.reference_bounds
    if ref_bounds is None:
        ref_bounds = region.bounds if region.kind == "box" else {}
    rows = _inside(X, ref_bounds)
    if rows.sum() < 2:
        raise DataError("fewer than two reference rows inside the region")
    rng = np.random.default_rng(np.random.SeedSequence([region.seed, 3]))
    n = region.n_tilde
    out = np.empty((n, reference.p))
    if region.kind == "box":
        for j in geo:
            if j not in region.bounds:
                raise DataError(f"no bounds for geographic column {names[j]}")
            lo, hi = region.bounds[j]
            out[:, j] = rng.uniform(lo, hi, n)
    else:
        for j in geo:
            if j not in region.anchor:
                raise DataError(f"no anchor value for geographic column {names[j]}")
            out[:, j] = region.anchor[j]
    if other:
        Xo = X[rows][:, other]
        mu = Xo.mean(axis=0)
        if region.covariate_model == "fixed":
            out[:, other] = mu
        else:
            S = np.atleast_2d(np.cov(Xo, rowvar=False))
            L = factorizable_covariance(S)
            out[:, other] = mu + rng.standard_normal((n, len(other))) @ L.T
    return PredictiveLocations(out, origin="synthetic", column_names=names)


@dataclass
class LocalSummary:
    region: LocalRegion
    locations: PredictiveLocations
    fit: LinearSummaryFit
    report: DiagnosticsReport
    dropped: tuple[str, ...] = ()

    def interval_widths(self, level: float = 0.95) -> np.ndarray:
        ci = self.fit.credible_intervals(level)
        return ci[:, 1] - ci[:, 0]

    def to_dict(self) -> dict[str, Any]:
        ci = self.fit.credible_intervals()
        return {
            "region": {"kind": self.region.kind, "name": self.region.name,
                       "bounds": {str(k): list(v) for k, v in self.region.bounds.items()},
                       "anchor": {str(k): v for k, v in self.region.anchor.items()},
                       "n_tilde": self.locations.n_tilde, "seed": self.region.seed},
            "columns": list(self.fit.column_names),
            "dropped": list(self.dropped),
            "point": self.fit.point.tolist(),
            "interval_95": ci.tolist(),
            "diagnostics": self.report.to_dict(),
        }


def local_linear_summary(posterior, region: LocalRegion, reference: Dataset,
                         geo_columns: Sequence[int] = (), predictive: bool = False,
                         locations: PredictiveLocations | None = None) -> LocalSummary:
    """Linear summary of a fitted GP over a local region.

    ``posterior`` is a run :class:`~postsum.gp.GpPosterior`. Columns that
    are constant over the local locations are dropped with a warning.
    """
    locs = locations if locations is not None else generate_local_locations(region, reference, geo_columns)
    draws = posterior.draws(locs, locations_id=f"local:{region.name or region.kind}",
                            extend_seed=region.seed)
    X = locs.X_tilde
    spread = X.max(axis=0) - X.min(axis=0)
    keep = spread > 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0))
    names = locs.names()
    dropped = tuple(names[j] for j in np.flatnonzero(~keep))
    if dropped:
        warnings.warn(f"constant local column(s) dropped: {list(dropped)}", stacklevel=2)
    if not keep.any():
        raise DataError("every column is constant over the region")
    eta = InclusionVector(tuple(int(v) for v in keep))
    fit = project_draws(draws, locs, eta)
    rep = diagnose(draws, fit.gamma_draws(), fit.fitted_point(), locs, predictive=predictive,
                   seed=region.seed, summary_id=f"local-linear:{region.name or region.kind}",
                   tree=False)
    return LocalSummary(region, locs, fit, rep, dropped)
