"""Summary diagnostics: R^2_gamma, phi_gamma, and the residual regression tree."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import DataError, PosteriorDraws, PredictiveLocations

QUANTILES = (2.5, 25.0, 50.0, 75.0, 97.5)


@dataclass(frozen=True)
class MetricPosterior:
    """Draw-wise values of a diagnostic; undefined draws are dropped and counted."""

    values: np.ndarray
    excluded: int = 0

    @property
    def median(self) -> float:
        return float(np.median(self.values)) if self.values.size else float("nan")

    def quantiles(self, qs=QUANTILES) -> dict[str, float]:
        if not self.values.size:
            return {f"{q:g}": float("nan") for q in qs}
        vals = np.percentile(self.values, qs)
        return {f"{q:g}": float(v) for q, v in zip(qs, vals)}

    def to_dict(self) -> dict[str, Any]:
        return {"quantiles": self.quantiles(), "mean": float(np.mean(self.values)) if self.values.size else None,
                "n_draws": int(self.values.size), "excluded": int(self.excluded)}


def _as_matrix(a) -> np.ndarray:
    return np.atleast_2d(np.asarray(a, dtype=float))


def r2_values(f, gamma, weights=None) -> np.ndarray:
    """Row-wise summary R^2; NaN where the row of ``f`` is constant."""
    f = _as_matrix(f)
    g = _as_matrix(gamma)
    w = np.ones(f.shape[1]) if weights is None else np.asarray(weights, float)
    fbar = (f @ w) / w.sum()
    num = ((f - g) ** 2) @ w
    den = ((f - fbar[:, None]) ** 2) @ w
    scale = np.maximum(np.max(np.abs(f), axis=1), 1e-300) ** 2 * w.sum()
    ok = den > 1e-24 * scale
    out = np.full(f.shape[0], np.nan)
    out[ok] = 1.0 - num[ok] / den[ok]
    return out


def summary_r2(draws: PosteriorDraws | np.ndarray, gamma_draws, weights=None) -> MetricPosterior:
    """Per-draw fraction of the model's predictive variance the summary explains.

    Draw k of the summary is paired with draw k of the model.
    """
    F = draws.f_draws if isinstance(draws, PosteriorDraws) else _as_matrix(draws)
    G = _as_matrix(gamma_draws)
    if F.shape != G.shape:
        raise DataError(f"shape mismatch: draws {F.shape}, summary draws {G.shape}")
    vals = r2_values(F, G, weights)
    bad = int(np.sum(~np.isfinite(vals)))
    if bad:
        warnings.warn(f"{bad} constant draw(s) excluded from R^2", stacklevel=2)
    return MetricPosterior(vals[np.isfinite(vals)], bad)


def posterior_predictive(draws: PosteriorDraws, seed: int) -> np.ndarray:
    """One predictive replicate per draw: f_k + sigma_k * N(0, 1)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    z = rng.standard_normal(draws.f_draws.shape)
    return draws.f_draws + np.sqrt(draws.sigma2_draws)[:, None] * z


def phi_gamma(gamma_draws, sigma2_draws, y_tilde=None, predictive_draws=None,
              weights=None) -> MetricPosterior:
    """Relative inflation of the residual scale when the summary replaces the model.

    ``y_tilde`` is the observed response at the locations; alternatively
    ``predictive_draws`` supplies one predictive replicate per draw.
    """
    G = _as_matrix(gamma_draws)
    s2 = np.asarray(sigma2_draws, dtype=float).reshape(-1)
    if s2.shape[0] != G.shape[0]:
        raise DataError("need one sigma2 draw per summary draw")
    if y_tilde is not None:
        Y = np.asarray(y_tilde, dtype=float).reshape(1, -1)
    elif predictive_draws is not None:
        Y = _as_matrix(predictive_draws)
        if Y.shape != G.shape:
            raise DataError("predictive draws must match the summary draws")
    else:
        raise DataError("phi_gamma needs observed y_tilde or posterior-predictive draws")
    if Y.shape[1] != G.shape[1]:
        raise DataError("response length does not match the summary draws")
    w = np.ones(G.shape[1]) if weights is None else np.asarray(weights, float)
    rmse = np.sqrt(((Y - G) ** 2) @ w / w.sum())
    return MetricPosterior(rmse / np.sqrt(s2) - 1.0, 0)


# -- residual tree -------------------------------------------------------------

@dataclass
class TreeNode:
    n_points: int
    mean_residual: float
    sse: float
    depth: int
    split_column: int | None = None
    split_value: float | None = None
    gain: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self, names=None) -> dict[str, Any]:
        d: dict[str, Any] = {"n_points": self.n_points, "mean_residual": self.mean_residual,
                             "sse": self.sse}
        if not self.is_leaf:
            d["split_column"] = self.split_column
            if names is not None:
                d["split_name"] = names[self.split_column]
            d["split_value"] = self.split_value
            d["gain"] = self.gain
            d["left"] = self.left.to_dict(names)
            d["right"] = self.right.to_dict(names)
        return d


@dataclass
class ResidualTree:
    root: TreeNode
    max_depth: int
    min_leaf: int
    candidate_pairs: list[tuple[tuple[int, int], float]] = field(default_factory=list)
    column_names: tuple[str, ...] | None = None

    def nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.extend([node.right, node.left])

    def leaves(self):
        return [n for n in self.nodes() if n.is_leaf]

    def to_dict(self) -> dict[str, Any]:
        names = self.column_names
        return {
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "root": self.root.to_dict(names),
            "candidate_pairs": [
                {"pair": list(p), "names": [names[p[0]], names[p[1]]] if names else None, "score": s}
                for p, s in self.candidate_pairs
            ],
        }

    def render(self) -> str:
        names = self.column_names
        lines = []

        def walk(node, indent):
            pad = "  " * indent
            if node.is_leaf:
                lines.append(f"{pad}leaf n={node.n_points} mean={node.mean_residual:+.4g}")
                return
            col = names[node.split_column] if names else f"x{node.split_column + 1}"
            lines.append(f"{pad}{col} < {node.split_value:.4g}  (n={node.n_points}, gain={node.gain:.4g})")
            walk(node.left, indent + 1)
            walk(node.right, indent + 1)

        walk(self.root, 0)
        return "\n".join(lines)


def best_split(X, r, min_leaf):
    """Exhaustive search over midpoints of sorted unique values.

    Returns ``(column, threshold, children_sse)`` or None. Ties go to the
    lowest column index, then the lowest threshold.
    """
    n, p = X.shape
    total = float(r @ r)
    best = None
    tol = 1e-12 * max(total, 1e-300)
    for j in range(p):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        rs = r[order]
        cs = np.cumsum(rs)
        cq = np.cumsum(rs * rs)
        S, Q = cs[-1], cq[-1]
        nl = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not valid.any():
            continue
        sl, ql = cs[:-1], cq[:-1]
        sse = (ql - sl ** 2 / nl) + ((Q - ql) - (S - sl) ** 2 / (n - nl))
        sse = np.where(valid, sse, np.inf)
        i = int(np.argmin(sse))
        # lowest threshold among numerical ties
        i = int(np.flatnonzero(sse <= sse[i] + tol)[0])
        if best is None or sse[i] < best[2] - tol:
            best = (j, 0.5 * (xs[i] + xs[i + 1]), float(sse[i]))
    return best


def fit_residual_tree(residuals, locations: PredictiveLocations | np.ndarray,
                      max_depth: int = 4, min_leaf: int | None = None) -> ResidualTree:
    """Greedy CART regression tree on summary residuals.

    Splits only when the within-children sum of squares strictly drops.
    ``candidate_pairs`` ranks covariate pairs that split adjacent parent and
    child nodes by the summed sum-of-squares reduction of those two splits.
    """
    if isinstance(locations, PredictiveLocations):
        X, names = locations.X_tilde, locations.names()
    else:
        X, names = np.atleast_2d(np.asarray(locations, float)), None
    r = np.asarray(residuals, dtype=float).reshape(-1)
    n = r.shape[0]
    if X.shape[0] != n:
        raise DataError("residuals and locations differ in length")
    if min_leaf is None:
        min_leaf = max(10, n // 200)
    if n < 2 * min_leaf:
        raise DataError(f"need at least {2 * min_leaf} points for min_leaf={min_leaf}")

    def grow(idx, depth):
        rr = r[idx]
        mu = float(rr.mean())
        sse = float(np.sum((rr - mu) ** 2))
        node = TreeNode(n_points=int(idx.size), mean_residual=mu, sse=sse, depth=depth)
        if depth >= max_depth or sse <= 1e-24 * max(1.0, float(rr @ rr)):
            return node
        split = best_split(X[idx], rr - mu, min_leaf)
        if split is None:
            return node
        j, thr, child_sse = split
        if not child_sse < sse * (1 - 1e-12):
            return node
        mask = X[idx, j] < thr
        node.split_column, node.split_value, node.gain = j, float(thr), sse - child_sse
        node.left = grow(idx[mask], depth + 1)
        node.right = grow(idx[~mask], depth + 1)
        return node

    root = grow(np.arange(n), 0)
    scores: dict[tuple[int, int], float] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            continue
        for child in (node.left, node.right):
            if not child.is_leaf and child.split_column != node.split_column:
                pair = tuple(sorted((node.split_column, child.split_column)))
                scores[pair] = scores.get(pair, 0.0) + node.gain + child.gain
            stack.append(child)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ResidualTree(root, max_depth, min_leaf, ranked, names)


# -- report --------------------------------------------------------------------

@dataclass
class DiagnosticsReport:
    r2: MetricPosterior
    phi: MetricPosterior | None
    residuals: np.ndarray
    tree: ResidualTree | None
    summary_id: str = ""
    r2_point: float = float("nan")
    phi_point: float | None = None
    phi_source: str | None = None

    @property
    def r2_draws(self) -> np.ndarray:
        return self.r2.values

    @property
    def phi_draws(self) -> np.ndarray | None:
        return None if self.phi is None else self.phi.values

    def to_dict(self) -> dict[str, Any]:
        return {
            "summary_id": self.summary_id,
            "r2": self.r2.to_dict(),
            "r2_point": self.r2_point,
            "phi": None if self.phi is None else self.phi.to_dict(),
            "phi_point": self.phi_point,
            "phi_source": self.phi_source,
            "tree": None if self.tree is None else self.tree.to_dict(),
        }


def diagnose(draws: PosteriorDraws, gamma_draws, gamma_point, locations: PredictiveLocations,
             y_tilde=None, predictive: bool = False, seed: int = 0, summary_id: str = "",
             tree: bool = True, max_depth: int = 4, min_leaf: int | None = None) -> DiagnosticsReport:
    """R^2 and phi posteriors, point values, and a residual tree for one summary.

    ``phi`` uses ``y_tilde`` when given, posterior-predictive replicates when
    ``predictive`` is set, and is omitted otherwise.
    """
    from .core import posterior_mean_fit

    w = locations.weights
    f_hat = posterior_mean_fit(draws)
    gamma_point = np.asarray(gamma_point, dtype=float)
    r2 = summary_r2(draws, gamma_draws, w)
    r2_point = float(r2_values(f_hat, gamma_point, w)[0])
    phi = phi_point = source = None
    if y_tilde is not None:
        phi = phi_gamma(gamma_draws, draws.sigma2_draws, y_tilde=y_tilde, weights=w)
        phi_point = float(phi_gamma(gamma_point[None, :], [np.mean(draws.sigma2_draws)],
                                    y_tilde=y_tilde, weights=w).values[0])
        source = "observed"
    elif predictive:
        phi = phi_gamma(gamma_draws, draws.sigma2_draws,
                        predictive_draws=posterior_predictive(draws, seed), weights=w)
        source = "posterior-predictive"
    resid = f_hat - gamma_point
    t = None
    if tree:
        ml = min_leaf if min_leaf is not None else max(10, locations.n_tilde // 200)
        if locations.n_tilde >= 2 * ml:
            t = fit_residual_tree(resid, locations, max_depth=max_depth, min_leaf=ml)
    return DiagnosticsReport(r2, phi, resid, t, summary_id, r2_point, phi_point, source)
