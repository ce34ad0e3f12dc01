"""Command-line interface.

Every command reads and writes artifacts in a run directory::

    run/meta.json            model provenance
    run/data/                standardized data set
    run/model/               hyperparameters or coefficient draws
    run/draws/               fitted-value draws at the data
    run/summaries/<name>/    summary spec, point estimate, projected draws
    run/diagnostics/<name>.json
    run/plots/<name>.csv
    run/search/history.json
    run/local/report.json

Options may also come from a flat YAML file given by ``--config``; flags
given on the command line win. ``POSTSUM_SEED`` overrides the seed unless
``--seed`` is passed explicitly.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import __version__
from .additive import add_interaction, additive_terms, fit_additive, project_additive
from .core import (SCHEMA_VERSION, DataError, Dataset, PosteriorDraws, _write_matrix,
                   load_crime, load_dataset, load_dataset_artifact, load_draws,
                   posterior_mean_fit, save_dataset, save_draws, write_json)
from .diagnostics import QUANTILES, diagnose
from .linear import (InclusionVector, adaptive_lasso_path, project_draws, refit_posterior)

log = logging.getLogger("postsum")

SEED_ENV = "POSTSUM_SEED"
SUMMARY_KINDS = ("linear", "sparse-linear", "additive", "partial-additive")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    write_json(path, _clean(obj))


def _csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(v if isinstance(v, str) else "%.17g" % v for v in r) + "\n")


# -- run directory helpers -----------------------------------------------------

class Run:
    def __init__(self, root):
        self.root = Path(root)
        if not (self.root / "meta.json").is_file():
            raise DataError(f"{self.root} is not a run directory (no meta.json)")

    @property
    def meta(self) -> dict[str, Any]:
        p = self.root / "meta.json"
        if not p.exists():
            raise DataError(f"{self.root} is not a run directory (no meta.json)")
        return json.loads(p.read_text(encoding="utf-8"))

    def data(self) -> Dataset:
        return load_dataset_artifact(self.root / "data")

    def draws(self) -> PosteriorDraws:
        return load_draws(self.root / "draws")

    def summary_dir(self, name: str) -> Path:
        return self.root / "summaries" / name

    def gp_posterior(self):
        from .gp import GpHyperparameters, GpPosterior

        meta = self.meta
        if meta.get("model") != "gp":
            raise DataError("local summaries need a GP run")
        hyper = GpHyperparameters.from_dict(meta["hyperparameters"])
        ch = meta["chain"]
        return GpPosterior(self.data(), hyper).run(meta["M"], meta["seed"], burn_in=ch["burn_in"],
                                                   thin=ch["thin"], chains=ch["chains"])


def _resolve_data(args) -> Dataset:
    if args.data in ("builtin:crime", "crime"):
        return load_crime(standardize=True)
    if not args.response:
        raise UsageError("--response is required with --data")
    logs = [c for c in (args.log_columns or "").split(",") if c]
    return load_dataset(args.data, args.response, log_columns=logs, standardize=args.standardize)


def _seed(args) -> int:
    return int(args.seed)


# -- commands -------------------------------------------------------------------

def cmd_fit_gp(args) -> dict:
    from .gp import fit_gp, sample_posterior

    data = _resolve_data(args)
    out = Path(args.out)
    hyper = fit_gp(data, linear=not args.no_linear, budget=args.budget, n_starts=args.starts)
    draws = sample_posterior(data, hyper, M=args.draws, seed=_seed(args), burn_in=args.burn_in,
                             thin=args.thin, chains=args.chains)
    save_dataset(data, out / "data")
    save_draws(draws, out / "draws", column_names=data.column_names,
               hyperparameters=hyper.to_dict())
    meta = {"schema_version": SCHEMA_VERSION, "version": __version__, "model": "gp",
            "seed": _seed(args), "M": args.draws, "n": data.n, "p": data.p,
            "column_names": list(data.column_names), "hyperparameters": hyper.to_dict(),
            "kernel": "squared-exponential" + ("" if args.no_linear else " + linear"),
            "chain": {"burn_in": args.burn_in, "thin": args.thin, "chains": args.chains}}
    _json(out / "meta.json", meta)
    _json(out / "model" / "gp.json", hyper.to_dict())
    return {"command": "fit-gp", "out": str(out), "n": data.n, "p": data.p, "M": args.draws,
            "sigma2_median": float(np.median(draws.sigma2_draws))}


def cmd_fit_horseshoe(args) -> dict:
    from .horseshoe import sample_horseshoe, save_linear_posterior

    data = _resolve_data(args)
    out = Path(args.out)
    post = sample_horseshoe(data, M=args.draws, burn_in=args.burn_in, seed=_seed(args),
                            chains=args.chains)
    save_dataset(data, out / "data")
    save_linear_posterior(post, out / "model")
    save_draws(post.to_posterior_draws(data), out / "draws", column_names=data.column_names)
    _json(out / "meta.json", {"schema_version": SCHEMA_VERSION, "version": __version__,
                              "model": "horseshoe", "seed": _seed(args), "M": args.draws,
                              "n": data.n, "p": data.p, "column_names": list(data.column_names),
                              "chain": {"burn_in": args.burn_in, "chains": args.chains}})
    names = data.column_names
    return {"command": "fit-horseshoe", "out": str(out), "M": args.draws,
            "beta_bar": {names[j]: float(b) for j, b in enumerate(post.beta_bar)}}


def _parse_columns(spec: str | None, names) -> list[int]:
    if not spec:
        return []
    idx = []
    for c in spec.split(","):
        c = c.strip()
        if c not in names:
            raise DataError(f"unknown column {c!r}")
        idx.append(names.index(c))
    return sorted(set(idx))


def _parse_pairs(spec: str | None, names) -> list[tuple[int, int]]:
    if not spec:
        return []
    pairs = []
    for item in spec.split(","):
        parts = item.split(":")
        if len(parts) != 2:
            raise UsageError(f"pairs look like a:b, got {item!r}")
        a, b = _parse_columns(parts[0], names)[0], _parse_columns(parts[1], names)[0]
        pairs.append((min(a, b), max(a, b)))
    return pairs


def _adaptive_weights(run: Run, draws, locs, data) -> np.ndarray:
    """|posterior mean coefficient|: horseshoe draws when present, else the
    full linear projection of the fitted-value draws."""
    if run.meta.get("model") == "horseshoe":
        from .horseshoe import load_linear_posterior

        return np.abs(load_linear_posterior(run.root / "model").beta_bar)
    return np.abs(project_draws(draws, locs).point)


def build_summary(run: Run, spec: dict[str, Any]):
    """Recreate a summary from its spec; returns (fit, gamma_draws, gamma_point, extra)."""
    data, draws = run.data(), run.draws()
    locs = data.locations()
    names = list(data.column_names)
    kind = spec["kind"]
    extra: dict[str, Any] = {}
    if kind == "linear":
        cols = spec.get("columns") or list(range(data.p))
        fit = project_draws(draws, locs, InclusionVector.from_indices(cols, data.p))
        return fit, fit.gamma_draws(), fit.fitted_point(), extra
    if kind == "sparse-linear":
        w = _adaptive_weights(run, draws, locs, data)
        path = adaptive_lasso_path(posterior_mean_fit(draws), locs, w,
                                   n_lambdas=spec.get("n_lambdas", 100))
        extra["path"] = path
        k = spec.get("support_size")
        if k is None:
            return None, None, None, extra
        eta = path.support_of_size(int(k))
        if eta is None:
            sizes = sorted({s["size"] for s in path.supports()})
            raise DataError(f"no support of size {k} on the path; available sizes {sizes}")
        fit = project_draws(draws, locs, eta)
        return fit, fit.gamma_draws(), fit.fitted_point(), extra
    terms = additive_terms(locs, basis_dim=spec.get("basis_dim", 10))
    if kind == "partial-additive":
        pairs = [tuple(p) for p in spec.get("pairs", [])]
        if not pairs:
            raise UsageError("partial-additive needs --pairs")
        for pr in pairs:
            terms = add_interaction(terms, pr, locs, basis_dim=spec.get("bivariate_dim", 30))
    fit = project_additive(draws, fit_additive(posterior_mean_fit(draws), terms, locs))
    extra["names"] = names
    return fit, fit.gamma_draws(), fit.fitted_point(), extra


def _summary_name(spec, data) -> str:
    kind = spec["kind"]
    names = data.column_names
    if kind == "sparse-linear" and spec.get("support_size") is not None:
        return f"sparse-linear-k{spec['support_size']}"
    if kind == "partial-additive":
        return "partial-additive-" + "-".join(f"{names[a]}.{names[b]}" for a, b in spec["pairs"])
    return kind


def _quantile_row(a) -> list[float]:
    return list(np.percentile(a, QUANTILES))


def _write_linear(sdir: Path, fit, plot: Path) -> dict:
    ci = fit.credible_intervals()
    cols = list(fit.column_names)
    draws = np.column_stack([fit.intercept_draws, fit.projected_draws]) if fit.intercept \
        else fit.projected_draws
    _write_matrix(sdir / "projected_draws.csv", draws)
    body = {"columns": (["(intercept)"] if fit.intercept else []) + cols,
            "intercept_point": fit.intercept_point,
            "point": {c: float(b) for c, b in zip(cols, fit.point)},
            "interval_95": {c: list(r) for c, r in zip(cols, ci)}}
    _csv(plot, ["column", "point"] + [f"q{q:g}" for q in QUANTILES],
         [[c, float(b)] + _quantile_row(fit.projected_draws[:, j])
          for j, (c, b) in enumerate(zip(cols, fit.point))])
    return body


def _write_additive(sdir: Path, fit, plot: Path, grid_points: int = 50) -> dict:
    _write_matrix(sdir / "coef_draws.csv", fit.coef_draws)
    X = fit.locations.X_tilde
    names = fit.locations.names()
    rows = []
    for j, t in enumerate(fit.terms):
        if t.kind != "univariate":
            continue
        c = t.columns[0]
        g = np.linspace(X[:, c].min(), X[:, c].max(), grid_points)
        pt, lo, hi = fit.term_curve(j, g[:, None])
        rows += [[t.name, float(a), float(b), float(l), float(h)] for a, b, l, h in zip(g, pt, lo, hi)]
    _csv(plot, ["term", "x", "point", "lo95", "hi95"], rows)
    return {"terms": [{"name": t.name, "kind": t.kind,
                       "columns": [names[c] for c in t.columns], "basis_dim": t.basis_dim,
                       "lambda": float(l)} for t, l in zip(fit.terms, fit.lambdas)],
            "alpha": fit.alpha, "gcv": fit.gcv, "edf": fit.edf}


def _diagnostics(run: Run, name, draws, gamma_draws, gamma_point, args) -> dict:
    data = run.data()
    y = data.y if args.observed_y else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = diagnose(draws, gamma_draws, gamma_point, data.locations(), y_tilde=y,
                       predictive=args.predictive, seed=_seed(args), summary_id=name,
                       max_depth=args.max_depth)
    _json(run.root / "diagnostics" / f"{name}.json", rep.to_dict())
    cols = [rep.r2_draws]
    header = ["r2"]
    if rep.phi is not None and rep.phi.values.size == rep.r2.values.size:
        cols.append(rep.phi.values)
        header.append("phi")
    _csv(run.root / "plots" / f"{name}_metrics.csv", header, np.column_stack(cols).tolist())
    return rep.to_dict()


def cmd_summarize(args) -> dict:
    run = Run(args.draws)
    data = run.data()
    names = list(data.column_names)
    spec: dict[str, Any] = {"kind": args.kind, "basis_dim": args.basis_dim,
                            "bivariate_dim": args.bivariate_dim}
    if args.kind == "linear" and args.columns:
        spec["columns"] = _parse_columns(args.columns, names)
    if args.kind == "sparse-linear":
        spec["support_size"] = args.support_size
        spec["n_lambdas"] = args.n_lambdas
    if args.kind == "partial-additive":
        spec["pairs"] = [list(p) for p in _parse_pairs(args.pairs, names)]
    name = args.name or _summary_name(spec, data)
    sdir = run.summary_dir(name)
    fit, G, g0, extra = build_summary(run, spec)
    _json(sdir / "spec.json", spec)
    result: dict[str, Any] = {"command": "summarize", "summary": name}
    if "path" in extra and (args.path or fit is None):
        path = extra["path"]
        _json(sdir / "path.json", path.report())
        draws = run.draws()
        locs = data.locations()
        rows = []
        for s in path.supports():
            f = project_draws(draws, locs, s["eta"])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep = diagnose(draws, f.gamma_draws(), f.fitted_point(), locs,
                               y_tilde=data.y if args.observed_y else None, tree=False)
            row = [float(s["size"]), s["lambda"]] + _quantile_row(rep.r2_draws)
            if rep.phi is not None:
                row += _quantile_row(rep.phi_draws)
            rows.append(row)
        header = ["size", "lambda"] + [f"r2_q{q:g}" for q in QUANTILES]
        if args.observed_y:
            header += [f"phi_q{q:g}" for q in QUANTILES]
        _csv(run.root / "plots" / f"{name}_sparsity.csv", header, rows)
        result["supports"] = [{"size": s["size"], "columns": [names[j] for j in s["eta"].indices]}
                              for s in path.supports()]
    if fit is None:
        return result
    plot = run.root / "plots" / f"{name}.csv"
    body = _write_additive(sdir, fit, plot) if args.kind in ("additive", "partial-additive") \
        else _write_linear(sdir, fit, plot)
    _json(sdir / "summary.json", body)
    diag = _diagnostics(run, name, run.draws(), G, g0, args)
    result["r2_quantiles"] = diag["r2"]["quantiles"]
    if diag["phi"]:
        result["phi_quantiles"] = diag["phi"]["quantiles"]
    return result


def cmd_diagnose(args) -> dict:
    run = Run(args.draws)
    sdir = run.summary_dir(args.summary)
    if not (sdir / "spec.json").exists():
        raise DataError(f"no summary named {args.summary!r} in {run.root}")
    spec = json.loads((sdir / "spec.json").read_text(encoding="utf-8"))
    fit, G, g0, _ = build_summary(run, spec)
    if fit is None:
        raise DataError("sparse-linear summaries need a support size to diagnose")
    diag = _diagnostics(run, args.summary, run.draws(), G, g0, args)
    out = {"command": "diagnose", "summary": args.summary, "r2_quantiles": diag["r2"]["quantiles"]}
    if diag["tree"]:
        out["candidate_pairs"] = diag["tree"]["candidate_pairs"][:5]
    return out


def cmd_search(args) -> dict:
    from .search import run_summary_search

    run = Run(args.draws)
    data = run.data()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        state = run_summary_search(run.draws(), data.locations(), r2_threshold=args.threshold,
                                   max_rounds=args.max_rounds,
                                   y_tilde=data.y if args.observed_y else None,
                                   basis_dim=args.basis_dim, bivariate_dim=args.bivariate_dim,
                                   workers=args.threads)
    doc = state.to_dict()
    _json(run.root / "search" / "history.json", doc)
    return {"command": "search", "stop_reason": state.stop_reason,
            "trajectory": [{"spec": e.spec, "r2_median": e.r2_median} for e in state.history]}


def _parse_bounds(spec: str | None, names) -> dict[int, tuple[float, float]]:
    out = {}
    for item in (spec or "").split(","):
        if not item:
            continue
        parts = item.rsplit(":", 2)
        if len(parts) != 3:
            raise UsageError(f"bounds look like col:lo:hi, got {item!r}")
        out[_parse_columns(parts[0], names)[0]] = (float(parts[1]), float(parts[2]))
    return out


def _parse_anchor(spec: str | None, names) -> dict[int, float]:
    out = {}
    for item in (spec or "").split(","):
        if not item:
            continue
        parts = item.rsplit(":", 1)
        if len(parts) != 2:
            raise UsageError(f"anchor looks like col:value, got {item!r}")
        out[_parse_columns(parts[0], names)[0]] = float(parts[1])
    return out


def cmd_local(args) -> dict:
    from .search import LocalRegion, local_linear_summary

    run = Run(args.draws)
    data = run.data()
    names = list(data.column_names)
    ref = _parse_bounds(args.reference_bounds, names) or None
    region = LocalRegion(kind=args.kind, bounds=_parse_bounds(args.bounds, names),
                         anchor=_parse_anchor(args.anchor, names), n_tilde=args.n_tilde,
                         covariate_model=args.covariate_model, seed=_seed(args),
                         reference_bounds=ref, name=args.name)
    geo = _parse_columns(args.geo, names)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = local_linear_summary(run.gp_posterior(), region, data, geo, predictive=args.predictive)
    report_path = run.root / "local" / "report.json"
    report = json.loads(report_path.read_text(encoding="utf-8")) if report_path.exists() else {}
    entry = res.to_dict()
    entry["warnings"] = sorted({str(w.message) for w in caught})
    report[args.name] = entry
    _json(report_path, report)
    return {"command": "local", "region": args.name, "n_tilde": res.locations.n_tilde,
            "r2_quantiles": entry["diagnostics"]["r2"]["quantiles"],
            "dropped": entry["dropped"]}


def cmd_replicate(args) -> dict:
    from .simulations import PipelineConfig, SimSpec, replicate, spec_dict, write_replication_table

    spec = SimSpec(args.study, n=args.n, sigma2=args.sigma2, rho=args.rho,
                   replications=args.reps, base_seed=_seed(args))
    config = PipelineConfig(M=args.draws, burn_in=args.burn_in, linear_kernel=args.linear_kernel,
                            eb_budget=args.budget, eb_starts=args.starts)
    out = Path(args.out)
    rows = replicate(spec, config, workers=args.threads,
                     progress=lambda r: log.info("replicate %s: %s", r["replicate"], r["status"]))
    table = write_replication_table(rows, out / "replication.csv")
    ok = [r for r in rows if r["status"] == "ok"]
    hits = sum(r["best_pair"] == "x1:x2" for r in ok)
    _json(out / "meta.json", {"schema_version": SCHEMA_VERSION, "version": __version__,
                              "spec": spec_dict(spec),
                              "pipeline": {k: getattr(config, k) for k in config.__dataclass_fields__}})
    summary = {"command": "replicate", "table": str(table), "replicates": len(rows),
               "failed": len(rows) - len(ok)}
    if ok:
        summary["r2_additive_median"] = float(np.median([r["r2_additive"] for r in ok]))
        summary["r2_x1x2_median"] = float(np.nanmedian([r["r2_x1x2"] for r in ok]))
        summary["top_pair_x1x2"] = f"{hits}/{len(ok)}"
    return summary


def cmd_compare_refit(args) -> dict:
    run = Run(args.draws)
    data = run.data()
    names = list(data.column_names)
    draws = run.draws()
    locs = data.locations()
    if args.columns:
        eta = InclusionVector.from_indices(_parse_columns(args.columns, names), data.p)
    elif args.support_size:
        _, _, _, extra = build_summary(run, {"kind": "sparse-linear", "support_size": None})
        eta = extra["path"].support_of_size(args.support_size)
        if eta is None:
            raise DataError(f"no support of size {args.support_size} on the path")
    else:
        raise UsageError("compare-refit needs --columns or --support-size")
    proj = project_draws(draws, locs, eta)
    # comparison-only: double dipping, the response is reused after selection
    ref_b = refit_posterior(data, eta, draws.M, _seed(args))
    pc = proj.credible_intervals()
    rc = np.percentile(ref_b, [2.5, 97.5], axis=0).T
    cols = [names[j] for j in eta.indices]
    name = args.name or f"compare-refit-k{eta.k}"
    rows = [[c, float(proj.point[j]), pc[j, 0], pc[j, 1], float(ref_b[:, j].mean()), rc[j, 0], rc[j, 1]]
            for j, c in enumerate(cols)]
    _csv(run.root / "plots" / f"{name}.csv",
         ["column", "projected_point", "projected_lo95", "projected_hi95",
          "refit_mean", "refit_lo95", "refit_hi95"], rows)
    wp = float(np.mean(pc[:, 1] - pc[:, 0]))
    wr = float(np.mean(rc[:, 1] - rc[:, 0]))
    _json(run.root / "summaries" / name / "comparison.json",
          {"label": "comparison-only: double dipping", "columns": cols,
           "mean_width_projected": wp, "mean_width_refit": wr})
    return {"command": "compare-refit", "columns": cols, "mean_width_projected": wp,
            "mean_width_refit": wr}


# -- parser ---------------------------------------------------------------------

def _common(p, seed=True, out=False, run=False):
    p.add_argument("--config", help="flat YAML file of option defaults")
    p.add_argument("--threads", type=int, default=1, help="maximum worker count")
    p.add_argument("-v", "--verbose", action="store_true")
    if seed:
        p.add_argument("--seed", type=int, default=None)
    if out:
        p.add_argument("--out", required=False, default=None)
    if run:
        p.add_argument("--draws", required=False, default=None, metavar="RUN",
                       help="run directory produced by fit-gp or fit-horseshoe")


def _data_opts(p):
    p.add_argument("--data", default=None, help="CSV path, or builtin:crime")
    p.add_argument("--response", default=None)
    p.add_argument("--log-columns", default=None, help="comma-separated columns to log")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--chains", type=int, default=1)


def _diag_opts(p):
    p.add_argument("--observed-y", action="store_true",
                   help="compute phi against the observed response")
    p.add_argument("--predictive", action="store_true",
                   help="compute phi against posterior-predictive replicates")
    p.add_argument("--max-depth", type=int, default=4)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="postsum", description="Posterior summaries of Bayesian regression fits")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit-gp", help="fit a GP regression and store posterior draws")
    _common(p, out=True)
    _data_opts(p)
    p.add_argument("--draws", type=int, default=1000, help="retained draws M")
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--no-linear", action="store_true", help="squared-exponential kernel only")
    p.add_argument("--budget", type=int, default=200)
    p.add_argument("--starts", type=int, default=3)
    p.set_defaults(func=cmd_fit_gp, required=("data", "out"), burn_in_default=100)

    p = sub.add_parser("fit-horseshoe", help="fit a horseshoe linear regression")
    _common(p, out=True)
    _data_opts(p)
    p.add_argument("--draws", type=int, default=5000)
    p.set_defaults(func=cmd_fit_horseshoe, required=("data", "out"), burn_in_default=1000)

    p = sub.add_parser("summarize", help="fit a summary and its projected posterior")
    p.add_argument("kind", choices=SUMMARY_KINDS)
    _common(p, run=True)
    _diag_opts(p)
    p.add_argument("--name", default=None)
    p.add_argument("--columns", default=None, help="linear: comma-separated columns")
    p.add_argument("--path", action="store_true", help="sparse-linear: emit the path report")
    p.add_argument("--support-size", type=int, default=None)
    p.add_argument("--n-lambdas", type=int, default=100)
    p.add_argument("--pairs", default=None, help="partial-additive: a:b[,c:d]")
    p.add_argument("--basis-dim", type=int, default=10)
    p.add_argument("--bivariate-dim", type=int, default=30)
    p.set_defaults(func=cmd_summarize, required=("draws",))

    p = sub.add_parser("diagnose", help="recompute diagnostics for a stored summary")
    _common(p, run=True)
    _diag_opts(p)
    p.add_argument("--summary", required=False, default=None)
    p.set_defaults(func=cmd_diagnose, required=("draws", "summary"))

    p = sub.add_parser("search", help="iterative linear -> additive -> interaction search")
    _common(p, run=True)
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--max-rounds", type=int, default=3)
    p.add_argument("--observed-y", action="store_true")
    p.add_argument("--basis-dim", type=int, default=10)
    p.add_argument("--bivariate-dim", type=int, default=30)
    p.set_defaults(func=cmd_search, required=("draws",))

    p = sub.add_parser("local", help="local linear summary over a region")
    _common(p, run=True)
    p.add_argument("--name", default="region")
    p.add_argument("--kind", choices=("box", "point", "observed-subset"), default="box")
    p.add_argument("--geo", default=None, help="comma-separated geographic columns")
    p.add_argument("--bounds", default=None, help="col:lo:hi[,col:lo:hi]")
    p.add_argument("--anchor", default=None, help="col:value[,col:value]")
    p.add_argument("--reference-bounds", default=None, help="rows used for covariate moments")
    p.add_argument("--n-tilde", type=int, default=1000)
    p.add_argument("--covariate-model", choices=("empirical-gaussian", "fixed"),
                   default="empirical-gaussian")
    p.add_argument("--predictive", action="store_true")
    p.set_defaults(func=cmd_local, required=("draws",))

    p = sub.add_parser("replicate", help="run a simulation study repeatedly")
    _common(p, out=True)
    p.add_argument("--study", choices=("sigmoid-grid", "interaction-collinear"),
                   default="interaction-collinear")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--sigma2", type=float, default=None)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--budget", type=int, default=200)
    p.add_argument("--starts", type=int, default=3)
    p.add_argument("--linear-kernel", action="store_true")
    p.set_defaults(func=cmd_replicate, required=("out",))

    p = sub.add_parser("compare-refit",
                       help="projected vs refitted intervals (comparison-only: double dipping)")
    _common(p, run=True)
    p.add_argument("--columns", default=None)
    p.add_argument("--support-size", type=int, default=None)
    p.add_argument("--name", default=None)
    p.set_defaults(func=cmd_compare_refit, required=("draws",))
    return parser


def _config_defaults(path: str, sub: argparse.ArgumentParser) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise UsageError("config must be a mapping of flat keys")
    known = {a.dest for a in sub._actions}
    out = {}
    for k, v in cfg.items():
        key = str(k).replace("-", "_")
        if key not in known or key in ("config", "help"):
            raise UsageError(f"unknown config key {k!r}")
        if isinstance(v, (dict, list)):
            raise UsageError(f"config key {k!r} must be a scalar")
        out[key] = v
    return out


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        raise UsageError("no command given")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    if getattr(args, "config", None):
        sub.set_defaults(**_config_defaults(args.config, sub))
        args = parser.parse_args(argv)
    explicit_seed = "--seed" in argv or any(a.startswith("--seed=") for a in argv)
    if hasattr(args, "seed"):
        if not explicit_seed and os.environ.get(SEED_ENV):
            try:
                args.seed = int(os.environ[SEED_ENV])
            except ValueError as exc:
                raise UsageError(f"{SEED_ENV} must be an integer") from exc
        if args.seed is None:
            args.seed = 0
    if hasattr(args, "burn_in") and args.burn_in is None:
        args.burn_in = getattr(args, "burn_in_default", 100)
    for key in args.required:
        if getattr(args, key, None) in (None, ""):
            raise UsageError(f"--{key.replace('_', '-')} is required")
    _validate(args)
    return args


def _validate(args) -> None:
    for key in ("draws", "burn_in", "reps", "n_tilde", "max_rounds", "threads", "starts",
                "budget", "chains", "thin", "basis_dim", "bivariate_dim", "n_lambdas"):
        v = getattr(args, key, None)
        if isinstance(v, bool) or not isinstance(v, int):
            continue
        lo = 0 if key == "burn_in" else 1
        if v < lo:
            raise UsageError(f"--{key.replace('_', '-')} must be at least {lo}")
    if getattr(args, "command", "") == "fit-gp" or getattr(args, "command", "") == "fit-horseshoe":
        if args.draws < 2:
            raise UsageError("--draws must be at least 2")
    if getattr(args, "support_size", None) is not None and args.support_size < 1:
        raise UsageError("--support-size must be positive")


def _render(result: dict) -> str:
    lines = []
    for k, v in result.items():
        if isinstance(v, dict) and all(isinstance(x, (int, float)) for x in v.values()):
            v = ", ".join(f"{a}={b:.4g}" for a, b in v.items())
        elif isinstance(v, list) and v and isinstance(v[0], dict):
            lines.append(f"{k}:")
            lines += [f"  {json.dumps(_clean(e), sort_keys=True)}" for e in v]
            continue
        lines.append(f"{k}: {v}")
    return "\n".join(lines)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        result = args.func(args)
    except UsageError as exc:
        sys.stderr.write(json.dumps({"error": "usage", "message": str(exc), "command": command},
                                    sort_keys=True) + "\n")
        return 2
    except (DataError, ValueError, FileNotFoundError, ArithmeticError, RuntimeError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                     "command": command}, sort_keys=True) + "\n")
        return 1
    print(_render(result))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
