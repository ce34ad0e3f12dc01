"""Bayesian linear regression with a horseshoe prior.

The half-Cauchy local and global scales are written as scale mixtures of
inverse-gamma variables, so every Gibbs conditional is a standard draw:

    beta_j | lambda_j, tau, sigma2 ~ N(0, lambda_j^2 tau^2 sigma2)
    lambda_j^2 | nu_j ~ IG(1/2, 1/nu_j),   nu_j ~ IG(1/2, 1)
    tau^2 | xi ~ IG(1/2, 1/xi),            xi ~ IG(1/2, 1)

The intercept has a flat prior and sigma^2 a Jeffreys prior.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import linalg

from .core import (FLOAT_FMT, SCHEMA_VERSION, DataError, Dataset, PosteriorDraws,
                   _read_matrix, _write_matrix, write_json)


class HorseshoeNumericalError(ArithmeticError):
    """Raised when a scale update overflows; ``state`` holds the last values."""

    def __init__(self, msg: str, state: dict[str, Any]):
        super().__init__(msg)
        self.state = state


@dataclass(frozen=True)
class LinearPosterior:
    beta_draws: np.ndarray
    sigma2_draws: np.ndarray
    intercept_draws: np.ndarray
    seed: int
    column_names: tuple[str, ...] = ()
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.beta_draws.shape[0]

    @property
    def p(self) -> int:
        return self.beta_draws.shape[1]

    @property
    def beta_bar(self) -> np.ndarray:
        return self.beta_draws.mean(axis=0)

    def fitted_draws(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        return self.intercept_draws[:, None] + self.beta_draws @ X.T

    def to_posterior_draws(self, data: Dataset, locations_id: str = "data") -> PosteriorDraws:
        """Fitted values at the data rows as a generic draw artifact."""
        return PosteriorDraws(self.fitted_draws(data.X), self.sigma2_draws,
                              locations_id=locations_id, model_tag="horseshoe",
                              seed=self.seed, meta={"sampler": dict(self.meta)})


def _ig(rng, shape, scale):
    return scale / rng.standard_gamma(shape, size=np.shape(scale))


def _check_standardized(X):
    m = np.abs(X.mean(axis=0))
    s = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.ones(X.shape[1])
    if np.any(m > 1e-6) or np.any(np.abs(s - 1) > 1e-6):
        warnings.warn("covariates are not standardized; horseshoe scales assume unit-scale columns",
                      stacklevel=3)


def _chain(X, y, M, burn_in, rng, prior, prior_var):
    n, p = X.shape
    XtX = X.T @ X
    beta = np.zeros(p)
    alpha = float(y.mean())
    sigma2 = float(np.var(y)) or 1.0
    lam2 = np.ones(p)
    tau2 = 1.0
    nu = np.ones(p)
    xi = 1.0
    out_b = np.empty((M, p))
    out_s = np.empty(M)
    out_a = np.empty(M)
    for it in range(burn_in + M):
        alpha = float(np.mean(y - X @ beta) + np.sqrt(sigma2 / n) * rng.standard_normal())
        r = y - alpha
        prec = 1.0 / (lam2 * tau2) if prior == "horseshoe" else np.full(p, 1.0 / prior_var)
        A = XtX + np.diag(prec)
        try:
            L = linalg.cholesky(A, lower=True)
            mean = linalg.cho_solve((L, True), X.T @ r)
            z = linalg.solve_triangular(L.T, rng.standard_normal(p), lower=False)
        except (linalg.LinAlgError, ValueError) as exc:
            raise HorseshoeNumericalError(f"coefficient update failed at sweep {it}",
                                          {"sweep": it, "lambda2": lam2.tolist(), "tau2": tau2,
                                           "sigma2": sigma2, "alpha": alpha}) from exc
        beta = mean + np.sqrt(sigma2) * z
        resid = r - X @ beta
        sigma2 = float(_ig(rng, (n + p) / 2, (resid @ resid + np.sum(beta ** 2 * prec)) / 2))
        if prior == "horseshoe":
            lam2 = _ig(rng, 1.0, 1.0 / nu + beta ** 2 / (2 * tau2 * sigma2))
            tau2 = float(_ig(rng, (p + 1) / 2, 1.0 / xi + np.sum(beta ** 2 / lam2) / (2 * sigma2)))
            nu = _ig(rng, 1.0, 1.0 + 1.0 / lam2)
            xi = float(_ig(rng, 1.0, 1.0 + 1.0 / tau2))
        vals = np.concatenate([beta, lam2, nu, [tau2, xi, sigma2, alpha]])
        if not np.all(np.isfinite(vals)) or sigma2 <= 0 or tau2 <= 0 or np.any(lam2 <= 0):
            raise HorseshoeNumericalError(
                f"non-finite or non-positive scale at sweep {it}",
                {"sweep": it, "beta": beta.tolist(), "lambda2": lam2.tolist(), "tau2": tau2,
                 "sigma2": sigma2, "nu": nu.tolist(), "xi": xi})
        if it >= burn_in:
            k = it - burn_in
            out_b[k], out_s[k], out_a[k] = beta, sigma2, alpha
    return out_b, out_s, out_a


def sample_horseshoe(data: Dataset, M: int = 5000, burn_in: int = 1000, seed: int = 0,
                     chains: int = 1, prior: str = "horseshoe",
                     prior_var: float = 1e6) -> LinearPosterior:
    """Gibbs sampler for the horseshoe linear model.

    ``prior="gaussian"`` replaces the horseshoe by a fixed
    ``N(0, prior_var * sigma2)`` prior on each coefficient; it exists for
    checking the sampler against closed-form ridge estimates. ``M`` draws
    are kept in total, split evenly across ``chains`` independent chains.
    """
    if prior not in ("horseshoe", "gaussian"):
        raise ValueError(f"unknown prior {prior!r}")
    if data.n < 3:
        raise DataError("horseshoe regression needs at least 3 observations")
    if M < 2:
        raise ValueError("need at least 2 retained draws")
    if chains < 1 or M % chains:
        raise ValueError("M must be a positive multiple of chains")
    X = np.array(data.X)
    y = np.array(data.y)
    _check_standardized(X)
    seqs = np.random.SeedSequence(seed).spawn(chains)
    parts = [_chain(X, y, M // chains, burn_in, np.random.default_rng(s), prior, prior_var)
             for s in seqs]
    B = np.vstack([b for b, _, _ in parts])
    S = np.concatenate([s for _, s, _ in parts])
    A = np.concatenate([a for _, _, a in parts])
    meta = {"prior": prior, "burn_in": burn_in, "chains": chains, "M": M,
            "tau_prior": "half-Cauchy(0, 1)", "lambda_prior": "half-Cauchy(0, 1)",
            "sigma2_prior": "Jeffreys", "intercept_prior": "flat"}
    if prior == "gaussian":
        meta["prior_var"] = prior_var
    return LinearPosterior(B, S, A, seed, tuple(data.column_names), meta)


def save_linear_posterior(post: LinearPosterior, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_matrix(d / "beta_draws.csv", post.beta_draws)
    _write_matrix(d / "sigma2_draws.csv", post.sigma2_draws[:, None])
    _write_matrix(d / "intercept_draws.csv", post.intercept_draws[:, None])
    write_json(d / "meta.json", {"schema_version": SCHEMA_VERSION, "model_tag": "horseshoe",
                                 "M": post.M, "p": post.p, "seed": post.seed,
                                 "column_names": list(post.column_names),
                                 "sampler": post.meta, "float_format": FLOAT_FMT})
    return d


def load_linear_posterior(directory) -> LinearPosterior:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported schema version {meta.get('schema_version')}")
    B = np.atleast_2d(_read_matrix(d / "beta_draws.csv"))
    return LinearPosterior(B, _read_matrix(d / "sigma2_draws.csv").reshape(-1),
                           _read_matrix(d / "intercept_draws.csv").reshape(-1), int(meta["seed"]),
                           tuple(meta["column_names"]), dict(meta["sampler"]))
