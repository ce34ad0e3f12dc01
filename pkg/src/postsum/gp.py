"""Gaussian process regression with a squared-exponential plus linear kernel.

Hyperparameters are set by maximising the marginal likelihood; the noise
variance and the fitted function are then sampled by two-block Gibbs under
Jeffreys' prior on sigma^2. The Gibbs chain runs in the eigenbasis of the
prior covariance, where the conditional for f given sigma^2 factorises, so
one sweep costs O(n) once the basis is computed.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg, optimize

from .core import Dataset, PosteriorDraws, PredictiveLocations

log = logging.getLogger(__name__)

JITTER_START = 1e-8
JITTER_MAX = 1e-4


class GpNumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class GpHyperparameters:
    """Kernel amplitude ``tau2``, length scales ``v``, linear weights ``a``,
    noise ``sigma2``. ``jitter`` is added to the kernel diagonal before any
    factorization; it defaults to ``1e-8 * tau2``."""

    tau2: float
    v: np.ndarray
    a: np.ndarray
    sigma2: float
    jitter: float | None = None

    def __post_init__(self):
        v = np.array(self.v, dtype=float, ndmin=1)
        a = np.array(self.a, dtype=float, ndmin=1)
        v.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "tau2", float(self.tau2))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if self.jitter is None:
            object.__setattr__(self, "jitter", JITTER_START * self.tau2)
        if v.shape != a.shape:
            raise ValueError("v and a must have one entry per covariate")
        if not (self.tau2 > 0 and self.sigma2 > 0 and self.jitter > 0):
            raise ValueError("tau2, sigma2 and jitter must be positive")
        if np.any(v <= 0) or np.any(a < 0):
            raise ValueError("length scales must be positive and linear weights nonnegative")

    @property
    def p(self) -> int:
        return self.v.shape[0]

    def to_dict(self) -> dict:
        return {"tau2": self.tau2, "v": self.v.tolist(), "a": self.a.tolist(),
                "sigma2": self.sigma2, "jitter": self.jitter}

    @classmethod
    def from_dict(cls, d) -> "GpHyperparameters":
        return cls(d["tau2"], d["v"], d["a"], d["sigma2"], d.get("jitter"))


def default_hyperparameters(data: Dataset, linear: bool = True) -> GpHyperparameters:
    """Data-scaled starting values for the marginal-likelihood search."""
    vy = float(np.var(data.y))
    vx = np.var(data.X, axis=0)
    vx = np.where(vx > 0, vx, 1.0)
    p = data.p
    a = 0.05 * vy / (vx * p) if linear else np.zeros(p)
    return GpHyperparameters(tau2=vy, v=p * vx, a=a, sigma2=0.5 * vy)


def _sqdist(A, B, j):
    d = A[:, j, None] - B[None, :, j]
    return d * d


def kernel_matrix(A, B, hyper: GpHyperparameters) -> np.ndarray:
    """tau2 * exp(-sum_j (a_j - b_j)^2 / v_j) + sum_j a_j a_ij b_i'j."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1] or A.shape[1] != hyper.p:
        raise ValueError(f"dimension mismatch: {A.shape[1]}, {B.shape[1]}, p={hyper.p}")
    E = np.zeros((A.shape[0], B.shape[0]))
    for j in range(hyper.p):
        E += _sqdist(A, B, j) / hyper.v[j]
    K = hyper.tau2 * np.exp(-E)
    if np.any(hyper.a > 0):
        K += (A * hyper.a) @ B.T
    return K


def _cholesky_escalating(K, hyper: GpHyperparameters, base_diag: float = 0.0):
    """Cholesky of K + (base_diag + jitter) I, escalating jitter x10 up to 1e-4 tau2."""
    jitter = hyper.jitter
    n = K.shape[0]
    while True:
        try:
            L = linalg.cholesky(K + (base_diag + jitter) * np.eye(n), lower=True)
            return L, jitter
        except linalg.LinAlgError:
            if jitter * 10 > JITTER_MAX * hyper.tau2 * (1 + 1e-9):
                cond = np.linalg.cond(K + base_diag * np.eye(n))
                raise GpNumericalError(
                    f"kernel not factorizable with jitter {jitter:.3g} (condition {cond:.3g})"
                ) from None
            jitter *= 10


def log_marginal_likelihood(data: Dataset, hyper: GpHyperparameters,
                            return_grad: bool = False):
    """Log density of centred y under N(0, K + sigma2 I).

    With ``return_grad`` the gradient with respect to
    ``[log tau2, log v_1..v_p, log a_1..a_p, log sigma2]`` is also returned.
    """
    X = data.X
    yc = data.y - data.y.mean()
    n = X.shape[0]
    D = [_sqdist(X, X, j) for j in range(hyper.p)] if return_grad else None
    E = np.zeros((n, n))
    for j in range(hyper.p):
        E += (D[j] if D is not None else _sqdist(X, X, j)) / hyper.v[j]
    Kse = hyper.tau2 * np.exp(-E)
    K = Kse + (X * hyper.a) @ X.T if np.any(hyper.a > 0) else Kse.copy()
    L, _ = _cholesky_escalating(K, hyper, base_diag=hyper.sigma2)
    alpha = linalg.cho_solve((L, True), yc)
    lml = -0.5 * yc @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi)
    if not return_grad:
        return float(lml)

    Kinv, info = linalg.lapack.dpotri(L, lower=1)
    if info != 0:
        raise GpNumericalError(f"inverse from Cholesky factor failed (info={info})")
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    W = np.outer(alpha, alpha) - Kinv
    p = hyper.p
    g = np.empty(2 * p + 2)
    WK = W * Kse
    g[0] = 0.5 * WK.sum()
    for j in range(p):
        g[1 + j] = 0.5 * (WK * D[j]).sum() / hyper.v[j]
    ax = alpha @ X
    for j in range(p):
        x = X[:, j]
        g[1 + p + j] = 0.5 * hyper.a[j] * (ax[j] ** 2 - x @ Kinv @ x)
    g[-1] = 0.5 * hyper.sigma2 * np.trace(W)
    return float(lml), g


def _pack(h: GpHyperparameters, free_a) -> np.ndarray:
    return np.concatenate([[np.log(h.tau2)], np.log(h.v), np.log(h.a[free_a]), [np.log(h.sigma2)]])


def _unpack(theta, p, free_a) -> GpHyperparameters:
    k = int(free_a.sum())
    a = np.zeros(p)
    a[free_a] = np.exp(theta[1 + p:1 + p + k])
    tau2 = float(np.exp(theta[0]))
    return GpHyperparameters(tau2=tau2, v=np.exp(theta[1:1 + p]), a=a,
                             sigma2=float(np.exp(theta[-1])))


def optimize_hyperparameters(data: Dataset, init: GpHyperparameters | None = None,
                             budget: int = 200, n_starts: int = 3) -> GpHyperparameters:
    """Empirical-Bayes hyperparameters by maximum marginal likelihood.

    L-BFGS-B in log-parameter space with the analytic gradient, restarted
    from ``n_starts`` deterministic perturbations of ``init``. Linear
    weights that are exactly zero in ``init`` stay at zero. The result never
    has a lower marginal likelihood than ``init``.
    """
    if init is None:
        init = default_hyperparameters(data)
    p = data.p
    free_a = init.a > 0
    vy = max(float(np.var(data.y)), 1e-12)
    vx = np.var(data.X, axis=0)
    vx = np.where(vx > 0, vx, 1.0)

    lo = np.concatenate([[np.log(vy) - 12], np.log(vx) - 10,
                         np.log(vy / vx[free_a]) - 20, [np.log(vy) - 16]])
    hi = np.concatenate([[np.log(vy) + 8], np.log(vx) + 12,
                         np.log(vy / vx[free_a]) + 8, [np.log(vy) + 4]])

    def objective(theta):
        h = _unpack(theta, p, free_a)
        try:
            val, g = log_marginal_likelihood(data, h, return_grad=True)
        except GpNumericalError:
            return 1e300, np.zeros_like(theta)
        keep = np.concatenate([[True], np.ones(p, bool), free_a, [True]])
        return -val, -g[keep]

    theta0 = np.clip(_pack(init, free_a), lo, hi)
    f_init = objective(_pack(init, free_a))[0]
    starts = [theta0]
    for shift in (np.log(4.0), -np.log(4.0))[: max(n_starts - 1, 0)]:
        t = theta0.copy()
        t[1:1 + p] += shift
        t[-1] -= shift
        starts.append(np.clip(t, lo, hi))

    best_theta, best_val = None, np.inf
    for t0 in starts:
        res = optimize.minimize(objective, t0, jac=True, method="L-BFGS-B",
                                bounds=list(zip(lo, hi)), options={"maxiter": budget})
        log.debug("EB start: -lml %.6f -> %.6f (%s)", objective(t0)[0], res.fun, res.message)
        if res.fun < best_val:
            best_theta, best_val = res.x, res.fun
    if not best_val < f_init:
        warnings.warn("marginal-likelihood search found no improving step; keeping init",
                      stacklevel=2)
        return init
    return _unpack(best_theta, p, free_a)


class GpPosterior:
    """Gibbs sampler for (f, sigma^2) with fixed kernel hyperparameters.

    Parameters
    ----------
    data : Dataset
        Training data. ``y`` is centred by its sample mean and the mean is
        added back to every draw.
    hyper : GpHyperparameters
        Kernel hyperparameters; ``hyper.sigma2`` initialises the chain.
    """

    def __init__(self, data: Dataset, hyper: GpHyperparameters):
        self.data = data
        self.hyper = hyper
        self.y_mean = float(data.y.mean())
        K = kernel_matrix(data.X, data.X, hyper)
        lam, U = linalg.eigh(K)
        self.lam = np.clip(lam, 0.0, None) + hyper.jitter
        self.U = U
        self.ytil = U.T @ (data.y - self.y_mean)
        self.g_draws = None
        self.sigma2_draws = None
        self.seed = None

    def run(self, M: int, seed: int, burn_in: int = 100, thin: int = 1,
            update_sigma2: bool = True, chains: int = 1) -> "GpPosterior":
        """Run ``chains`` chains of ``burn_in + M*thin/chains`` sweeps, keep M draws."""
        if M < 2:
            raise ValueError("need M >= 2 posterior draws")
        per_chain = [M // chains + (1 if c < M % chains else 0) for c in range(chains)]
        ss = np.random.SeedSequence(seed)
        gs, s2s = [], []
        for m, child in zip(per_chain, ss.spawn(chains)):
            g, s2 = self._chain(m, np.random.default_rng(child), burn_in, thin, update_sigma2)
            gs.append(g)
            s2s.append(s2)
        self.g_draws = np.vstack(gs)
        self.sigma2_draws = np.concatenate(s2s)
        self.seed = seed
        return self

    def _chain(self, m, rng, burn_in, thin, update_sigma2):
        lam, ytil = self.lam, self.ytil
        n = lam.shape[0]
        sigma2 = self.hyper.sigma2
        G = np.empty((m, n))
        S = np.empty(m)
        kept = 0
        for it in range(burn_in + m * thin):
            shrink = lam / (lam + sigma2)
            g = shrink * ytil + np.sqrt(shrink * sigma2) * rng.standard_normal(n)
            if update_sigma2:
                rss = np.sum((ytil - g) ** 2)
                sigma2 = 0.5 * rss / rng.gamma(0.5 * n)
            if not (np.all(np.isfinite(g)) and np.isfinite(sigma2) and sigma2 > 0):
                raise GpNumericalError(f"non-finite state at sweep {it} (sigma2={sigma2})")
            if it >= burn_in and (it - burn_in) % thin == 0:
                G[kept] = g
                S[kept] = sigma2
                kept += 1
        return G, S

    def _require_run(self):
        if self.g_draws is None:
            raise RuntimeError("call run() before requesting draws")

    def f_at_data(self) -> np.ndarray:
        self._require_run()
        return self.g_draws @ self.U.T + self.y_mean

    def f_at(self, X_new, seed: int) -> np.ndarray:
        """Extend every retained draw to new locations by the conditional Gaussian."""
        self._require_run()
        X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
        B = kernel_matrix(X_new, self.data.X, self.hyper) @ self.U
        mean = (self.g_draws / self.lam) @ B.T
        C = kernel_matrix(X_new, X_new, self.hyper) - (B / self.lam) @ B.T
        w, V = linalg.eigh(0.5 * (C + C.T))
        root = V * np.sqrt(np.clip(w, 0.0, None))
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        Z = rng.standard_normal((self.g_draws.shape[0], X_new.shape[0]))
        out = mean + Z @ root.T + self.y_mean
        if not np.all(np.isfinite(out)):
            raise GpNumericalError("non-finite draws at new locations")
        return out

    def draws(self, targets: PredictiveLocations | None = None,
              locations_id: str = "data", extend_seed: int | None = None) -> PosteriorDraws:
        self._require_run()
        meta = {"hyperparameters": self.hyper.to_dict()}
        if targets is None or (targets.X_tilde.shape == self.data.X.shape
                               and np.array_equal(targets.X_tilde, self.data.X)):
            F = self.f_at_data()
        else:
            F = self.f_at(targets.X_tilde, self.seed if extend_seed is None else extend_seed)
        return PosteriorDraws(F, self.sigma2_draws, locations_id=locations_id,
                              model_tag="gp", seed=int(self.seed), meta=meta)


def sample_posterior(data: Dataset, hyper: GpHyperparameters,
                     targets: PredictiveLocations | None = None, M: int = 1000,
                     seed: int = 0, burn_in: int = 100, thin: int = 1,
                     update_sigma2: bool = True, chains: int = 1) -> PosteriorDraws:
    """Posterior draws of f (at ``targets``, default the data) and sigma^2."""
    post = GpPosterior(data, hyper).run(M, seed, burn_in=burn_in, thin=thin,
                                        update_sigma2=update_sigma2, chains=chains)
    d = post.draws(targets, locations_id="data" if targets is None else "targets")
    meta = dict(d.meta)
    meta["chain"] = {"burn_in": burn_in, "thin": thin, "chains": chains,
                     "update_sigma2": update_sigma2, "sampler": "eigen-gibbs"}
    return replace(d, meta=meta)


def fit_gp(data: Dataset, linear: bool = True, budget: int = 200,
           n_starts: int = 3) -> GpHyperparameters:
    """Empirical-Bayes hyperparameters from data-scaled defaults.

    Warns when the noise variance collapses below ``1e-6 * var(y)``: the
    posterior then interpolates the data and phi loses its meaning.
    """
    hyper = optimize_hyperparameters(data, default_hyperparameters(data, linear=linear),
                                     budget=budget, n_starts=n_starts)
    if hyper.sigma2 < 1e-6 * np.var(data.y):
        warnings.warn(f"noise variance collapsed to {hyper.sigma2:.2e}; the GP interpolates "
                      "the data", UserWarning, stacklevel=2)
    return hyper
