"""Linear and sparse linear summaries.

A linear summary is the least-squares projection of fitted values onto the
columns of the predictive design. Applying the projection to every posterior
draw gives the projected posterior; applying it to the posterior mean gives
the Bayes point estimate. Sparse summaries pick the inclusion set from an
adaptive-lasso path fitted to the posterior mean.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .core import DataError, Dataset, PosteriorDraws, PredictiveLocations, posterior_mean_fit


class RankDeficientError(DataError):
    pass


@dataclass(frozen=True)
class InclusionVector:
    eta: tuple[int, ...]

    def __post_init__(self):
        eta = tuple(int(e) for e in self.eta)
        if any(e not in (0, 1) for e in eta):
            raise ValueError("inclusion entries must be 0 or 1")
        if sum(eta) < 1:
            raise ValueError("inclusion vector must select at least one column")
        object.__setattr__(self, "eta", eta)

    @classmethod
    def all(cls, p: int) -> "InclusionVector":
        return cls((1,) * p)

    @classmethod
    def from_indices(cls, idx, p: int) -> "InclusionVector":
        eta = [0] * p
        for j in idx:
            eta[j] = 1
        return cls(tuple(eta))

    @property
    def k(self) -> int:
        return sum(self.eta)

    @property
    def p(self) -> int:
        return len(self.eta)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.eta)

    def mask(self) -> np.ndarray:
        return np.array(self.eta, dtype=bool)


@dataclass(frozen=True)
class LinearSummaryFit:
    """Point estimate and projected posterior of a linear summary.

    ``point`` and ``projected_draws`` hold coefficients for the included
    columns only, in column order. Intercepts are kept separately.
    """

    eta: InclusionVector
    point: np.ndarray
    projected_draws: np.ndarray
    locations: PredictiveLocations
    intercept: bool = True
    intercept_point: float = 0.0
    intercept_draws: np.ndarray | None = None
    column_names: tuple[str, ...] = ()

    def design(self) -> np.ndarray:
        return self.locations.X_tilde[:, self.eta.indices]

    def fitted_point(self) -> np.ndarray:
        return self.intercept_point + self.design() @ self.point

    def gamma_draws(self) -> np.ndarray:
        """Summary evaluated at the predictive locations, one row per draw."""
        g = self.projected_draws @ self.design().T
        if self.intercept_draws is not None:
            g = g + self.intercept_draws[:, None]
        return g

    def credible_intervals(self, level: float = 0.95) -> np.ndarray:
        q = 100 * (1 - level) / 2
        return np.percentile(self.projected_draws, [q, 100 - q], axis=0).T


def _design(Xs: np.ndarray, intercept: bool) -> np.ndarray:
    if intercept:
        return np.column_stack([np.ones(Xs.shape[0]), Xs])
    return Xs


def projection_map(A: np.ndarray, weights: np.ndarray | None = None,
                   names=None, rtol: float = 1e-10) -> np.ndarray:
    """Matrix H with H f = argmin_b sum_i w_i (f_i - A_i b)^2."""
    sw = np.ones(A.shape[0]) if weights is None else np.sqrt(weights)
    Aw = A * sw[:, None]
    Q, R, piv = linalg.qr(Aw, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > rtol * max(d[0], 1e-300))) if d.size else 0
    if rank < A.shape[1]:
        bad = sorted(int(j) for j in piv[rank:])
        label = [names[j] if names is not None else j for j in bad]
        raise RankDeficientError(f"design is rank deficient; collinear column(s): {label}")
    # H = R^-1 Q^T diag(sw), un-pivoted
    Hp = linalg.solve_triangular(R, Q.T) * sw[None, :]
    H = np.empty_like(Hp)
    H[piv] = Hp
    return H


def project_draws(draws: PosteriorDraws, locations: PredictiveLocations,
                  eta: InclusionVector | None = None, intercept: bool = True) -> LinearSummaryFit:
    """Least-squares projection of every draw onto the included columns.

    For draw k the coefficients are ``(X'WX)^-1 X'W f_k`` with ``X`` the
    included columns of ``X_tilde`` (augmented by a constant when
    ``intercept``) and ``W`` the location weights.
    """
    draws.check_locations(locations)
    if eta is None:
        eta = InclusionVector.all(locations.p)
    if eta.p != locations.p:
        raise DataError(f"inclusion vector has length {eta.p}, locations have {locations.p} columns")
    names = locations.names()
    cols = [names[j] for j in eta.indices]
    A = _design(locations.X_tilde[:, eta.indices], intercept)
    H = projection_map(A, locations.weights,
                       names=(["(intercept)"] + cols) if intercept else cols)
    B = draws.f_draws @ H.T
    b0 = H @ posterior_mean_fit(draws)
    off = 1 if intercept else 0
    return LinearSummaryFit(
        eta=eta, point=b0[off:], projected_draws=B[:, off:], locations=locations,
        intercept=intercept, intercept_point=float(b0[0]) if intercept else 0.0,
        intercept_draws=B[:, 0] if intercept else None, column_names=tuple(cols),
    )


# -- adaptive lasso ---------------------------------------------------------

@dataclass(frozen=True)
class LassoPath:
    """Solutions of the weighted lasso on the posterior-mean fit.

    ``coefs[i]`` solves the problem at ``lambdas[i]`` on the original
    coefficient scale; ``weights`` are the adaptive weights (a zero weight
    means the column was excluded from the path).
    """

    lambdas: np.ndarray
    coefs: np.ndarray
    intercepts: np.ndarray
    weights: np.ndarray
    column_names: tuple[str, ...] = ()
    sweeps: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    @property
    def inclusion(self) -> list[InclusionVector | None]:
        out = []
        for b in self.coefs:
            nz = tuple(int(v != 0) for v in b)
            out.append(InclusionVector(nz) if any(nz) else None)
        return out

    def supports(self) -> list[dict]:
        """One entry per distinct nonempty support, at its smallest lambda.

        Entries come in the order the supports first appear as lambda
        decreases.
        """
        seen: dict[tuple, int] = {}
        order = []
        for i, eta in enumerate(self.inclusion):
            if eta is None:
                continue
            if eta.eta not in seen:
                order.append(eta.eta)
            seen[eta.eta] = i
        out = []
        for key in order:
            i = seen[key]
            out.append({"lambda": float(self.lambdas[i]), "eta": InclusionVector(key),
                        "index": i, "size": sum(key)})
        return out

    def support_of_size(self, k: int) -> InclusionVector | None:
        """First support with exactly ``k`` columns along the path, if any."""
        for s in self.supports():
            if s["size"] == k:
                return s["eta"]
        return None

    def report(self) -> list[dict]:
        names = self.column_names or tuple(f"x{j + 1}" for j in range(self.coefs.shape[1]))
        rows = []
        for s in self.supports():
            b = self.coefs[s["index"]]
            rows.append({
                "lambda": s["lambda"],
                "support": [names[j] for j in s["eta"].indices],
                "point_coefs": {names[j]: float(b[j]) for j in s["eta"].indices},
            })
        return rows


def lasso_objective(f_hat, X, beta, lam, weights, intercept=0.0, loc_weights=None) -> float:
    """Weighted-mean squared discrepancy plus the adaptive L1 penalty."""
    w = np.ones(len(f_hat)) if loc_weights is None else np.asarray(loc_weights)
    r = f_hat - intercept - X @ beta
    nz = beta != 0
    with np.errstate(divide="ignore"):
        pen = np.sum(np.abs(beta[nz]) / weights[nz])
    return float(np.sum(w * r * r) / w.sum() + lam * pen)


def lambda_max(f_hat, X, weights, loc_weights=None, intercept: bool = True) -> float:
    """Smallest lambda at which the all-zero solution satisfies the KKT conditions."""
    w = np.ones(len(f_hat)) if loc_weights is None else np.asarray(loc_weights, float)
    wn = w / w.sum()
    if intercept:
        f_hat = f_hat - wn @ f_hat
        X = X - wn @ X
    return float(np.max(np.abs(2 * weights * (X.T @ (wn * f_hat)))))


def adaptive_lasso_path(f_hat, locations: PredictiveLocations, weights,
                        lambdas=None, n_lambdas: int = 100, ratio: float = 1e-4,
                        intercept: bool = True, tol: float = 1e-8,
                        max_sweeps: int = 10_000) -> LassoPath:
    """Coordinate-descent path for the adaptive lasso on ``f_hat``.

    Minimises ``mean_w (f_hat - a - X b)^2 + lambda * sum_j |b_j| / w_j``.
    ``weights`` are the adaptive weights, usually ``|posterior mean|``;
    a zero weight means an infinite penalty and the column is left out.
    Without an explicit ``lambdas`` grid, ``n_lambdas`` log-spaced values run
    from ``lambda_max`` down to ``ratio * lambda_max``.
    """
    f_hat = np.asarray(f_hat, dtype=float)
    X = locations.X_tilde
    n, p = X.shape
    if f_hat.shape != (n,):
        raise DataError("f_hat must have one entry per location")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (p,) or np.any(weights < 0):
        raise DataError("adaptive weights must be a nonnegative vector of length p")
    active = weights > 0
    if not active.all():
        names = locations.names()
        warnings.warn(f"zero adaptive weight; excluded from path: "
                      f"{[names[j] for j in np.flatnonzero(~active)]}", stacklevel=2)

    lw = locations.weight_vector()
    wn = lw / lw.sum()
    fm = wn @ f_hat if intercept else 0.0
    xm = wn @ X if intercept else np.zeros(p)
    fc = f_hat - fm
    Xc = (X - xm)[:, active] * weights[active]   # reparameterised: b = beta / w
    lmax = float(np.max(np.abs(2 * Xc.T @ (wn * fc)))) if active.any() else 0.0
    if lambdas is None:
        lambdas = lmax * np.logspace(0, np.log10(ratio), n_lambdas)
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(lambdas < 0):
        raise DataError("lambdas must be nonnegative")

    Xw = Xc * wn[:, None]
    z = np.einsum("ij,ij->j", Xw, Xc)            # mean_w x_j^2
    ka = Xc.shape[1]
    b = np.zeros(ka)
    r = fc.copy()
    coefs = np.zeros((len(lambdas), p))
    icpt = np.zeros(len(lambdas))
    sweeps = np.zeros(len(lambdas), dtype=int)
    for i, lam in enumerate(lambdas):
        for sweep in range(1, max_sweeps + 1):
            dmax = 0.0
            for j in range(ka):
                if z[j] <= 0:
                    continue
                rho = Xw[:, j] @ r + z[j] * b[j]
                new = np.sign(rho) * max(abs(rho) - lam / 2, 0.0) / z[j]
                d = new - b[j]
                if d != 0.0:
                    r -= d * Xc[:, j]
                    b[j] = new
                    dmax = max(dmax, abs(d) * weights[active][j])
            if dmax < tol:
                break
        sweeps[i] = sweep
        beta = np.zeros(p)
        beta[active] = b * weights[active]
        coefs[i] = beta
        icpt[i] = fm - xm @ beta
    return LassoPath(lambdas=lambdas, coefs=coefs, intercepts=icpt, weights=weights,
                     column_names=locations.names(), sweeps=sweeps)


# -- refit comparator -------------------------------------------------------

def refit_posterior(data: Dataset, eta: InclusionVector, M: int, seed: int,
                    intercept: bool = True) -> np.ndarray:
    """Flat-prior posterior of the restricted linear model refitted to y.

    Comparison only: this reuses the response after selection, which the
    projected posterior avoids. Returns an ``M x k`` matrix of coefficient
    draws for the included columns.
    """
    A = _design(data.X[:, eta.indices], intercept)
    n, q = A.shape
    if n <= q:
        raise DataError(f"refit needs n > {q} observations")
    names = [data.column_names[j] for j in eta.indices]
    H = projection_map(A, names=(["(intercept)"] + names) if intercept else names)
    bhat = H @ data.y
    rss = float(np.sum((data.y - A @ bhat) ** 2))
    rng = np.random.default_rng(seed)
    sigma2 = 0.5 * rss / rng.gamma(0.5 * (n - q), size=M)
    # (A'A)^-1 = H H'
    L = linalg.cholesky(H @ H.T, lower=True)
    Z = rng.standard_normal((M, q))
    B = bhat + np.sqrt(sigma2)[:, None] * (Z @ L.T)
    return B[:, 1:] if intercept else B
