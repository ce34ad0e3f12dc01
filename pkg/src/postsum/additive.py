"""Additive and partially additive spline summaries.

Each smooth term is a penalized cubic B-spline (univariate) or a tensor
product of two cubic B-spline bases (bivariate). The identifiability
constraint that a term sums to zero over the predictive locations is
absorbed by reparameterization, so an additive summary is
``alpha + sum_j Z_j delta_j``. For fixed smoothing parameters the fit is a
linear map of the target vector; the same map applied to every posterior
draw gives the projected posterior of each term.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

from .core import DataError, PosteriorDraws, PredictiveLocations, posterior_mean_fit

log = logging.getLogger(__name__)

DEGREE = 3
LOG_LAMBDA_RANGE = (-8.0, 8.0)


class DegenerateTermError(DataError):
    """A covariate has too few distinct values to carry a smooth term."""


# -- bases ---------------------------------------------------------------------

@dataclass(frozen=True)
class Marginal:
    """A cubic B-spline basis on one covariate."""

    knots: np.ndarray
    lo: float
    hi: float

    @property
    def dim(self) -> int:
        return len(self.knots) - DEGREE - 1

    def design(self, x) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        return BSpline.design_matrix(x, self.knots, DEGREE).toarray()

    def _gauss_points(self, npts=3):
        nodes, wts = np.polynomial.legendre.leggauss(npts)
        inner = np.unique(self.knots)
        a, b = inner[:-1], inner[1:]
        t = (0.5 * (b - a)[:, None] * nodes[None, :] + 0.5 * (a + b)[:, None]).ravel()
        w = (0.5 * (b - a)[:, None] * wts[None, :]).ravel()
        return t, w

    def derivative_design(self, x, order: int) -> np.ndarray:
        basis = BSpline(self.knots, np.eye(self.dim), DEGREE)
        return basis.derivative(order)(x) if order else basis(x)

    def gram(self, order: int) -> np.ndarray:
        """Exact integral over the knot span of D^order B_i * D^order B_j."""
        t, w = self._gauss_points()
        Bd = self.derivative_design(t, order)
        return (Bd * w[:, None]).T @ Bd


def make_marginal(x, basis_dim: int, label: str = "x") -> Marginal:
    """Cubic B-spline basis with interior knots at quantiles of the distinct values."""
    x = np.asarray(x, dtype=float)
    ux = np.unique(x)
    if ux.size < DEGREE + 1:
        raise DegenerateTermError(f"{label}: only {ux.size} distinct values, cannot build a cubic basis")
    if basis_dim > ux.size:
        warnings.warn(f"{label}: {ux.size} distinct values; basis_dim reduced from {basis_dim}",
                      stacklevel=3)
        basis_dim = ux.size
    if basis_dim < DEGREE + 1:
        raise ValueError("basis_dim must be at least 4")
    lo, hi = float(ux[0]), float(ux[-1])
    n_inner = basis_dim - DEGREE - 1
    inner = np.quantile(ux, np.arange(1, n_inner + 1) / (n_inner + 1)) if n_inner else np.array([])
    knots = np.concatenate([[lo] * (DEGREE + 1), inner, [hi] * (DEGREE + 1)])
    return Marginal(knots=knots, lo=lo, hi=hi)


def _row_kron(A, B):
    return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], -1)


def _split_bivariate(basis_dim: int) -> tuple[int, int]:
    d2 = int(math.isqrt(basis_dim))
    for cand in range(d2, DEGREE, -1):
        if basis_dim % cand == 0 and basis_dim // cand >= DEGREE + 1:
            return basis_dim // cand, cand
    d = math.ceil(math.sqrt(basis_dim))
    return d, d


@dataclass(frozen=True)
class SmoothTerm:
    """One smooth component of an additive summary.

    ``Z_block`` holds the constrained basis evaluated at the predictive
    locations (columns sum to zero) and ``S_block`` the curvature penalty in
    the same coordinates. ``Q`` maps constrained coefficients back to the raw
    B-spline coefficients.
    """

    kind: str
    columns: tuple[int, ...]
    basis_dim: int
    marginals: tuple[Marginal, ...]
    Z_block: np.ndarray
    S_block: np.ndarray
    Q: np.ndarray
    name: str = ""

    @property
    def width(self) -> int:
        return self.Z_block.shape[1]

    def raw_design(self, Xcols) -> np.ndarray:
        Xcols = np.asarray(Xcols, dtype=float).reshape(-1, len(self.columns))
        if self.kind == "univariate":
            return self.marginals[0].design(Xcols[:, 0])
        return _row_kron(self.marginals[0].design(Xcols[:, 0]),
                         self.marginals[1].design(Xcols[:, 1]))

    def evaluate(self, Xcols) -> np.ndarray:
        """Constrained basis at new covariate values (rows x width)."""
        return self.raw_design(Xcols) @ self.Q


def build_smooth(x, kind: str = "univariate", basis_dim: int | None = None,
                 columns: Sequence[int] = (0,), name: str = "",
                 marginal_dims: tuple[int, int] | None = None) -> SmoothTerm:
    """Construct a smooth term over the given covariate values.

    ``x`` is a vector (univariate) or an ``n x 2`` array (bivariate). A
    bivariate ``basis_dim`` is split into marginal dimensions whose product
    is ``basis_dim`` when possible (30 -> 6 x 5); ``marginal_dims``
    overrides the split.
    """
    x = np.asarray(x, dtype=float)
    columns = tuple(int(c) for c in columns)
    if kind == "univariate":
        basis_dim = 10 if basis_dim is None else basis_dim
        if basis_dim < 4:
            raise ValueError("univariate basis_dim must be at least 4")
        x = x.reshape(-1)
        m = make_marginal(x, basis_dim, name or f"x{columns[0] + 1}")
        B = m.design(x)
        S = m.gram(2)
        marginals = (m,)
        basis_dim = m.dim
    elif kind == "bivariate":
        basis_dim = 30 if basis_dim is None else basis_dim
        if basis_dim < 10:
            raise ValueError("bivariate basis_dim must be at least 10")
        if x.ndim != 2 or x.shape[1] != 2:
            raise ValueError("bivariate term needs an n x 2 array")
        d1, d2 = marginal_dims or _split_bivariate(basis_dim)
        m1 = make_marginal(x[:, 0], d1, f"x{columns[0] + 1}")
        m2 = make_marginal(x[:, 1], d2, f"x{columns[1] + 1}")
        B = _row_kron(m1.design(x[:, 0]), m2.design(x[:, 1]))
        # thin-plate energy of the tensor product: f_xx^2 + 2 f_xy^2 + f_yy^2
        S = (np.kron(m1.gram(2), m2.gram(0)) + 2 * np.kron(m1.gram(1), m2.gram(1))
             + np.kron(m1.gram(0), m2.gram(2)))
        marginals = (m1, m2)
        basis_dim = m1.dim * m2.dim
    else:
        raise ValueError(f"unknown term kind {kind!r}")

    # absorb sum-to-zero: Q spans the null space of 1'B
    c = B.sum(axis=0)[:, None]
    Qfull, _ = linalg.qr(c, mode="full")
    Q = Qfull[:, 1:]
    Z = B @ Q
    Z -= Z.mean(axis=0)                       # remove rounding residue
    S = Q.T @ S @ Q
    S = 0.5 * (S + S.T)
    if not name:
        name = "s(" + ",".join(f"x{j + 1}" for j in columns) + ")"
    return SmoothTerm(kind=kind, columns=columns, basis_dim=basis_dim, marginals=marginals,
                      Z_block=Z, S_block=S, Q=Q, name=name)


def additive_terms(locations: PredictiveLocations, columns: Sequence[int] | None = None,
                   basis_dim: int = 10) -> list[SmoothTerm]:
    """Univariate terms for the given columns; degenerate columns are dropped."""
    X = locations.X_tilde
    names = locations.names()
    cols = range(locations.p) if columns is None else columns
    out = []
    for j in cols:
        try:
            out.append(build_smooth(X[:, j], "univariate", basis_dim, columns=(j,),
                                    name=f"s({names[j]})"))
        except DegenerateTermError as exc:
            warnings.warn(f"{exc}; term dropped to the intercept", stacklevel=2)
    return out


def add_interaction(terms: Sequence[SmoothTerm], pair: tuple[int, int],
                    locations: PredictiveLocations, basis_dim: int = 30,
                    marginal_dims: tuple[int, int] | None = None) -> list[SmoothTerm]:
    """Replace the univariate terms of ``pair`` by one bivariate term."""
    k, l = (int(pair[0]), int(pair[1]))
    if k == l:
        raise ValueError("interaction needs two distinct covariates")
    k, l = min(k, l), max(k, l)
    for t in terms:
        if t.kind == "bivariate":
            if set(t.columns) == {k, l}:
                raise ValueError(f"duplicate interaction request {(k, l)}")
            if set(t.columns) & {k, l}:
                raise ValueError(f"covariate already in bivariate term {t.columns}")
    names = locations.names()
    biv = build_smooth(locations.X_tilde[:, [k, l]], "bivariate", basis_dim, columns=(k, l),
                       name=f"s({names[k]},{names[l]})", marginal_dims=marginal_dims)
    rest = [t for t in terms if not (t.kind == "univariate" and t.columns[0] in (k, l))]
    return [biv] + rest


# -- fitting -------------------------------------------------------------------

@dataclass(frozen=True)
class AdditiveSummaryFit:
    """Penalized additive summary with its linear smoother.

    ``coef_map`` (``(1 + m) x n``) sends any target vector to the intercept
    and stacked constrained coefficients, with the smoothing parameters
    held at ``lambdas``. ``P_blocks[j] = Z_j coef_map_j`` is the smoother
    for term j and ``P`` their sum.
    """

    terms: tuple[SmoothTerm, ...]
    alpha: float
    delta_hat: np.ndarray
    lambdas: np.ndarray
    coef_map: np.ndarray
    point_terms: tuple[np.ndarray, ...]
    locations: PredictiveLocations
    gcv: float = float("nan")
    edf: float = float("nan")
    term_draws: tuple[np.ndarray, ...] | None = None
    alpha_draws: np.ndarray | None = None
    coef_draws: np.ndarray | None = field(default=None, repr=False)

    @property
    def slices(self) -> list[slice]:
        out, start = [], 1
        for t in self.terms:
            out.append(slice(start, start + t.width))
            start += t.width
        return out

    @property
    def Z(self) -> np.ndarray:
        return np.hstack([t.Z_block for t in self.terms])

    @property
    def P_blocks(self) -> list[np.ndarray]:
        return [t.Z_block @ self.coef_map[s] for t, s in zip(self.terms, self.slices)]

    @property
    def P(self) -> np.ndarray:
        return self.Z @ self.coef_map[1:]

    def intercept_map(self) -> np.ndarray:
        return self.coef_map[0]

    def fitted_point(self) -> np.ndarray:
        return self.alpha + np.sum(self.point_terms, axis=0)

    def gamma_draws(self) -> np.ndarray:
        if self.term_draws is None:
            raise RuntimeError("project draws first (project_additive)")
        return self.alpha_draws[:, None] + np.sum(self.term_draws, axis=0)

    def term_curve(self, j: int, grid, level: float = 0.95):
        """Point curve and pointwise band of term ``j`` at new covariate values."""
        t = self.terms[j]
        E = t.evaluate(grid)
        s = self.slices[j]
        point = E @ self.delta_hat[s.start - 1:s.stop - 1]
        if self.coef_draws is None:
            return point, None, None
        D = self.coef_draws[:, s] @ E.T
        q = 100 * (1 - level) / 2
        lo, hi = np.percentile(D, [q, 100 - q], axis=0)
        return point, lo, hi


def _penalty(terms, lambdas):
    m = sum(t.width for t in terms)
    S = np.zeros((m + 1, m + 1))
    start = 1
    for t, lam in zip(terms, lambdas):
        S[start:start + t.width, start:start + t.width] = lam * t.S_block
        start += t.width
    return S


def penalty_units(terms) -> np.ndarray:
    """Data-scaled reference smoothing parameter per term."""
    out = []
    for t in terms:
        zn = np.linalg.norm(t.Z_block.T @ t.Z_block)
        sn = np.linalg.norm(t.S_block)
        out.append(zn / sn if sn > 0 else 1.0)
    return np.array(out)


class _System:
    """Cached normal equations of [1 | Z] against one target vector."""

    def __init__(self, terms, f, weights):
        self.terms = list(terms)
        n = f.shape[0]
        self.Xa = np.hstack([np.ones((n, 1))] + [t.Z_block for t in terms])
        self.w = np.ones(n) if weights is None else np.asarray(weights, float)
        Xw = self.Xa * self.w[:, None]
        self.G = Xw.T @ self.Xa
        self.b = Xw.T @ f
        self.f = f
        self.n = n

    def solve(self, lambdas):
        M = self.G + _penalty(self.terms, lambdas)
        try:
            c = linalg.cho_factor(M, lower=True)
        except linalg.LinAlgError:
            raise DataError("penalized normal equations are singular (rank-deficient design)") from None
        return c

    def gcv(self, lambdas) -> float:
        try:
            c = self.solve(lambdas)
        except DataError:
            return np.inf
        coef = linalg.cho_solve(c, self.b)
        r = self.f - self.Xa @ coef
        tr = np.trace(linalg.cho_solve(c, self.G))
        denom = self.n - tr
        if denom <= 0:
            return np.inf
        return float(self.n * np.sum(self.w * r * r) / denom ** 2)


def _golden(fun, a, b, tol=1e-3):
    invphi = (math.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (c, fc) if fc <= fd else (d, fd)


def select_lambdas_gcv(system: _System, units, cycles: int = 3,
                       log_range=LOG_LAMBDA_RANGE) -> tuple[np.ndarray, float]:
    """Coordinate-wise GCV minimisation over log(lambda_j / unit_j).

    Each coordinate step scans an integer grid over ``log_range`` and then
    refines by golden-section search within one step of the best point.
    """
    k = len(units)
    rho = np.zeros(k)
    lo, hi = log_range

    def score(r):
        return system.gcv(units * np.exp(r))

    best = score(rho)
    grid = np.arange(lo, hi + 1e-12, 1.0)
    for _ in range(cycles):
        prev = rho.copy()
        for j in range(k):
            def f1(v, j=j):
                r = rho.copy()
                r[j] = v
                return score(r)
            vals = [f1(v) for v in grid]
            g = int(np.argmin(vals))
            v, fv = _golden(f1, max(lo, grid[g] - 1.0), min(hi, grid[g] + 1.0))
            if fv > vals[g]:
                v, fv = grid[g], vals[g]
            if fv <= best:
                rho[j], best = v, fv
        if np.max(np.abs(rho - prev)) < 1e-3:
            break
    return units * np.exp(rho), best


def fit_additive(f_hat, terms: Sequence[SmoothTerm], locations: PredictiveLocations,
                 lambdas="gcv", cycles: int = 3) -> AdditiveSummaryFit:
    """Penalized least-squares additive fit to ``f_hat``.

    Minimises ``sum_i w_i (f_i - alpha - Z delta)^2 + sum_j lambda_j
    delta_j' S_j delta_j``. ``lambdas`` is either ``"gcv"`` or a sequence of
    fixed values, one per term.
    """
    f_hat = np.asarray(f_hat, dtype=float)
    terms = tuple(terms)
    if f_hat.shape != (locations.n_tilde,):
        raise DataError("f_hat must have one entry per predictive location")
    if any(t.Z_block.shape[0] != f_hat.shape[0] for t in terms):
        raise DataError("term bases were built on different locations")
    system = _System(terms, f_hat, locations.weights)
    gcv_score = float("nan")
    if isinstance(lambdas, str):
        if lambdas != "gcv":
            raise ValueError(f"unknown lambda selection {lambdas!r}")
        lam, gcv_score = select_lambdas_gcv(system, penalty_units(terms), cycles=cycles)
    else:
        lam = np.asarray(lambdas, dtype=float).reshape(-1)
        if lam.shape[0] != len(terms) or np.any(lam < 0):
            raise ValueError("need one nonnegative lambda per term")
        gcv_score = system.gcv(lam)
    c = system.solve(lam)
    coef_map = linalg.cho_solve(c, (system.Xa * system.w[:, None]).T)
    edf = float(np.trace(linalg.cho_solve(c, system.G)))
    coef = coef_map @ f_hat
    delta = coef[1:]
    pts, start = [], 0
    for t in terms:
        pts.append(t.Z_block @ delta[start:start + t.width])
        start += t.width
    return AdditiveSummaryFit(terms=terms, alpha=float(coef[0]), delta_hat=delta,
                              lambdas=lam, coef_map=coef_map, point_terms=tuple(pts),
                              locations=locations, gcv=gcv_score, edf=edf)


def project_additive(draws: PosteriorDraws, fit: AdditiveSummaryFit) -> AdditiveSummaryFit:
    """Apply the fitted smoother to every draw (smoothing parameters fixed)."""
    draws.check_locations(fit.locations)
    C = draws.f_draws @ fit.coef_map.T
    tds = tuple(C[:, s] @ t.Z_block.T for t, s in zip(fit.terms, fit.slices))
    return replace(fit, term_draws=tds, alpha_draws=C[:, 0], coef_draws=C)


def additive_summary(draws: PosteriorDraws, locations: PredictiveLocations,
                     terms: Sequence[SmoothTerm] | None = None, lambdas="gcv") -> AdditiveSummaryFit:
    """Point fit on the posterior mean followed by projection of the draws."""
    if terms is None:
        terms = additive_terms(locations)
    fit = fit_additive(posterior_mean_fit(draws), terms, locations, lambdas=lambdas)
    return project_additive(draws, fit)
