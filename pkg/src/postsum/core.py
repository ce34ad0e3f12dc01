"""Shared data model: datasets, posterior draws, predictive locations.

Everything here is immutable after construction. Arrays are copied on the
way in and flagged read-only, so objects can be shared freely between
threads and between summaries computed from the same posterior.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

SCHEMA_VERSION = 1
FLOAT_FMT = "%.17g"  # round-trips float64 exactly

MODEL_TAGS = ("gp", "horseshoe", "external")
ORIGINS = ("observed-subset", "synthetic")


class DataError(ValueError):
    """Raised when input data violate a structural requirement."""


def _frozen(a, dtype=float, ndim=None, name="array"):
    arr = np.array(a, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise DataError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Covariates, response and the transforms that produced them.

    ``standardization`` holds one ``(shift, scale)`` pair per column of ``X``
    when the columns were centred and scaled; the original values are
    ``X * scale + shift``. The response may carry its own pair in
    ``response_standardization``.
    """

    X: np.ndarray
    y: np.ndarray
    column_names: tuple[str, ...]
    standardization: tuple[tuple[float, float], ...] | None = None
    response_transform: str = "none"
    response_standardization: tuple[float, float] | None = None
    response_name: str = "y"
    log_columns: tuple[str, ...] = ()

    def __post_init__(self):
        X = _frozen(self.X, ndim=2, name="X")
        y = _frozen(self.y, ndim=1, name="y")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "column_names", tuple(self.column_names))
        object.__setattr__(self, "log_columns", tuple(self.log_columns))
        n, p = X.shape
        if n < 2 or p < 1:
            raise DataError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if y.shape[0] != n:
            raise DataError(f"y has {y.shape[0]} entries but X has {n} rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("non-finite entries in X or y")
        if len(self.column_names) != p:
            raise DataError(f"{len(self.column_names)} column names for {p} columns")
        if len(set(self.column_names)) != p:
            raise DataError("duplicate column names")
        if self.standardization is not None:
            std = tuple((float(s), float(c)) for s, c in self.standardization)
            if len(std) != p:
                raise DataError("standardization must have one entry per column")
            if any(c <= 0 for _, c in std):
                raise DataError("standardization scales must be positive")
            object.__setattr__(self, "standardization", std)
        if self.response_transform not in ("none", "log"):
            raise DataError(f"unknown response transform {self.response_transform!r}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise DataError(f"no column named {name!r}") from None

    def original_X(self) -> np.ndarray:
        """Covariates mapped back through the recorded standardization."""
        if self.standardization is None:
            return np.array(self.X)
        shift = np.array([s for s, _ in self.standardization])
        scale = np.array([c for _, c in self.standardization])
        return self.X * scale + shift

    def locations(self) -> "PredictiveLocations":
        return PredictiveLocations(self.X, origin="observed-subset",
                                   column_names=self.column_names)


@dataclass(frozen=True)
class PredictiveLocations:
    """Covariate rows at which a summary is fitted, with optional weights."""

    X_tilde: np.ndarray
    weights: np.ndarray | None = None
    origin: str = "observed-subset"
    column_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = _frozen(self.X_tilde, ndim=2, name="X_tilde")
        object.__setattr__(self, "X_tilde", X)
        if X.shape[0] < 1:
            raise DataError("need at least one predictive location")
        if not np.all(np.isfinite(X)):
            raise DataError("non-finite predictive locations")
        if self.weights is not None:
            w = _frozen(self.weights, ndim=1, name="weights")
            if w.shape[0] != X.shape[0]:
                raise DataError("weights length does not match locations")
            if np.any(w < 0) or not w.sum() > 0:
                raise DataError("weights must be nonnegative with positive sum")
            object.__setattr__(self, "weights", w)
        if self.origin not in ORIGINS:
            raise DataError(f"unknown origin {self.origin!r}")
        if self.column_names is not None:
            names = tuple(self.column_names)
            if len(names) != X.shape[1]:
                raise DataError("column_names length does not match X_tilde")
            object.__setattr__(self, "column_names", names)

    @property
    def n_tilde(self) -> int:
        return self.X_tilde.shape[0]

    @property
    def p(self) -> int:
        return self.X_tilde.shape[1]

    def weight_vector(self) -> np.ndarray:
        if self.weights is None:
            return np.ones(self.n_tilde)
        return np.array(self.weights)

    def names(self) -> tuple[str, ...]:
        if self.column_names is not None:
            return self.column_names
        return tuple(f"x{j + 1}" for j in range(self.p))


@dataclass(frozen=True)
class PosteriorDraws:
    """M posterior draws of fitted values at n locations, plus noise variance.

    Row ``k`` of ``f_draws`` is the k-th draw of the regression function
    evaluated at the locations identified by ``locations_id``.
    """

    f_draws: np.ndarray
    sigma2_draws: np.ndarray
    locations_id: str = "data"
    model_tag: str = "external"
    seed: int = 0
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        f = _frozen(self.f_draws, ndim=2, name="f_draws")
        s = _frozen(self.sigma2_draws, ndim=1, name="sigma2_draws")
        object.__setattr__(self, "f_draws", f)
        object.__setattr__(self, "sigma2_draws", s)
        object.__setattr__(self, "meta", dict(self.meta))
        if s.shape[0] != f.shape[0]:
            raise DataError("sigma2_draws length must equal the number of f draws")
        if f.shape[0] < 1:
            raise DataError("need at least one draw")
        if f.shape[0] < 2:
            warnings.warn("M < 2: posterior uncertainty is not available", stacklevel=3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(s))):
            raise DataError("non-finite posterior draws")
        if np.any(s <= 0):
            raise DataError("sigma2 draws must be positive")
        if self.model_tag not in MODEL_TAGS:
            raise DataError(f"unknown model tag {self.model_tag!r}")

    @property
    def M(self) -> int:
        return self.f_draws.shape[0]

    @property
    def n(self) -> int:
        return self.f_draws.shape[1]

    def check_locations(self, locations: PredictiveLocations | Dataset) -> None:
        rows = locations.n_tilde if isinstance(locations, PredictiveLocations) else locations.n
        if rows != self.n:
            raise DataError(f"draws index {self.n} locations but {rows} were supplied")


@dataclass(frozen=True)
class SummaryLossConfig:
    """Squared-error discrepancy with at most one complexity penalty."""

    discrepancy: str = "squared-error"
    penalty: str = "none"
    tuning: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.discrepancy != "squared-error":
            raise DataError(f"unsupported discrepancy {self.discrepancy!r}")
        if self.penalty not in ("none", "adaptive-l1", "smoothness"):
            raise DataError(f"unsupported penalty {self.penalty!r}")
        object.__setattr__(self, "tuning", dict(self.tuning))


def posterior_mean_fit(draws: PosteriorDraws) -> np.ndarray:
    """Column-wise posterior mean of the fitted values.

    Columns are sorted before summation so the result does not depend on
    the order of the draws, bit for bit.
    """
    f = draws.f_draws
    if f.shape[0] < 2:
        warnings.warn("M < 2: returning the single draw unchanged", stacklevel=2)
        return np.array(f[0])
    return np.sort(f, axis=0).mean(axis=0)


# -- CSV input -----------------------------------------------------------------

def _read_numeric_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                bad = next(v for v in row if not _is_float(v))
                raise DataError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate header names")
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def _is_float(v: str) -> bool:
    try:
        float(v)
    except ValueError:
        return False
    return True


def load_dataset(path, response_column: str, log_columns: Sequence[str] = (),
                 standardize: bool = False,
                 standardize_response: bool | None = None) -> Dataset:
    """Read a CSV file into a :class:`Dataset`.

    Columns named in ``log_columns`` are log-transformed first (the response
    may be among them); then, if ``standardize`` is set, every covariate is
    centred by its mean and divided by its sample standard deviation. The
    response is standardized too unless ``standardize_response`` is False.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path} does not exist")
    header, table = _read_numeric_csv(path)
    if response_column not in header:
        raise DataError(f"response column {response_column!r} not in {path}")
    for name in log_columns:
        if name not in header:
            raise DataError(f"log column {name!r} not in {path}")
        col = table[:, header.index(name)]
        if np.any(col <= 0):
            raise DataError(f"log column {name!r} has non-positive values")
        table[:, header.index(name)] = np.log(col)

    yi = header.index(response_column)
    y = table[:, yi].copy()
    cols = [h for h in header if h != response_column]
    X = table[:, [header.index(h) for h in cols]]

    std = None
    rstd = None
    if standardize:
        shift = X.mean(axis=0)
        scale = X.std(axis=0, ddof=1)
        flat = [c for c, s in zip(cols, scale) if not s > 0]
        if flat:
            raise DataError(f"zero-variance column(s) under standardize: {flat}")
        X = (X - shift) / scale
        std = tuple(zip(shift.tolist(), scale.tolist()))
        if standardize_response is None or standardize_response:
            ys = y.std(ddof=1)
            if not ys > 0:
                raise DataError("response has zero variance")
            rstd = (float(y.mean()), float(ys))
            y = (y - rstd[0]) / rstd[1]

    return Dataset(
        X=X, y=y, column_names=tuple(cols), standardization=std,
        response_transform="log" if response_column in log_columns else "none",
        response_standardization=rstd, response_name=response_column,
        log_columns=tuple(c for c in log_columns if c != response_column),
    )


def load_crime(standardize: bool = True) -> Dataset:
    """The bundled US crime data (47 states, 15 predictors, response ``y``).

    All continuous variables are logged; the binary ``So`` indicator is not.
    """
    path = Path(__file__).with_name("data") / "uscrime.csv"
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    logged = [h for h in header if h != "So"]
    return load_dataset(path, "y", log_columns=logged, standardize=standardize)


# -- artifacts -----------------------------------------------------------------

def _write_matrix(path: Path, a: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(a), delimiter=",", fmt=FLOAT_FMT)


def _read_matrix(path: Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_draws(draws: PosteriorDraws, directory, column_names: Sequence[str] = (),
               hyperparameters: Mapping[str, Any] | None = None) -> Path:
    """Write a draw artifact: ``meta.json``, ``f_draws.csv``, ``sigma2_draws.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_matrix(d / "f_draws.csv", draws.f_draws)
    _write_matrix(d / "sigma2_draws.csv", draws.sigma2_draws.reshape(-1, 1))
    meta = dict(draws.meta)
    meta.update({
        "schema_version": SCHEMA_VERSION,
        "model_tag": draws.model_tag,
        "n": draws.n,
        "p": len(column_names),
        "M": draws.M,
        "seed": int(draws.seed),
        "column_names": list(column_names),
        "locations_id": draws.locations_id,
        "hyperparameters": dict(hyperparameters or meta.get("hyperparameters", {})),
    })
    write_json(d / "meta.json", meta)
    return d


def load_draws(directory) -> PosteriorDraws:
    d = Path(directory)
    with open(d / "meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported draw artifact schema {meta.get('schema_version')!r}")
    f = _read_matrix(d / "f_draws.csv")
    s = _read_matrix(d / "sigma2_draws.csv").ravel()
    if f.shape != (meta["M"], meta["n"]):
        raise DataError(f"f_draws.csv has shape {f.shape}, meta says ({meta['M']}, {meta['n']})")
    extra = {k: v for k, v in meta.items()
             if k not in ("model_tag", "seed", "locations_id")}
    return PosteriorDraws(f, s, locations_id=meta["locations_id"],
                          model_tag=meta["model_tag"], seed=meta["seed"], meta=extra)


def save_dataset(data: Dataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_matrix(d / "X.csv", data.X)
    _write_matrix(d / "y.csv", data.y.reshape(-1, 1))
    write_json(d / "dataset.json", {
        "schema_version": SCHEMA_VERSION,
        "column_names": list(data.column_names),
        "standardization": [list(p) for p in data.standardization] if data.standardization else None,
        "response_transform": data.response_transform,
        "response_standardization": list(data.response_standardization) if data.response_standardization else None,
        "response_name": data.response_name,
        "log_columns": list(data.log_columns),
    })
    return d


def load_dataset_artifact(directory) -> Dataset:
    d = Path(directory)
    with open(d / "dataset.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    X = _read_matrix(d / "X.csv")
    y = _read_matrix(d / "y.csv").ravel()
    rstd = meta.get("response_standardization")
    return Dataset(
        X=X, y=y, column_names=tuple(meta["column_names"]),
        standardization=meta["standardization"],
        response_transform=meta["response_transform"],
        response_standardization=tuple(rstd) if rstd else None,
        response_name=meta.get("response_name", "y"),
        log_columns=tuple(meta.get("log_columns", ())),
    )


def save_locations(locations: PredictiveLocations, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_matrix(d / "X_tilde.csv", locations.X_tilde)
    if locations.weights is not None:
        _write_matrix(d / "weights.csv", locations.weights.reshape(-1, 1))
    write_json(d / "locations.json", {
        "schema_version": SCHEMA_VERSION,
        "origin": locations.origin,
        "column_names": list(locations.names()),
        "weighted": locations.weights is not None,
    })
    return d


def load_locations(directory) -> PredictiveLocations:
    d = Path(directory)
    with open(d / "locations.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    w = _read_matrix(d / "weights.csv").ravel() if meta["weighted"] else None
    return PredictiveLocations(_read_matrix(d / "X_tilde.csv"), weights=w,
                               origin=meta["origin"], column_names=meta["column_names"])
