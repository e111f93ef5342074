"""First-stage compressors: floor-index sample quantiles and ARX least squares."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, TransformerMixin

from .core import (
    ConfigurationError,
    InputTooShortError,
    ObservationSeries,
    RankDeficiencyError,
    RankDeficiencyWarning,
    as_series,
    check_records,
)


@dataclass(frozen=True)
class QuantileLevels:
    """Levels ``k / (n + 1)`` for ``k = 1..n``."""

    n: int

    def __post_init__(self):
        if int(self.n) < 1:
            raise ConfigurationError(f"number of quantiles must be >= 1, got {self.n}")

    @property
    def gammas(self) -> np.ndarray:
        return np.arange(1, self.n + 1) / (self.n + 1)

    @property
    def min_length(self) -> int:
        return self.n + 1

    def indices(self, N: int) -> np.ndarray:
        """1-based order-statistic indices ``floor(k N / (n + 1))``, clamped to ``[1, N]``."""
        N = int(N)
        if N < self.min_length:
            raise InputTooShortError(
                f"record length {N} is below the {self.min_length} samples needed for {self.n} quantiles"
            )
        k = np.arange(1, self.n + 1)
        # integer arithmetic keeps the floor exact
        return np.clip((k * N) // (self.n + 1), 1, N)


@dataclass(frozen=True)
class ArxOrder:
    n_a: int
    n_b: int

    def __post_init__(self):
        if self.n_a < 0 or self.n_b < 0 or self.n_a + self.n_b < 1:
            raise ConfigurationError(f"invalid ARX order ({self.n_a}, {self.n_b})")

    @property
    def n(self) -> int:
        return self.n_a + self.n_b

    @property
    def lag(self) -> int:
        return max(self.n_a, self.n_b)

    @property
    def min_length(self) -> int:
        return self.lag + self.n + 1


def _outputs(series) -> np.ndarray:
    if isinstance(series, ObservationSeries):
        return series.outputs
    y = np.asarray(series, dtype=np.float64)
    if y.ndim != 1:
        raise ConfigurationError("expected a single 1-D record")
    return y


def compress_quantiles(series, levels: QuantileLevels) -> np.ndarray:
    """Order statistics ``y_(floor(gamma_k N))`` of one record."""
    y = _outputs(series)
    idx = levels.indices(y.size) - 1
    return np.partition(y, idx)[idx]


def quantile_features(outputs: np.ndarray, levels: QuantileLevels) -> np.ndarray:
    """Row-wise :func:`compress_quantiles` for a ``(m, N)`` array of records."""
    Y = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    idx = levels.indices(Y.shape[1]) - 1
    return np.partition(Y, idx, axis=1)[:, idx]


def arx_regressors(y: np.ndarray, u: np.ndarray, order: ArxOrder) -> tuple[np.ndarray, np.ndarray]:
    """Regressor matrix with rows ``(y_{t-1..t-na}, u_{t-1..t-nb})`` for ``t = lag+1..N``."""
    N = y.size
    start = order.lag  # 0-based index of the first regression row
    cols = [y[start - i : N - i] for i in range(1, order.n_a + 1)]
    cols += [u[start - j : N - j] for j in range(1, order.n_b + 1)]
    return np.column_stack(cols), y[start:]


def solve_least_squares(Phi: np.ndarray, target: np.ndarray, *, on_singular: str = "ridge", what: str = "regressor"):
    """Least squares via column-scaled SVD with a tiny ridge on exact rank loss.

    Returns ``(solution, condition)``. With ``on_singular="raise"`` a rank
    deficient design raises :class:`RankDeficiencyError` instead.
    """
    if on_singular not in ("ridge", "raise"):
        raise ConfigurationError(f"on_singular must be 'ridge' or 'raise', got {on_singular!r}")
    scale = np.sqrt(np.sum(Phi**2, axis=0))
    scale[scale == 0] = 1.0
    A = Phi / scale
    s = linalg.svdvals(A)
    tol = s[0] * max(A.shape) * np.finfo(float).eps if s.size else 0.0
    cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
    if s.size < A.shape[1] or s[-1] <= tol:
        if on_singular == "raise":
            raise RankDeficiencyError(f"singular {what} Gram matrix", cond)
        warnings.warn(
            f"singular {what} Gram matrix (condition {cond:.3e}); using ridge fallback",
            RankDeficiencyWarning,
            stacklevel=3,
        )
        # ridge lam = 1e-10 trace(Phi^T Phi) / n on the raw coefficients, solved in
        # scaled coordinates where it becomes a per-column penalty lam / scale_j^2
        lam = 1e-10 * np.sum(scale**2) / scale.size
        G = A.T @ A + np.diag(lam / scale**2)
        with warnings.catch_warnings():
            # already reported above; the solve itself stays well defined
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            sol = linalg.solve(G, A.T @ target, assume_a="pos")
        return (sol.T / scale).T, cond
    sol = linalg.lstsq(A, target, lapack_driver="gelsd")[0]
    return (sol.T / scale).T, cond


def compress_arx(series: ObservationSeries, order: ArxOrder, *, on_singular: str = "ridge") -> np.ndarray:
    """Least-squares ARX(n_a, n_b) coefficients ``(a_1..a_na, b_1..b_nb)``."""
    series = as_series(series)
    if series.inputs is None:
        raise ConfigurationError("ARX compression needs a record with inputs")
    if len(series) < order.min_length:
        raise InputTooShortError(
            f"record length {len(series)} is below the {order.min_length} samples needed for ARX{order.n_a, order.n_b}"
        )
    Phi, target = arx_regressors(series.outputs, series.inputs, order)
    xi, _ = solve_least_squares(Phi, target, on_singular=on_singular, what="ARX regressor")
    return xi


class QuantileCompressor(TransformerMixin, BaseEstimator):
    """Map each record to its ``n_quantiles`` floor-index sample quantiles."""

    def __init__(self, n_quantiles=5):
        self.n_quantiles = n_quantiles

    @property
    def levels(self) -> QuantileLevels:
        return QuantileLevels(int(self.n_quantiles))

    @property
    def n_features_out(self) -> int:
        return int(self.n_quantiles)

    def fit(self, X=None, y=None):
        self.levels_ = self.levels
        return self

    def transform(self, X) -> np.ndarray:
        levels = self.levels
        if isinstance(X, np.ndarray) and X.ndim == 2:
            if not np.all(np.isfinite(X)):
                raise ConfigurationError("record outputs must be finite")
            return quantile_features(X, levels)
        return np.vstack([compress_quantiles(r, levels) for r in check_records(X)])

    def transform_one(self, record) -> np.ndarray:
        return compress_quantiles(as_series(record), self.levels)

    def describe(self) -> dict:
        return {"kind": "quantile", "n": int(self.n_quantiles)}


class ArxCompressor(TransformerMixin, BaseEstimator):
    """Map each input-output record to its least-squares ARX coefficients."""

    def __init__(self, n_a=5, n_b=5, on_singular="ridge"):
        self.n_a = n_a
        self.n_b = n_b
        self.on_singular = on_singular

    @property
    def order(self) -> ArxOrder:
        return ArxOrder(int(self.n_a), int(self.n_b))

    @property
    def n_features_out(self) -> int:
        return self.order.n

    def fit(self, X=None, y=None):
        self.order_ = self.order
        return self

    def transform(self, X) -> np.ndarray:
        order = self.order
        return np.vstack([compress_arx(r, order, on_singular=self.on_singular) for r in check_records(X)])

    def transform_one(self, record) -> np.ndarray:
        return compress_arx(as_series(record), self.order, on_singular=self.on_singular)

    def describe(self) -> dict:
        return {"kind": "arx", "n_a": int(self.n_a), "n_b": int(self.n_b)}


def compressor_from_description(desc: dict):
    kind = desc.get("kind")
    if kind == "quantile":
        return QuantileCompressor(n_quantiles=int(desc["n"])).fit()
    if kind == "arx":
        return ArxCompressor(n_a=int(desc["n_a"]), n_b=int(desc["n_b"])).fit()
    raise ConfigurationError(f"unknown compressor kind {kind!r}")
