"""Comparison estimators for the controlled nonlinear system.

* an extended Kalman filter on the state augmented with the unknown parameter
  as a slow random walk;
* an output-error prediction-error method with multi-start scalar search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .core import (
    ConfigurationError,
    FilterDivergenceError,
    ModelExplosionError,
    ObservationSeries,
    SeedSpec,
    as_seed,
)
from .simulators import THETA_BOUND, propagate_x2

EKF_LARGE_P0 = (0.1, 0.1, 0.5)
EKF_SMALL_P0 = (0.1, 0.1, 0.01)


@dataclass(frozen=True)
class EkfConfig:
    P0: np.ndarray = field(default_factory=lambda: np.diag(EKF_LARGE_P0))
    Q: np.ndarray = field(default_factory=lambda: np.diag([0.9, 0.1, 1e-6]))
    R: float = 0.01
    x0: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name, shape in (("P0", (3, 3)), ("Q", (3, 3)), ("x0", (3,))):
            a = np.array(getattr(self, name), dtype=np.float64)
            if a.shape != shape:
                raise ConfigurationError(f"{name} must have shape {shape}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        for name in ("P0", "Q"):
            a = getattr(self, name)
            if not np.allclose(a, a.T) or np.linalg.eigvalsh(a).min() < -1e-12:
                raise ConfigurationError(f"{name} must be symmetric positive semidefinite")
        if not self.R > 0:
            raise ConfigurationError("R must be positive")

    @classmethod
    def large(cls) -> "EkfConfig":
        return cls(P0=np.diag(EKF_LARGE_P0))

    @classmethod
    def small(cls) -> "EkfConfig":
        return cls(P0=np.diag(EKF_SMALL_P0))


@dataclass
class EkfResult:
    theta_hat: float
    states: np.ndarray  # (N, 3) filtered means
    covariances: np.ndarray  # (N, 3, 3) filtered covariances
    nll: float  # innovation negative log-likelihood


def ekf_transition(x: np.ndarray, u: float) -> np.ndarray:
    x1, x2, th = x
    s = math.sin(50.0 * th * th)
    return np.array([
        0.5 * x1 + u,
        (1.0 - th * th) * s * x2 - th * x2 + th / (1.0 + th * th) * u,
        th,
    ])


def ekf_transition_jacobian(x: np.ndarray, u: float) -> np.ndarray:
    _, x2, th = x
    th2 = th * th
    s = math.sin(50.0 * th2)
    c = math.cos(50.0 * th2)
    a = (1.0 - th2) * s - th
    d_theta = x2 * (-2.0 * th * s + (1.0 - th2) * 100.0 * th * c) - x2 + u * (1.0 - th2) / (1.0 + th2) ** 2
    return np.array([
        [0.5, 0.0, 0.0],
        [0.0, a, d_theta],
        [0.0, 0.0, 1.0],
    ])


def _require_inputs(series: ObservationSeries):
    if series.inputs is None:
        raise ConfigurationError("this estimator needs a record with inputs")
    return series.outputs, series.inputs


def _psd3(P, tol: float) -> bool:
    """All principal minors of a symmetric 3x3 matrix are >= -tol."""
    (a, b, c), (_, d, e), (_, _, f) = P
    if min(a, d, f) < -tol:
        return False
    if min(a * d - b * b, a * f - c * c, d * f - e * e) < -tol:
        return False
    det = a * (d * f - e * e) - b * (b * f - e * c) + c * (b * e - d * c)
    return det >= -tol


def ekf_estimate(series: ObservationSeries, config: EkfConfig = EkfConfig()) -> EkfResult:
    """Filter the record and return the final parameter-state estimate (clamped).

    The 3x3 algebra is written out in scalars; the measurement row is
    ``(0, 1, 0)`` and the update uses the Joseph form.
    """
    y, u = _require_inputs(series)
    N = y.size
    x1, x2, th = (float(v) for v in config.x0)
    P = [[float(v) for v in row] for row in config.P0]
    q1, q2, q3 = (float(config.Q[i, i]) for i in range(3))
    Qoff = config.Q - np.diag(np.diag(config.Q))
    has_off = bool(np.any(Qoff))
    R = float(config.R)
    states = np.empty((N, 3))
    covs = np.empty((N, 3, 3))
    nll = 0.0
    for k in range(N):
        S = P[1][1] + R
        K = (P[0][1] / S, P[1][1] / S, P[2][1] / S)
        innov = float(y[k]) - x2
        x1 += K[0] * innov
        x2 += K[1] * innov
        th += K[2] * innov
        # Joseph form: (I - K h) P (I - K h)^T + R K K^T with h = e_2
        A = [[1.0, -K[0], 0.0], [0.0, 1.0 - K[1], 0.0], [0.0, -K[2], 1.0]]
        AP = [[sum(A[i][l] * P[l][j] for l in range(3)) for j in range(3)] for i in range(3)]
        P = [[sum(AP[i][l] * A[j][l] for l in range(3)) + R * K[i] * K[j] for j in range(3)] for i in range(3)]
        for i in range(3):
            for j in range(i + 1, 3):
                P[i][j] = P[j][i] = 0.5 * (P[i][j] + P[j][i])
        nll += 0.5 * (math.log(2 * math.pi * S) + innov * innov / S)
        scale = max(1.0, max(abs(v) for row in P for v in row))
        if not (math.isfinite(x1) and math.isfinite(x2) and math.isfinite(th) and math.isfinite(scale)):
            raise FilterDivergenceError(f"non-finite filter state at step {k + 1}")
        if not _psd3(P, 1e-9 * scale):
            raise FilterDivergenceError(f"covariance lost positive semidefiniteness at step {k + 1}")
        states[k] = (x1, x2, th)
        covs[k] = P
        # prediction with F = [[.5, 0, 0], [0, a, g], [0, 0, 1]]
        uk = float(u[k])
        th2 = th * th
        s = math.sin(50.0 * th2)
        a = (1.0 - th2) * s - th
        g = x2 * (-2.0 * th * s + (1.0 - th2) * 100.0 * th * math.cos(50.0 * th2)) - x2 \
            + uk * (1.0 - th2) / (1.0 + th2) ** 2
        x1, x2 = 0.5 * x1 + uk, a * x2 + th / (1.0 + th2) * uk
        p11, p12, p13 = P[0]
        p22, p23, p33 = P[1][1], P[1][2], P[2][2]
        r2 = (a * p12 + g * p13)  # F row 2 applied to column 1
        n12 = 0.5 * r2
        n22 = a * (a * p22 + g * p23) + g * (a * p23 + g * p33)
        n23 = a * p23 + g * p33
        P = [
            [0.25 * p11 + q1, n12, 0.5 * p13],
            [n12, n22 + q2, n23],
            [0.5 * p13, n23, p33 + q3],
        ]
        if has_off:
            P = [[P[i][j] + Qoff[i, j] for j in range(3)] for i in range(3)]
    theta = float(np.clip(states[-1, 2], -THETA_BOUND, THETA_BOUND))
    return EkfResult(theta, states, covs, float(nll))


# --- prediction-error method --------------------------------------------------

@dataclass(frozen=True)
class PemConfig:
    n_init: int = 1
    theta_bounds: tuple = (-THETA_BOUND, THETA_BOUND)
    xtol: float = 1e-8
    maxiter: int = 500
    initial_step: float = 0.02
    seed: SeedSpec = field(default_factory=lambda: SeedSpec(0))

    def __post_init__(self):
        if self.n_init < 1:
            raise ConfigurationError("n_init must be >= 1")
        lo, hi = self.theta_bounds
        if not lo < hi:
            raise ConfigurationError("theta_bounds must be increasing")

    def initial_points(self) -> np.ndarray:
        """Start points; init ``i`` comes from its own stream so larger pools extend smaller ones."""
        seed = as_seed(self.seed)
        lo, hi = self.theta_bounds
        return np.array([lo + (hi - lo) * seed.spawn(i).generator().random() for i in range(self.n_init)])


@dataclass
class PemStart:
    init: float
    theta: float
    objective: float
    n_evals: int
    best_so_far: list


@dataclass
class PemResult:
    theta_hat: float
    best_objective: float
    per_init: list


def pem_objective(theta: float, outputs: np.ndarray, inputs: np.ndarray) -> float:
    """Sum of squared output errors of the noise-free simulated second state."""
    with np.errstate(over="ignore", invalid="ignore"):
        pred = propagate_x2(theta, inputs)
        v = float(np.sum((outputs - pred) ** 2))
    return v if np.isfinite(v) else math.inf


_LOG_CAP = 1e3  # stands in for log1p(inf)


def _local_search(theta0: float, y, u, config: PemConfig) -> PemStart:
    lo, hi = config.theta_bounds
    evals = []

    def criterion(th):
        inside = min(max(th, lo), hi)
        v = pem_objective(inside, y, u)
        evals.append((inside, v))
        c = math.log1p(v) if math.isfinite(v) else _LOG_CAP
        return c + 1e3 * (th - inside) ** 2

    criterion(theta0)
    step = config.initial_step if theta0 + config.initial_step <= hi else -config.initial_step
    try:
        res = optimize.minimize_scalar(
            criterion, bracket=(theta0, theta0 + step), method="brent",
            options={"xtol": config.xtol, "maxiter": config.maxiter},
        )
        th = float(np.clip(res.x, lo, hi))
    except (RuntimeError, ValueError, OverflowError):
        th = theta0
    v = pem_objective(th, y, u)
    evals.append((th, v))
    best, best_th, trace = math.inf, theta0, []
    for t, val in evals:
        if val < best:
            best, best_th = val, t
        trace.append(best)
    return PemStart(float(theta0), float(best_th), float(best), len(evals), trace)


def pem_estimate(series: ObservationSeries, config: PemConfig = PemConfig()) -> PemResult:
    """Best local minimiser of the output-error criterion over ``n_init`` random starts."""
    y, u = _require_inputs(series)
    starts = [_local_search(float(t0), y, u, config) for t0 in config.initial_points()]
    best = None
    for s in starts:  # strict < keeps the lowest index on ties
        if best is None or s.objective < best.objective:
            best = s
    if not math.isfinite(best.objective):
        raise ModelExplosionError("prediction-error criterion is non-finite at every evaluated point")
    return PemResult(best.theta, best.objective, starts)
