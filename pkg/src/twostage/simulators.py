"""Parametric data generators.

Two models are provided: i.i.d. Gaussian observations with known mean whose
parameter is the signal-to-noise ratio, and a controlled two-state nonlinear
system driven by white Gaussian input.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .core import (
    ConfigurationError,
    DomainError,
    ObservationSeries,
    SeedSpec,
    as_parameter,
    as_seed,
)

THETA_BOUND = 0.9


@dataclass(frozen=True)
class SnrModelSpec:
    """``y_t = mu + e_t`` with ``e_t ~ N(0, mu**2 / theta)``."""

    mu: float = 5.0
    N: int = 1000

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise ConfigurationError("mu must be finite")
        if int(self.N) < 1:
            raise ConfigurationError("N must be positive")

    controlled = False

    def with_length(self, N: int) -> "SnrModelSpec":
        return replace(self, N=int(N))

    def simulate(self, theta, seed) -> ObservationSeries:
        return simulate_snr(self, theta, seed)

    def simulate_outputs(self, theta, seed) -> np.ndarray:
        th = _scalar_theta(theta)
        if th <= 0:
            raise DomainError(f"SNR parameter must be positive, got {th}")
        rng = as_seed(seed).generator()
        return self.mu + np.sqrt(self.mu**2 / th) * rng.standard_normal(int(self.N))


def simulate_snr(spec: SnrModelSpec, theta, seed: SeedSpec) -> ObservationSeries:
    y = spec.simulate_outputs(theta, seed)
    return ObservationSeries(y, theta=as_parameter(theta))


@dataclass(frozen=True)
class NonlinearSystemSpec:
    """Controlled system with a parameter-dependent second state.

    ``x1' = x1/2 + u + v11``
    ``x2' = (1 - th^2) sin(50 th^2) x2 - th x2 + th/(1 + th^2) u + v12``
    ``y = x2 + v2``

    Setting a noise variance to zero removes that noise source.
    """

    N: int = 1000
    v11_var: float = 0.9
    v12_var: float = 0.1
    v2_var: float = 0.01
    input_var: float = 1.0
    x0: tuple = (0.0, 0.0)

    def __post_init__(self):
        if int(self.N) < 1:
            raise ConfigurationError("N must be positive")
        if min(self.v11_var, self.v12_var, self.v2_var) < 0 or self.input_var <= 0:
            raise ConfigurationError("noise variances must be >= 0 and input variance > 0")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if len(self.x0) != 2:
            raise ConfigurationError("x0 must have two entries")

    controlled = True

    def with_length(self, N: int) -> "NonlinearSystemSpec":
        return replace(self, N=int(N))

    def noise_free(self) -> "NonlinearSystemSpec":
        return replace(self, v11_var=0.0, v12_var=0.0, v2_var=0.0)

    def simulate(self, theta, seed) -> ObservationSeries:
        return simulate_nonlinear(self, theta, seed)


def transition_coefficients(theta: float) -> tuple[float, float]:
    """Return ``(a, b)`` with ``x2' = a x2 + b u`` for the noise-free system."""
    a = (1.0 - theta**2) * np.sin(50.0 * theta**2) - theta
    b = theta / (1.0 + theta**2)
    return float(a), float(b)


def propagate_x2(theta: float, inputs: np.ndarray, x2_0: float = 0.0, noise=None) -> np.ndarray:
    """Second state ``x2_1..x2_N`` driven by ``inputs`` (and optional additive noise)."""
    a, b = transition_coefficients(theta)
    u = np.asarray(inputs, dtype=np.float64)
    drive = b * u[:-1]
    if noise is not None:
        drive = drive + noise[:-1]
    x2 = np.empty(u.size)
    x2[0] = x2_0
    if u.size > 1:
        with np.errstate(over="ignore", invalid="ignore"):
            x2[1:] = lfilter([1.0], [1.0, -a], drive, zi=[a * x2_0])[0]
    return x2


def simulate_nonlinear(spec: NonlinearSystemSpec, theta, seed: SeedSpec) -> ObservationSeries:
    th = _scalar_theta(theta)
    if abs(th) > THETA_BOUND:
        raise DomainError(f"theta must lie in [-{THETA_BOUND}, {THETA_BOUND}], got {th}")
    rng = as_seed(seed).generator()
    N = int(spec.N)
    # fixed draw order: u, v11, v12, v2
    u = np.sqrt(spec.input_var) * rng.standard_normal(N)
    v11 = np.sqrt(spec.v11_var) * rng.standard_normal(N)
    v12 = np.sqrt(spec.v12_var) * rng.standard_normal(N)
    v2 = np.sqrt(spec.v2_var) * rng.standard_normal(N)
    del v11  # x1 never reaches the output; drawn to keep the stream layout fixed
    x2 = propagate_x2(th, u, spec.x0[1], noise=v12)
    return ObservationSeries(x2 + v2, inputs=u, theta=np.array([th]))


def _scalar_theta(theta) -> float:
    th = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    if th.size != 1:
        raise ConfigurationError(f"model expects a scalar parameter, got {th.size} values")
    if not np.isfinite(th[0]):
        raise DomainError("parameter must be finite")
    return float(th[0])


def write_record_csv(series: ObservationSeries, path) -> None:
    """Write a record with header ``t,y,u``; ``u`` is blank for autonomous records."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "y", "u"])
        u = series.inputs
        for t, y in enumerate(series.outputs, start=1):
            w.writerow([t, repr(float(y)), "" if u is None else repr(float(u[t - 1]))])


def read_record_csv(path) -> ObservationSeries:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"t", "y"} <= set(reader.fieldnames):
            raise ConfigurationError(f"{path}: record CSV needs a header with columns t,y[,u]")
        rows = list(reader)
    if not rows:
        raise ConfigurationError(f"{path}: empty record")
    y = [float(r["y"]) for r in rows]
    u_raw = [r.get("u") or "" for r in rows]
    has_u = [s.strip() != "" for s in u_raw]
    if any(has_u) and not all(has_u):
        raise ConfigurationError(f"{path}: column u must be filled for every row or none")
    u = [float(s) for s in u_raw] if all(has_u) else None
    return ObservationSeries(y, inputs=u)
