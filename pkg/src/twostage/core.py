"""Shared domain types, priors, errors and the seeding contract."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Invalid configuration or mismatched dimensions."""


class DomainError(ValueError):
    """Parameter outside the domain where a model is defined."""


class InputTooShortError(ValueError):
    """Record too short for the requested compression."""


class SupportError(ValueError):
    """Density vanishes where a quantile variance is requested."""


class RankDeficiencyError(np.linalg.LinAlgError):
    """Singular least-squares problem.

    ``condition`` holds the 2-norm condition estimate of the design matrix.
    """

    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class RankDeficiencyWarning(UserWarning):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


class FilterDivergenceError(RuntimeError):
    pass


class ModelExplosionError(RuntimeError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SeedSpec:
    """Deterministic random stream identified by ``(master_seed, stream_id)``.

    ``path`` extends the stream identity for nested work (training record
    ``i`` of cell ``c`` and so on); see :meth:`spawn`.
    """

    master_seed: int
    stream_id: int = 0
    path: tuple = ()

    def __post_init__(self):
        for v in (self.master_seed, self.stream_id, *self.path):
            if not (0 <= int(v) < 2**64):
                raise ConfigurationError(f"seed components must be unsigned 64-bit, got {v}")

    def spawn(self, *keys: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.stream_id, self.path + tuple(int(k) for k in keys))

    def stream(self, stream_id: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, int(stream_id))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_id, *self.path))
        return np.random.Generator(np.random.Philox(ss))


def as_seed(seed) -> SeedSpec:
    if isinstance(seed, SeedSpec):
        return seed
    if seed is None:
        return SeedSpec(0)
    return SeedSpec(int(seed))


@dataclass(frozen=True)
class PriorSpec:
    """Uniform box prior over the parameter space."""

    lower: tuple
    upper: tuple
    kind: str = "uniform-box"

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.kind != "uniform-box":
            raise ConfigurationError(f"unsupported prior kind {self.kind!r}")
        if len(lo) != len(hi) or len(lo) == 0:
            raise ConfigurationError("prior bounds must be nonempty and of equal length")
        if not all(np.isfinite(lo + hi)):
            raise ConfigurationError("prior bounds must be finite")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ConfigurationError(f"prior requires lower < upper, got {lo} / {hi}")

    @classmethod
    def uniform(cls, lower, upper) -> "PriorSpec":
        return cls(lower, upper)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def mean(self) -> np.ndarray:
        return (np.asarray(self.lower) + np.asarray(self.upper)) / 2

    @property
    def variance(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) ** 2 / 12


def sample_prior(prior: PriorSpec, count: int, seed) -> np.ndarray:
    """Draw ``count`` i.i.d. parameter vectors; returns shape ``(count, d)``."""
    if int(count) < 1:
        raise ConfigurationError(f"count must be >= 1, got {count}")
    rng = as_seed(seed).generator()
    u = rng.random((int(count), prior.dim))
    lo = np.asarray(prior.lower)
    hi = np.asarray(prior.upper)
    return lo + u * (hi - lo)


@dataclass(frozen=True)
class ObservationSeries:
    """One record: outputs ``y_1..y_N``, optional inputs and parameter label."""

    outputs: np.ndarray
    inputs: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        y = np.array(self.outputs, dtype=np.float64).ravel()
        if y.size < 1:
            raise InputTooShortError("a record needs at least one sample")
        if not np.all(np.isfinite(y)):
            raise ConfigurationError("record outputs must be finite")
        object.__setattr__(self, "outputs", _frozen(y))
        if self.inputs is not None:
            u = np.array(self.inputs, dtype=np.float64).ravel()
            if u.shape != y.shape:
                raise ConfigurationError(f"inputs length {u.size} != outputs length {y.size}")
            if not np.all(np.isfinite(u)):
                raise ConfigurationError("record inputs must be finite")
            object.__setattr__(self, "inputs", _frozen(u))
        if self.theta is not None:
            th = np.array(self.theta, dtype=np.float64).ravel()
            object.__setattr__(self, "theta", _frozen(th))

    def __len__(self) -> int:
        return self.outputs.size

    @property
    def controlled(self) -> bool:
        return self.inputs is not None


def as_series(record) -> ObservationSeries:
    if isinstance(record, ObservationSeries):
        return record
    return ObservationSeries(np.asarray(record, dtype=np.float64))


def as_parameter(theta, dim: Optional[int] = None) -> np.ndarray:
    th = np.atleast_1d(np.asarray(theta, dtype=np.float64)).ravel()
    if dim is not None and th.size != dim:
        raise ConfigurationError(f"expected parameter of length {dim}, got {th.size}")
    if not np.all(np.isfinite(th)):
        raise ConfigurationError("parameter entries must be finite")
    return th


def check_records(records: Sequence) -> list:
    """Normalise a batch of records into a list of :class:`ObservationSeries`.

    Accepts a 2-D array (one record per row), a list of arrays, or a list of
    series.
    """
    if isinstance(records, ObservationSeries):
        return [records]
    if isinstance(records, np.ndarray):
        if records.ndim == 1:
            return [as_series(records)]
        return [as_series(r) for r in records]
    return [as_series(r) for r in records]
