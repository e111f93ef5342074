"""The two-stage pipeline: simulate from the prior, compress, regress, infer.

:class:`TwoStageEstimator` composes a compressor (transformer) and a
second-stage regressor and behaves like any scikit-learn regressor whose
samples are records. :func:`train` builds one from a :class:`TsConfig` by
simulating its own training set.
"""

from __future__ import annotations

import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_is_fitted

from .compression import (
    ArxCompressor,
    ArxOrder,
    QuantileCompressor,
    QuantileLevels,
    compressor_from_description,
)
from .core import ConfigurationError, PriorSpec, RankDeficiencyWarning, SeedSpec, sample_prior
from .regression import (
    MlpConfig,
    PolynomialRegressor,
    ReluNetRegressor,
    stage_from_dict,
)
from .simulators import NonlinearSystemSpec, SnrModelSpec

MODEL_FORMAT = "twostage-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class PolyConfig:
    degree: int = 2
    ridge: float = 0.0


@dataclass(frozen=True)
class TsConfig:
    prior: PriorSpec
    model: Union[SnrModelSpec, NonlinearSystemSpec]
    compressor: Union[QuantileLevels, ArxOrder]
    second_stage: Union[PolyConfig, MlpConfig] = PolyConfig()
    m: int = 1000
    N: int = 1000
    seed: SeedSpec = field(default_factory=lambda: SeedSpec(0))
    jobs: int = 1

    def __post_init__(self):
        if self.m < 1 or self.N < 1:
            raise ConfigurationError("m and N must be positive")
        if self.model.controlled != isinstance(self.compressor, ArxOrder):
            raise ConfigurationError("ARX compression pairs with controlled models, quantiles with autonomous ones")
        if self.N < self.compressor.min_length:
            raise ConfigurationError(f"N={self.N} too short for compressor needing {self.compressor.min_length}")

    def build_estimator(self) -> "TwoStageEstimator":
        if isinstance(self.compressor, QuantileLevels):
            comp = QuantileCompressor(self.compressor.n)
        else:
            comp = ArxCompressor(self.compressor.n_a, self.compressor.n_b)
        if isinstance(self.second_stage, PolyConfig):
            reg = PolynomialRegressor(self.second_stage.degree, self.second_stage.ridge)
        else:
            c = self.second_stage
            reg = ReluNetRegressor(c.hidden_width, c.epochs, c.batch_size, c.step_size, c.seed)
        return TwoStageEstimator(comp, reg)

    def training_thetas(self) -> np.ndarray:
        return sample_prior(self.prior, self.m, self.seed.spawn(0))

    def record_seed(self, i: int) -> SeedSpec:
        return self.seed.spawn(1, i)

    def training_record(self, i: int):
        """Regenerate training record ``i`` exactly as :func:`train` saw it."""
        theta = self.training_thetas()[i]
        return self.model.with_length(self.N).simulate(theta, self.record_seed(i))


class TwoStageEstimator(RegressorMixin, BaseEstimator):
    """Compressor followed by a regressor; ``X`` is a batch of records.

    Records may be given as a 2-D array of outputs (one row per record) or a
    list of :class:`~twostage.core.ObservationSeries`.
    """

    def __init__(self, compressor=None, regressor=None):
        self.compressor = compressor
        self.regressor = regressor

    def _resolve(self):
        comp = QuantileCompressor() if self.compressor is None else clone(self.compressor)
        reg = PolynomialRegressor() if self.regressor is None else clone(self.regressor)
        return comp.fit(), reg

    def fit(self, X, y):
        self.compressor_, self.regressor_ = self._resolve()
        Z = self.compressor_.transform(X)
        return self.fit_compressed(Z, y, _resolved=True)

    def fit_compressed(self, Z, y, _resolved: bool = False):
        """Fit the second stage on precomputed compressed features."""
        if not _resolved:
            self.compressor_, self.regressor_ = self._resolve()
        self.regressor_.fit(Z, y)
        pred = np.asarray(self.regressor_.stage_.predict(np.asarray(Z, dtype=np.float64)))
        target = np.asarray(y, dtype=np.float64).reshape(pred.shape)
        self.training_mse_ = float(np.mean(np.sum((pred - target) ** 2, axis=1)))
        self.n_outputs_ = pred.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "regressor_")
        return self.compressor_.transform(X)

    def predict(self, X):
        check_is_fitted(self, "regressor_")
        return self.regressor_.predict(self.compressor_.transform(X))

    def predict_one(self, record) -> np.ndarray:
        """Parameter vector for a single record; the single-pass inference map."""
        check_is_fitted(self, "regressor_")
        return self.regressor_.stage_.predict(self.compressor_.transform_one(record))

    @property
    def stage(self):
        check_is_fitted(self, "regressor_")
        return self.regressor_.stage_

    @property
    def min_length(self) -> int:
        comp = self.compressor_ if hasattr(self, "compressor_") else self._resolve()[0]
        return comp.levels.min_length if isinstance(comp, QuantileCompressor) else comp.order.min_length


def train(config: TsConfig) -> TwoStageEstimator:
    """Simulate ``m`` labelled records of length ``N`` and fit the estimator on them."""
    t0 = time.perf_counter()
    thetas = config.training_thetas()
    model = config.model.with_length(config.N)
    est = config.build_estimator()
    comp = est._resolve()[0]

    def features(i):
        try:
            return comp.transform_one(model.simulate(thetas[i], config.record_seed(i)))
        except Exception as exc:  # add record context, keep the type
            raise type(exc)(f"training record {i}: {exc}") from exc

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankDeficiencyWarning)
        if config.jobs > 1:
            with ThreadPoolExecutor(config.jobs) as pool:
                rows = list(pool.map(features, range(config.m)))
        else:
            rows = [features(i) for i in range(config.m)]
    n_deficient = sum(issubclass(w.category, RankDeficiencyWarning) for w in caught)
    for w in caught:
        if not issubclass(w.category, RankDeficiencyWarning):
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    if n_deficient:
        warnings.warn(f"{n_deficient} of {config.m} training records needed the ridge fallback",
                      RankDeficiencyWarning, stacklevel=2)
    Z = np.vstack(rows)
    y = thetas[:, 0] if thetas.shape[1] == 1 else thetas
    est.fit_compressed(Z, y)
    est.m_ = config.m
    est.n_rank_deficient_ = n_deficient
    est.N_ = config.N
    est.training_seconds_ = time.perf_counter() - t0
    return est


def infer(est: TwoStageEstimator, series, *, timing: bool = False):
    """Estimate the parameter of one record; with ``timing`` also return microseconds."""
    t0 = time.perf_counter_ns()
    theta = est.predict_one(series)
    micros = (time.perf_counter_ns() - t0) / 1e3
    return (theta, micros) if timing else theta


def model_to_dict(est: TwoStageEstimator) -> dict:
    check_is_fitted(est, "regressor_")
    meta = {"training_mse": est.training_mse_}
    for key in ("m_", "N_"):
        if hasattr(est, key):
            meta[key.rstrip("_")] = int(getattr(est, key))
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "compressor": est.compressor_.describe(),
        "second_stage": est.regressor_.stage_.to_dict(),
        "metadata": meta,
    }


def model_from_dict(doc: dict) -> TwoStageEstimator:
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigurationError(f"not a {MODEL_FORMAT} document")
    if doc.get("version") != MODEL_VERSION:
        raise ConfigurationError(f"unsupported model version {doc.get('version')}")
    comp = compressor_from_description(doc["compressor"])
    stage = stage_from_dict(doc["second_stage"])
    if stage.input_dim != comp.n_features_out:
        raise ConfigurationError("compressor output and second-stage input dimensions differ")
    if doc["second_stage"]["kind"] == "linear":
        reg = PolynomialRegressor(degree=stage.feature_map.degree)
    else:
        reg = ReluNetRegressor(hidden_width=stage.hidden_width)
    reg.set_stage(stage)
    est = TwoStageEstimator(comp, reg)
    est.compressor_, est.regressor_ = comp, reg
    meta = doc.get("metadata", {})
    est.training_mse_ = float(meta.get("training_mse", float("nan")))
    est.n_outputs_ = stage.output_dim
    if "m" in meta:
        est.m_ = int(meta["m"])
    if "N" in meta:
        est.N_ = int(meta["N"])
    return est


def dumps_model(est: TwoStageEstimator) -> str:
    return json.dumps(model_to_dict(est), indent=1, sort_keys=True) + "\n"


def save_model(est: TwoStageEstimator, path) -> None:
    Path(path).write_text(dumps_model(est))


def load_model(path) -> TwoStageEstimator:
    return model_from_dict(json.loads(Path(path).read_text()))
