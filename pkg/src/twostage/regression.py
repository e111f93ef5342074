"""Second-stage regressors mapping compressed features to parameters."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .compression import solve_least_squares
from .core import ConfigurationError, DivergenceError, as_seed


@dataclass(frozen=True)
class PolyFeatureMap:
    """All monomials of total degree <= ``degree`` in graded-lex order, constant first."""

    input_dim: int
    degree: int

    def __post_init__(self):
        if self.input_dim < 1 or self.degree < 0:
            raise ConfigurationError(f"invalid feature map ({self.input_dim}, {self.degree})")

    @property
    def p(self) -> int:
        return math.comb(self.input_dim + self.degree, self.degree)

    @cached_property
    def exponents(self) -> np.ndarray:
        rows = []
        for k in range(self.degree + 1):
            for combo in itertools.combinations_with_replacement(range(self.input_dim), k):
                e = np.zeros(self.input_dim, dtype=np.int64)
                for i in combo:
                    e[i] += 1
                rows.append(e)
        return np.array(rows)

    def _check(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        if Z.shape[-1] != self.input_dim:
            raise ConfigurationError(f"feature map expects input dim {self.input_dim}, got {Z.shape[-1]}")
        return Z

    def transform(self, Z) -> np.ndarray:
        """Features for a batch ``(m, n) -> (m, p)`` or a single vector ``(n,) -> (p,)``."""
        Z = self._check(Z)
        return np.prod(Z[..., None, :] ** self.exponents, axis=-1)

    def jacobian(self, z) -> np.ndarray:
        """Analytic ``dJ/dz`` at one point, shape ``(p, n)``."""
        z = self._check(z).ravel()
        E = self.exponents
        out = np.zeros((E.shape[0], self.input_dim))
        for i in range(self.input_dim):
            Ei = E.copy()
            Ei[:, i] = np.maximum(Ei[:, i] - 1, 0)
            out[:, i] = E[:, i] * np.prod(z**Ei, axis=1)
        return out

    def to_dict(self) -> dict:
        return {"kind": "monomial-graded-lex", "input_dim": self.input_dim, "degree": self.degree}


def poly_features(z, feature_map: PolyFeatureMap) -> np.ndarray:
    return feature_map.transform(z)


def _check_input(z, dim: int) -> np.ndarray:
    Z = np.asarray(z, dtype=np.float64)
    single = Z.ndim == 1
    Z = np.atleast_2d(Z)
    if Z.shape[1] != dim:
        raise ConfigurationError(f"stage expects {dim} features, got {Z.shape[1]}")
    if not np.all(np.isfinite(Z)):
        raise ConfigurationError("features must be finite")
    return Z, single


@dataclass(frozen=True)
class LinearSecondStage:
    beta: np.ndarray  # (p, d)
    feature_map: PolyFeatureMap
    condition: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64)
        if beta.ndim == 1:
            beta = beta[:, None]
        if beta.shape[0] != self.feature_map.p:
            raise ConfigurationError(f"beta has {beta.shape[0]} rows, feature map has p={self.feature_map.p}")
        if not np.all(np.isfinite(beta)):
            raise ConfigurationError("beta must be finite")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def input_dim(self) -> int:
        return self.feature_map.input_dim

    @property
    def output_dim(self) -> int:
        return self.beta.shape[1]

    def predict(self, z) -> np.ndarray:
        Z, single = _check_input(z, self.input_dim)
        out = self.feature_map.transform(Z) @ self.beta
        return out[0] if single else out

    def gradient(self, z) -> np.ndarray:
        """``d predict / dz`` at one point, shape ``(d, n)``."""
        return self.beta.T @ self.feature_map.jacobian(z)

    def to_dict(self) -> dict:
        return {
            "kind": "linear",
            "feature_map": self.feature_map.to_dict(),
            "shape": list(self.beta.shape),
            "beta": [float(v) for v in self.beta.ravel()],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearSecondStage":
        fm = doc["feature_map"]
        shape = tuple(doc["shape"])
        beta = np.array(doc["beta"], dtype=np.float64).reshape(shape)
        return cls(beta, PolyFeatureMap(int(fm["input_dim"]), int(fm["degree"])))


def fit_linear(features, targets, ridge: float = 0.0, *, feature_map: PolyFeatureMap | None = None,
               on_singular: str = "ridge") -> LinearSecondStage:
    """Least-squares coefficients ``beta`` with ``targets ~ features @ beta``.

    ``features`` are already-mapped rows ``J(z_i)``. The objective is
    ``mean ||theta_i - beta^T J_i||^2 + ridge ||beta||^2``; with ``ridge = 0`` a
    singular Gram matrix falls back to a ``1e-10``-scaled ridge and warns (or
    raises with ``on_singular="raise"``).
    """
    J = np.atleast_2d(np.asarray(features, dtype=np.float64))
    T = np.asarray(targets, dtype=np.float64)
    if T.ndim == 1:
        T = T[:, None]
    if J.shape[0] != T.shape[0]:
        raise ConfigurationError(f"{J.shape[0]} feature rows but {T.shape[0]} targets")
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(T))):
        raise ConfigurationError("features and targets must be finite")
    if ridge < 0:
        raise ConfigurationError("ridge must be nonnegative")
    m, p = J.shape
    if ridge > 0:
        A = np.vstack([J, np.sqrt(m * ridge) * np.eye(p)])
        b = np.vstack([T, np.zeros((p, T.shape[1]))])
        beta, cond = solve_least_squares(A, b, on_singular="ridge", what="feature")
    else:
        beta, cond = solve_least_squares(J, T, on_singular=on_singular, what="feature")
    if feature_map is None:
        return _RawLinear(beta, cond)
    return LinearSecondStage(beta, feature_map, condition=cond)


@dataclass(frozen=True)
class _RawLinear:
    """Coefficients fitted without a feature-map descriptor (features supplied pre-mapped)."""

    beta: np.ndarray
    condition: float

    def predict(self, features) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.beta


# --- two-layer ReLU network ---------------------------------------------------

@dataclass(frozen=True)
class MlpConfig:
    hidden_width: int = 64
    epochs: int = 200
    batch_size: int = 64
    step_size: float = 1e-3
    seed: int = 0


_PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass(frozen=True)
class MlpSecondStage:
    """``affine -> ReLU -> affine`` on standardized inputs and targets."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray
    y_scale: np.ndarray
    training_mse: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        for name in ("W1", "b1", "W2", "b2", "x_mean", "x_scale", "y_mean", "y_scale"):
            a = np.array(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(a)):
                raise ConfigurationError(f"network array {name} is not finite")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_width(self) -> int:
        return self.W1.shape[1]

    @property
    def output_dim(self) -> int:
        return self.W2.shape[1]

    def params(self) -> dict:
        return {k: getattr(self, k) for k in _PARAM_NAMES}

    def predict(self, z) -> np.ndarray:
        Z, single = _check_input(z, self.input_dim)
        out = _forward(self.params(), (Z - self.x_mean) / self.x_scale)[0]
        out = out * self.y_scale + self.y_mean
        return out[0] if single else out

    def to_dict(self) -> dict:
        doc = {"kind": "mlp", "hidden_width": self.hidden_width,
               "input_dim": self.input_dim, "output_dim": self.output_dim}
        for name in ("W1", "b1", "W2", "b2", "x_mean", "x_scale", "y_mean", "y_scale"):
            a = getattr(self, name)
            doc[name] = {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpSecondStage":
        arrays = {
            name: np.array(doc[name]["data"], dtype=np.float64).reshape(doc[name]["shape"])
            for name in ("W1", "b1", "W2", "b2", "x_mean", "x_scale", "y_mean", "y_scale")
        }
        return cls(**arrays)


def _forward(params: dict, Xs: np.ndarray):
    pre = Xs @ params["W1"] + params["b1"]
    hidden = np.maximum(pre, 0.0)
    return hidden @ params["W2"] + params["b2"], pre, hidden


def mlp_loss_and_grad(params: dict, Xs: np.ndarray, Ys: np.ndarray):
    """Mean squared error (summed over outputs) and its analytic parameter gradients."""
    out, pre, hidden = _forward(params, Xs)
    err = out - Ys
    m = Xs.shape[0]
    loss = float(np.sum(err**2) / m)
    dout = 2.0 * err / m
    dhidden = (dout @ params["W2"].T) * (pre > 0)
    grads = {
        "W1": Xs.T @ dhidden,
        "b1": dhidden.sum(axis=0),
        "W2": hidden.T @ dout,
        "b2": dout.sum(axis=0),
    }
    return loss, grads


def _standardize(A: np.ndarray):
    mean = A.mean(axis=0)
    scale = A.std(axis=0)
    scale[~(scale > 0)] = 1.0
    return mean, scale


def init_mlp(n: int, d: int, hidden_width: int, rng: np.random.Generator) -> dict:
    return {
        "W1": rng.standard_normal((n, hidden_width)) * np.sqrt(2.0 / n),
        "b1": np.zeros(hidden_width),
        "W2": rng.standard_normal((hidden_width, d)) * np.sqrt(1.0 / hidden_width),
        "b2": np.zeros(d),
    }


def fit_mlp(features, targets, config: MlpConfig = MlpConfig()) -> MlpSecondStage:
    """Train the network by mini-batch Adam on squared error; deterministic given ``config.seed``."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    Y = np.asarray(targets, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ConfigurationError(f"{X.shape[0]} feature rows but {Y.shape[0]} targets")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ConfigurationError("features and targets must be finite")
    if config.hidden_width < 1 or config.batch_size < 1 or config.epochs < 0:
        raise ConfigurationError(f"invalid network config {config}")
    rng = as_seed(config.seed).generator()
    x_mean, x_scale = _standardize(X)
    y_mean, y_scale = _standardize(Y)
    Xs = (X - x_mean) / x_scale
    Ys = (Y - y_mean) / y_scale
    params = init_mlp(X.shape[1], Y.shape[1], config.hidden_width, rng)
    m1 = {k: np.zeros_like(v) for k, v in params.items()}
    m2 = {k: np.zeros_like(v) for k, v in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    m = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(m)
        epoch_loss = 0.0
        for start in range(0, m, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = mlp_loss_and_grad(params, Xs[batch], Ys[batch])
            if not np.isfinite(loss):
                raise DivergenceError("non-finite training loss", epoch)
            epoch_loss += loss * batch.size
            step += 1
            for k in _PARAM_NAMES:
                m1[k] = beta1 * m1[k] + (1 - beta1) * grads[k]
                m2[k] = beta2 * m2[k] + (1 - beta2) * grads[k] ** 2
                mhat = m1[k] / (1 - beta1**step)
                vhat = m2[k] / (1 - beta2**step)
                params[k] = params[k] - config.step_size * mhat / (np.sqrt(vhat) + eps)
        if not np.isfinite(epoch_loss):
            raise DivergenceError("non-finite training loss", epoch)
    stage = MlpSecondStage(x_mean=x_mean, x_scale=x_scale, y_mean=y_mean, y_scale=y_scale, **params)
    mse = float(np.mean(np.sum((stage.predict(X) - Y) ** 2, axis=1)))
    object.__setattr__(stage, "training_mse", mse)
    return stage


def predict(stage, z) -> np.ndarray:
    """Evaluate a fitted second stage on one feature vector or a batch."""
    return stage.predict(z)


def stage_from_dict(doc: dict):
    if doc.get("kind") == "linear":
        return LinearSecondStage.from_dict(doc)
    if doc.get("kind") == "mlp":
        return MlpSecondStage.from_dict(doc)
    raise ConfigurationError(f"unknown second-stage kind {doc.get('kind')!r}")


# --- estimator wrappers -------------------------------------------------------

class _StageRegressor(RegressorMixin, BaseEstimator):
    def _prepare(self, Z, y):
        Z = check_array(Z, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self._vector_output = y.ndim == 1
        self.n_features_in_ = Z.shape[1]
        return Z, y

    def predict(self, Z):
        check_is_fitted(self, "stage_")
        Z = check_array(Z, dtype=np.float64)
        out = self.stage_.predict(Z)
        return out[:, 0] if getattr(self, "_vector_output", False) else out

    def set_stage(self, stage, vector_output: bool = True):
        self.stage_ = stage
        self.n_features_in_ = stage.input_dim
        self._vector_output = vector_output and stage.output_dim == 1
        return self


class PolynomialRegressor(_StageRegressor):
    """``theta = beta^T J(z)`` with monomial features, fitted in closed form."""

    def __init__(self, degree=2, ridge=0.0, on_singular="ridge"):
        self.degree = degree
        self.ridge = ridge
        self.on_singular = on_singular

    def fit(self, Z, y):
        Z, y = self._prepare(Z, y)
        fmap = PolyFeatureMap(Z.shape[1], int(self.degree))
        self.stage_ = fit_linear(fmap.transform(Z), y, self.ridge, feature_map=fmap, on_singular=self.on_singular)
        self.coef_ = self.stage_.beta
        return self


class ReluNetRegressor(_StageRegressor):
    """Two-layer ReLU network trained by mini-batch Adam."""

    def __init__(self, hidden_width=64, epochs=200, batch_size=64, step_size=1e-3, seed=0):
        self.hidden_width = hidden_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.step_size = step_size
        self.seed = seed

    def fit(self, Z, y):
        Z, y = self._prepare(Z, y)
        cfg = MlpConfig(int(self.hidden_width), int(self.epochs), int(self.batch_size),
                        float(self.step_size), int(self.seed))
        self.stage_ = fit_mlp(Z, y, cfg)
        return self
