"""Asymptotic covariance of sample quantiles and of the two-stage estimate,
Cramér-Rao bounds for the SNR model, and Monte Carlo checkers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .compression import QuantileLevels, quantile_features
from .core import ConfigurationError, DomainError, SupportError, as_seed
from .regression import LinearSecondStage


@dataclass(frozen=True)
class GaussianDensity:
    mu: float
    sigma2: float
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ConfigurationError(f"unsupported density kind {self.kind!r}")
        if not (self.sigma2 > 0 and np.isfinite(self.sigma2) and np.isfinite(self.mu)):
            raise ConfigurationError(f"need finite mu and sigma2 > 0, got {self.mu}, {self.sigma2}")

    @classmethod
    def snr(cls, mu: float, theta: float) -> "GaussianDensity":
        if theta <= 0:
            raise DomainError("SNR parameter must be positive")
        return cls(mu, mu**2 / theta)

    @property
    def sd(self) -> float:
        return float(np.sqrt(self.sigma2))

    def pdf(self, x):
        return stats.norm.pdf(x, self.mu, self.sd)

    def cdf(self, x):
        return stats.norm.cdf(x, self.mu, self.sd)

    def ppf(self, gamma):
        return stats.norm.ppf(gamma, self.mu, self.sd)

    def sample(self, size, rng: np.random.Generator) -> np.ndarray:
        return self.mu + self.sd * rng.standard_normal(size)


def _gammas(levels) -> np.ndarray:
    if isinstance(levels, QuantileLevels):
        return levels.gammas
    g = np.atleast_1d(np.asarray(levels, dtype=np.float64))
    if np.any((g <= 0) | (g >= 1)):
        raise ConfigurationError("quantile levels must lie in (0, 1)")
    return g


def quantile_variances(density: GaussianDensity, levels) -> np.ndarray:
    """``gamma (1 - gamma) / f(F^-1(gamma))^2`` for each level."""
    g = _gammas(levels)
    f = density.pdf(density.ppf(g))
    with np.errstate(divide="ignore", over="ignore"):
        v = g * (1 - g) / f**2
    if np.any(f <= 0) or not np.all(np.isfinite(v)):
        raise SupportError("density vanishes numerically at a requested quantile")
    return v


def quantile_covariance(density: GaussianDensity, levels) -> np.ndarray:
    """Diagonal asymptotic covariance of ``sqrt(N) (h_N - h)`` (cross terms omitted)."""
    return np.diag(quantile_variances(density, levels))


def population_quantiles(density: GaussianDensity, levels) -> np.ndarray:
    return density.ppf(_gammas(levels))


def ts_asymptotic_variance(stage: LinearSecondStage, density: GaussianDensity, levels) -> np.ndarray:
    """Delta-method sandwich ``beta^T dJ Sigma dJ^T beta`` at the population quantiles."""
    h0 = population_quantiles(density, levels)
    sigma = quantile_covariance(density, levels)
    G = stage.gradient(h0)  # (d, n)
    out = G @ sigma @ G.T
    return (out + out.T) / 2


def crb_snr(mu: float, theta: float, N: int, mode: str = "paper", *, seed=0,
            n_records: int = 100_000) -> float:
    """Cramér-Rao bound for the SNR parameter of ``N`` Gaussian samples.

    ``mode="paper"`` gives ``4 theta mu^2 / N``. ``mode="independent"`` inverts
    a Monte Carlo estimate of the Fisher information, the variance of the
    log-likelihood score over ``n_records`` simulated records.
    """
    if theta <= 0:
        raise DomainError("SNR parameter must be positive")
    if N < 1:
        raise ConfigurationError("N must be positive")
    if mode == "paper":
        return 4.0 * theta * mu**2 / N
    if mode == "independent":
        return 1.0 / fisher_information_mc(mu, theta, N, seed=seed, n_records=n_records)
    raise ConfigurationError(f"unknown CRB mode {mode!r}")


def snr_score(y: np.ndarray, mu: float, theta: float) -> np.ndarray:
    """d/dtheta of the Gaussian log-likelihood, one value per record (rows of ``y``)."""
    y = np.atleast_2d(y)
    N = y.shape[1]
    S = np.sum((y - mu) ** 2, axis=1)
    return N / (2 * theta) - S / (2 * mu**2)


def fisher_information_mc(mu: float, theta: float, N: int, *, seed=0, n_records: int = 100_000,
                          chunk_samples: int = 5_000_000) -> float:
    """Score-variance estimate of the Fisher information.

    Records are simulated sample by sample while ``N * n_records`` stays
    moderate; beyond that the sum of squared deviations is drawn directly
    from its exact scaled chi-square law.
    """
    rng = as_seed(seed).generator()
    sigma = abs(mu) / np.sqrt(theta)
    scores = []
    if N * n_records <= 50_000_000:
        rows = max(1, chunk_samples // N)
        done = 0
        while done < n_records:
            k = min(rows, n_records - done)
            y = mu + sigma * rng.standard_normal((k, N))
            scores.append(snr_score(y, mu, theta))
            done += k
        score = np.concatenate(scores)
    else:
        S = sigma**2 * rng.chisquare(N, n_records)
        score = N / (2 * theta) - S / (2 * mu**2)
    return float(np.var(score, ddof=1))


@dataclass(frozen=True)
class QuantileCltReport:
    gamma: float
    N: int
    runs: int
    empirical_var_scaled: float
    theoretical_var: float
    ratio: float
    mean_scaled: float
    mean_se: float


def scaled_quantile_errors(density: GaussianDensity, gamma: float, N: int, runs: int, seed,
                           chunk_samples: int = 5_000_000) -> np.ndarray:
    """``sqrt(N) (y_(floor(gamma N)) - F^-1(gamma))`` over ``runs`` simulated records."""
    rng = as_seed(seed).generator()
    idx = int(np.clip(np.floor(gamma * N), 1, N)) - 1
    q = float(density.ppf(gamma))
    out = np.empty(runs)
    rows = max(1, chunk_samples // N)
    for start in range(0, runs, rows):
        k = min(rows, runs - start)
        Y = density.sample((k, N), rng)
        out[start : start + k] = np.partition(Y, idx, axis=1)[:, idx]
    return np.sqrt(N) * (out - q)


def quantile_clt_check(density: GaussianDensity, gamma: float, N: int, runs: int, seed) -> QuantileCltReport:
    if runs < 100:
        raise ConfigurationError("the CLT check needs at least 100 runs")
    e = scaled_quantile_errors(density, gamma, N, runs, seed)
    theo = float(quantile_variances(density, [gamma])[0])
    emp = float(np.var(e, ddof=1))
    return QuantileCltReport(gamma, int(N), int(runs), emp, theo, emp / theo,
                             float(e.mean()), float(e.std(ddof=1) / np.sqrt(runs)))


def quantile_consistency_check(density: GaussianDensity, levels: QuantileLevels, N: int, n_seeds: int,
                               seed, k_sigma: float = 3.0) -> np.ndarray:
    """Per-seed pass flags: every level's sample quantile within ``k_sigma`` asymptotic s.d."""
    base = as_seed(seed)
    q = population_quantiles(density, levels)
    tol = k_sigma * np.sqrt(quantile_variances(density, levels) / N)
    flags = np.empty(n_seeds, dtype=bool)
    for s in range(n_seeds):
        y = density.sample(N, base.spawn(s).generator())
        flags[s] = bool(np.all(np.abs(quantile_features(y, levels)[0] - q) < tol))
    return flags


def standardized_moments(sample) -> dict:
    """Skewness, excess kurtosis and KS distance to a fitted normal.

    A sample with zero spread is reported as degenerate with NaN moments.
    """
    x = np.asarray(sample, dtype=np.float64)
    sd = x.std(ddof=1) if x.size > 1 else 0.0
    if not sd > 0:
        return {"degenerate": True, "skewness": float("nan"), "excess_kurtosis": float("nan"),
                "ks_distance": float("nan"), "mean": float(x.mean()) if x.size else float("nan"), "sd": 0.0}
    ks = stats.kstest(x, "norm", args=(x.mean(), sd)).statistic
    return {
        "degenerate": False,
        "skewness": float(stats.skew(x)),
        "excess_kurtosis": float(stats.kurtosis(x)),
        "ks_distance": float(ks),
        "mean": float(x.mean()),
        "sd": float(sd),
    }
