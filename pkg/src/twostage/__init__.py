"""Two-stage simulation-driven parameter estimation.

Simulate labelled records from a prior, compress each record to a few
summary statistics, and regress the parameter on those statistics. Inference
on new data is then a single compression pass plus one function evaluation.
"""

from .asymptotics import (
    GaussianDensity,
    crb_snr,
    quantile_clt_check,
    quantile_covariance,
    quantile_variances,
    standardized_moments,
    ts_asymptotic_variance,
)
from .baselines import EkfConfig, PemConfig, ekf_estimate, pem_estimate
from .compression import (
    ArxCompressor,
    ArxOrder,
    QuantileCompressor,
    QuantileLevels,
    compress_arx,
    compress_quantiles,
)
from .core import (
    ConfigurationError,
    DivergenceError,
    DomainError,
    FilterDivergenceError,
    InputTooShortError,
    ModelExplosionError,
    ObservationSeries,
    PriorSpec,
    RankDeficiencyError,
    RankDeficiencyWarning,
    SeedSpec,
    SupportError,
    sample_prior,
)
from .estimator import (
    PolyConfig,
    TsConfig,
    TwoStageEstimator,
    infer,
    load_model,
    save_model,
    train,
)
from .harness import CampaignSpec, McSummary, run_campaign
from .regression import (
    LinearSecondStage,
    MlpConfig,
    MlpSecondStage,
    PolyFeatureMap,
    PolynomialRegressor,
    ReluNetRegressor,
    fit_linear,
    fit_mlp,
    predict,
)
from .simulators import NonlinearSystemSpec, SnrModelSpec, simulate_nonlinear, simulate_snr

__version__ = "0.1.0"
