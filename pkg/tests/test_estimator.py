import warnings

import numpy as np
import pytest
from concurrent.futures import ThreadPoolExecutor

from twostage.compression import ArxOrder, QuantileCompressor, QuantileLevels
from twostage.core import ConfigurationError, InputTooShortError, ObservationSeries, PriorSpec, SeedSpec
from twostage.estimator import (
    PolyConfig,
    TsConfig,
    TwoStageEstimator,
    dumps_model,
    infer,
    load_model,
    save_model,
    train,
)
from twostage.regression import MlpConfig, PolynomialRegressor
from twostage.simulators import NonlinearSystemSpec, SnrModelSpec

PRIOR_VARIANCE = 64 / 12  # U[2, 10]


def snr_config(m=1000, N=1000, seed=0, **kw):
    return TsConfig(PriorSpec((2.0,), (10.0,)), SnrModelSpec(5.0, N), QuantileLevels(5),
                    PolyConfig(2), m=m, N=N, seed=SeedSpec(seed), **kw)


@pytest.fixture(scope="module")
def snr_est():
    return train(snr_config())


def test_training_mse_beats_prior_variance(snr_est):
    assert snr_est.training_mse_ < PRIOR_VARIANCE


def test_interpolation_when_m_equals_p():
    est = train(snr_config(m=21, N=50, seed=3))
    assert est.stage.feature_map.p == 21
    assert est.training_mse_ <= 1e-8


def test_serialization_is_deterministic(snr_est):
    assert dumps_model(snr_est) == dumps_model(train(snr_config()))


def test_save_load_roundtrip(snr_est, tmp_path):
    save_model(snr_est, tmp_path / "m.json")
    loaded = load_model(tmp_path / "m.json")
    rec = SnrModelSpec(5.0, 1000).simulate([4.0], SeedSpec(8))
    assert infer(loaded, rec)[0] == infer(snr_est, rec)[0]
    assert dumps_model(loaded) == dumps_model(snr_est)


def test_large_cell_estimate_lands_near_truth():
    est = train(snr_config(m=10**4, N=10**4, seed=1))
    rec = SnrModelSpec(5.0, 10**4).simulate([5.0], SeedSpec(99))
    assert 4.0 <= infer(est, rec)[0] <= 6.0


def test_training_record_reproduces_training_prediction(snr_est):
    config = snr_config()
    rec = config.training_record(17)
    z = QuantileCompressor(5).transform_one(rec)
    assert infer(snr_est, rec)[0] == snr_est.stage.predict(z)[0]


def test_constant_record_gives_finite_estimate(snr_est):
    assert np.isfinite(infer(snr_est, np.full(1000, 5.0))[0])


def test_concurrent_inference_matches_serial(snr_est):
    model = SnrModelSpec(5.0, 1000)
    recs = [model.simulate([3.0 + (i % 7)], SeedSpec(5, 0, (i,))) for i in range(1000)]
    serial = [infer(snr_est, r)[0] for r in recs]
    with ThreadPoolExecutor(8) as pool:
        parallel = list(pool.map(lambda r: infer(snr_est, r)[0], recs))
    assert parallel == serial


def test_infer_is_predict_of_compress(snr_est):
    rec = SnrModelSpec(5.0, 1000).simulate([7.0], SeedSpec(4))
    z = QuantileCompressor(5).transform_one(rec)
    assert infer(snr_est, rec)[0] == snr_est.stage.predict(z)[0]
    assert snr_est.predict(rec.outputs[None, :])[0] == infer(snr_est, rec)[0]


def test_timing_flag(snr_est):
    theta, micros = infer(snr_est, np.ones(1000), timing=True)
    assert micros >= 0 and theta.shape == (1,)


def test_short_record(snr_est):
    with pytest.raises(InputTooShortError):
        infer(snr_est, np.ones(5))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        snr_config(m=0)
    with pytest.raises(ConfigurationError):
        snr_config(N=4)
    with pytest.raises(ConfigurationError):
        TsConfig(PriorSpec((-0.9,), (0.9,)), NonlinearSystemSpec(N=100), QuantileLevels(5))
    with pytest.raises(ConfigurationError):
        TsConfig(PriorSpec((2.0,), (10.0,)), SnrModelSpec(5.0, 100), ArxOrder(2, 2), N=100)


def test_nonlinear_pipeline_trains_and_infers():
    cfg = TsConfig(PriorSpec((-0.9,), (0.9,)), NonlinearSystemSpec(N=300), ArxOrder(2, 2),
                   MlpConfig(hidden_width=8, epochs=20), m=200, N=300, seed=SeedSpec(2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = train(cfg)
        theta = infer(est, cfg.training_record(0))
    assert theta.shape == (1,) and np.isfinite(theta[0])


def test_parallel_training_matches_serial():
    a = dumps_model(train(snr_config(m=300, N=200)))
    b = dumps_model(train(snr_config(m=300, N=200, jobs=3)))
    assert a == b


def test_sklearn_fit_on_record_batch():
    rng = np.random.default_rng(0)
    thetas = rng.uniform(2, 10, 500)
    X = 5.0 + 5.0 / np.sqrt(thetas)[:, None] * rng.standard_normal((500, 400))
    est = TwoStageEstimator(QuantileCompressor(5), PolynomialRegressor(2)).fit(X, thetas)
    assert est.score(X, thetas) > 0.3
    series = [ObservationSeries(row) for row in X[:3]]
    np.testing.assert_allclose(est.predict(series), est.predict(X[:3]), rtol=1e-12)
