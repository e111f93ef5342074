import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twostage.baselines import (
    EkfConfig,
    PemConfig,
    ekf_estimate,
    ekf_transition,
    ekf_transition_jacobian,
    pem_estimate,
    pem_objective,
)
from twostage.core import ConfigurationError, ModelExplosionError, ObservationSeries, SeedSpec
from twostage.simulators import NonlinearSystemSpec, propagate_x2, simulate_nonlinear


def record(theta, seed, N=1000, noise_free=False):
    spec = NonlinearSystemSpec(N=N)
    return simulate_nonlinear(spec.noise_free() if noise_free else spec, theta, SeedSpec(seed))


def test_ekf_large_is_finite_and_psd():
    res = ekf_estimate(record(0.5, 1), EkfConfig.large())
    assert np.isfinite(res.theta_hat) and -0.9 <= res.theta_hat <= 0.9
    eig = np.linalg.eigvalsh(res.covariances)
    assert np.all(eig >= -1e-9 * np.abs(res.covariances).max(axis=(1, 2))[:, None])


def test_ekf_covariances_are_symmetric():
    P = ekf_estimate(record(0.2, 2, N=300), EkfConfig.small()).covariances
    asym = np.abs(P - P.transpose(0, 2, 1)).max(axis=(1, 2))
    assert np.all(asym <= 1e-12 * np.linalg.norm(P, axis=(1, 2)))


def test_ekf_frozen_parameter_stays_put():
    theta0 = 0.37
    cfg = EkfConfig(P0=np.diag([0.1, 0.1, 0.0]), Q=np.diag([0.9, 0.1, 0.0]), R=0.01, x0=[0.0, 0.0, theta0])
    spec = NonlinearSystemSpec(N=400, v2_var=0.0)
    res = ekf_estimate(simulate_nonlinear(spec, theta0, SeedSpec(3)), cfg)
    assert res.theta_hat == theta0


def test_ekf_is_deterministic():
    rec = record(-0.3, 4, N=200)
    assert ekf_estimate(rec).theta_hat == ekf_estimate(rec).theta_hat


@pytest.mark.parametrize("theta0", [-0.8, -0.4, 0.0, 0.4, 0.8])
def test_ekf_stays_finite_on_reference_system(theta0):
    for seed in range(20):
        res = ekf_estimate(record(theta0, seed), EkfConfig())
        assert np.all(np.isfinite(res.states))


@settings(max_examples=20, deadline=None)
@given(x2=st.floats(-5, 5), th=st.floats(-0.9, 0.9), u=st.floats(-3, 3), x1=st.floats(-5, 5))
def test_ekf_jacobian_matches_central_differences(x1, x2, th, u):
    x = np.array([x1, x2, th])
    h = 1e-6
    fd = np.column_stack([(ekf_transition(x + h * e, u) - ekf_transition(x - h * e, u)) / (2 * h) for e in np.eye(3)])
    F = ekf_transition_jacobian(x, u)
    assert np.max(np.abs(F - fd)) <= 1e-5 * max(1.0, np.abs(F).max())


def test_ekf_config_validation():
    with pytest.raises(ConfigurationError):
        EkfConfig(R=0.0)
    with pytest.raises(ConfigurationError):
        EkfConfig(P0=np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ConfigurationError):
        ekf_estimate(ObservationSeries(np.ones(10)))


def test_pem_noise_free_recovery():
    res = pem_estimate(record(0.3, 0, noise_free=True), PemConfig(n_init=10, seed=SeedSpec(0)))
    assert abs(res.theta_hat - 0.3) <= 1e-3


def test_pem_noise_free_recovery_stable_parameter():
    res = pem_estimate(record(0.1, 0, noise_free=True), PemConfig(n_init=10, seed=SeedSpec(0)))
    assert abs(res.theta_hat - 0.1) <= 1e-3


def test_pem_objective_zero_at_truth_for_noise_free_data():
    rec = record(0.3, 0, noise_free=True)
    assert pem_objective(0.3, rec.outputs, rec.inputs) == 0.0


def test_pem_single_start_is_deterministic():
    rec = record(0.7, 5)
    cfg = PemConfig(n_init=1, seed=SeedSpec(9))
    assert pem_estimate(rec, cfg).theta_hat == pem_estimate(rec, cfg).theta_hat


def test_pem_more_starts_never_worse():
    rec = record(0.7, 6)
    best = [pem_estimate(rec, PemConfig(n_init=k, seed=SeedSpec(11))).best_objective for k in (1, 5, 10)]
    assert best[0] >= best[1] >= best[2]


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32), k=st.integers(1, 6))
def test_start_pools_are_nested(seed, k):
    small = PemConfig(n_init=k, seed=SeedSpec(seed)).initial_points()
    large = PemConfig(n_init=k + 3, seed=SeedSpec(seed)).initial_points()
    np.testing.assert_array_equal(large[:k], small)
    assert np.all(np.abs(large) <= 0.9)


def test_pem_trace_is_monotone():
    res = pem_estimate(record(-0.2, 7, N=300), PemConfig(n_init=3, seed=SeedSpec(1)))
    for start in res.per_init:
        assert np.all(np.diff(start.best_so_far) <= 0)
        assert start.objective == start.best_so_far[-1]


def test_pem_output_error_predictor():
    rec = record(0.25, 8, N=100)
    pred = propagate_x2(0.25, rec.inputs)
    assert pem_objective(0.25, rec.outputs, rec.inputs) == pytest.approx(np.sum((rec.outputs - pred) ** 2))


def test_pem_explosion_error():
    rng = np.random.default_rng(0)
    rec = ObservationSeries(np.full(50, 1e200), inputs=rng.standard_normal(50))
    with pytest.raises(ModelExplosionError):
        pem_estimate(rec, PemConfig(n_init=2))


def test_pem_config_validation():
    with pytest.raises(ConfigurationError):
        PemConfig(n_init=0)
