import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from twostage.core import DomainError, SeedSpec
from twostage.simulators import (
    NonlinearSystemSpec,
    SnrModelSpec,
    propagate_x2,
    read_record_csv,
    simulate_nonlinear,
    simulate_snr,
    transition_coefficients,
    write_record_csv,
)


def test_snr_moments():
    y = simulate_snr(SnrModelSpec(5.0, 10**5), 5.0, SeedSpec(11)).outputs
    assert 4.978 <= y.mean() <= 5.022
    assert 4.85 <= y.var(ddof=1) <= 5.15


def test_snr_zero_mean():
    y = simulate_snr(SnrModelSpec(0.0, 10**4), 1.0, SeedSpec(12)).outputs
    assert abs(y.mean()) <= 0.03


def test_snr_huge_theta_concentrates():
    y = simulate_snr(SnrModelSpec(5.0, 100), 1e9, SeedSpec(13)).outputs
    assert np.all(np.abs(y - 5.0) <= 0.01)


@pytest.mark.parametrize("theta", [0.0, -1.0])
def test_snr_rejects_nonpositive_theta(theta):
    with pytest.raises(DomainError):
        simulate_snr(SnrModelSpec(5.0, 10), theta, SeedSpec(0))


def test_snr_matches_normal_cdf():
    y = simulate_snr(SnrModelSpec(5.0, 10**4), 5.0, SeedSpec(14)).outputs
    assert stats.kstest(y, "norm", args=(5.0, np.sqrt(5.0))).statistic < 0.02


def test_snr_has_no_inputs():
    s = simulate_snr(SnrModelSpec(5.0, 10), 5.0, SeedSpec(0))
    assert s.inputs is None and not s.controlled


def test_nonlinear_theta_zero_variance_and_whiteness():
    y = simulate_nonlinear(NonlinearSystemSpec(N=10**5), 0.0, SeedSpec(15)).outputs
    assert 0.104 <= y.var(ddof=1) <= 0.116
    yc = y - y.mean()
    lag2 = np.dot(yc[2:], yc[:-2]) / np.dot(yc, yc)
    assert abs(lag2) < 0.05


def test_nonlinear_stable_at_half():
    a, _ = transition_coefficients(0.5)
    assert abs(a) < 1
    y = simulate_nonlinear(NonlinearSystemSpec(N=500), 0.5, SeedSpec(16)).outputs
    assert np.all(np.isfinite(y)) and np.max(np.abs(y)) < 1e3


def test_nonlinear_is_deterministic():
    a = simulate_nonlinear(NonlinearSystemSpec(N=300), 0.9, SeedSpec(17))
    b = simulate_nonlinear(NonlinearSystemSpec(N=300), 0.9, SeedSpec(17))
    assert a.outputs.tobytes() == b.outputs.tobytes()
    assert a.inputs.tobytes() == b.inputs.tobytes()


@pytest.mark.parametrize("theta", [0.91, -1.0])
def test_nonlinear_domain(theta):
    with pytest.raises(DomainError):
        simulate_nonlinear(NonlinearSystemSpec(N=10), theta, SeedSpec(0))


@settings(max_examples=30, deadline=None)
@given(theta=st.floats(-0.9, 0.9), n=st.integers(2, 40))
def test_lfilter_propagation_matches_loop(theta, n):
    u = SeedSpec(5).generator().standard_normal(n)
    a, b = transition_coefficients(theta)
    x = np.zeros(n)
    for k in range(1, n):
        x[k] = a * x[k - 1] + b * u[k - 1]
    np.testing.assert_allclose(propagate_x2(theta, u), x, rtol=1e-12, atol=1e-12)


def test_noise_free_output_is_the_propagated_state():
    spec = NonlinearSystemSpec(N=200).noise_free()
    s = simulate_nonlinear(spec, 0.2, SeedSpec(3))
    np.testing.assert_array_equal(s.outputs, propagate_x2(0.2, s.inputs))


@pytest.mark.parametrize("controlled", [False, True])
def test_record_csv_roundtrip(tmp_path, controlled):
    if controlled:
        s = simulate_nonlinear(NonlinearSystemSpec(N=50), 0.3, SeedSpec(4))
    else:
        s = simulate_snr(SnrModelSpec(5.0, 50), 5.0, SeedSpec(4))
    path = tmp_path / "rec.csv"
    write_record_csv(s, path)
    assert path.read_text().splitlines()[0] == "t,y,u"
    back = read_record_csv(path)
    assert back.outputs.tobytes() == s.outputs.tobytes()
    if controlled:
        assert back.inputs.tobytes() == s.inputs.tobytes()
    else:
        assert back.inputs is None
