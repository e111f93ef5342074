import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twostage.core import (
    ConfigurationError,
    InputTooShortError,
    ObservationSeries,
    PriorSpec,
    SeedSpec,
    as_parameter,
    sample_prior,
)

u64 = st.integers(min_value=0, max_value=2**64 - 1)


def test_prior_draws_stay_in_box():
    draws = sample_prior(PriorSpec(2.0, 10.0), 3, SeedSpec(1))
    assert draws.shape == (3, 1)
    assert np.all((draws >= 2.0) & (draws <= 10.0))


def test_narrow_box_draws_collapse():
    draws = sample_prior(PriorSpec(4.999999, 5.000001), 100, SeedSpec(2))
    assert np.max(np.abs(draws - 5.0)) <= 1e-6


def test_unit_box_mean_lln():
    draws = sample_prior(PriorSpec(0.0, 1.0), 10**5, SeedSpec(3))
    assert 0.497 <= draws.mean() <= 0.503


@pytest.mark.parametrize("lower, upper", [(1.0, 1.0), (2.0, 1.0), ((0.0, 0.0), (1.0,)), (0.0, np.inf)])
def test_invalid_prior_bounds(lower, upper):
    with pytest.raises(ConfigurationError):
        PriorSpec(lower, upper)


def test_count_must_be_positive():
    with pytest.raises(ConfigurationError):
        sample_prior(PriorSpec(0.0, 1.0), 0, SeedSpec(0))


@settings(max_examples=30, deadline=None)
@given(master=u64, stream=u64, count=st.integers(1, 50))
def test_sampling_is_reproducible(master, stream, count):
    prior = PriorSpec((0.0, -1.0), (1.0, 1.0))
    a = sample_prior(prior, count, SeedSpec(master, stream))
    b = sample_prior(prior, count, SeedSpec(master, stream))
    assert a.tobytes() == b.tobytes()


@settings(max_examples=20, deadline=None)
@given(master=u64, s1=u64, s2=u64)
def test_streams_look_independent(master, s1, s2):
    if s1 == s2:
        return
    a = SeedSpec(master, s1).generator().random(10**4)
    b = SeedSpec(master, s2).generator().random(10**4)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05


def test_spawned_paths_differ_from_parent():
    base = SeedSpec(7)
    x = base.generator().random(4)
    y = base.spawn(0).generator().random(4)
    z = base.spawn(1).generator().random(4)
    assert not np.array_equal(x, y) and not np.array_equal(y, z)


@pytest.mark.parametrize("bad", [-1, 2**64])
def test_seed_components_are_u64(bad):
    with pytest.raises(ConfigurationError):
        SeedSpec(bad)
    with pytest.raises(ConfigurationError):
        SeedSpec(0, bad)


def test_series_is_immutable_and_validated():
    s = ObservationSeries([1.0, 2.0], inputs=[0.0, 1.0])
    assert len(s) == 2 and s.controlled
    with pytest.raises(ValueError):
        s.outputs[0] = 3.0
    with pytest.raises(ConfigurationError):
        ObservationSeries([1.0, np.nan])
    with pytest.raises(ConfigurationError):
        ObservationSeries([1.0, 2.0], inputs=[1.0])
    with pytest.raises(InputTooShortError):
        ObservationSeries([])


def test_parameter_vector_checks():
    assert as_parameter(3.0).shape == (1,)
    with pytest.raises(ConfigurationError):
        as_parameter([1.0, np.inf])
    with pytest.raises(ConfigurationError):
        as_parameter([1.0, 2.0], dim=1)
