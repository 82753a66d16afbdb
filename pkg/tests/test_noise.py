import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ahdp.noise import (
    LaplaceRelease,
    Rng,
    laplace_cdf,
    laplace_log_cdf,
    laplace_log_density,
    laplace_sample,
)

reals = st.floats(-1e3, 1e3)
scales = st.floats(1e-3, 1e3)


def test_moments_of_a_million_draws():
    x = laplace_sample(Rng(11), 1.0, 10**6)
    assert abs(x.mean()) < 0.005
    assert abs(x.var() - 2.0) < 0.02


def test_same_seed_same_stream():
    np.testing.assert_array_equal(laplace_sample(Rng(5), 2.0, 100), laplace_sample(Rng(5), 2.0, 100))
    assert not np.array_equal(laplace_sample(Rng(5), 2.0, 100), laplace_sample(Rng(6), 2.0, 100))


def test_child_streams_are_addressed_by_index():
    a = Rng(3).child(4, 2).uniform(size=5)
    parent = Rng(3)
    parent.uniform(size=1000)
    np.testing.assert_array_equal(parent.child(4, 2).uniform(size=5), a)
    assert not np.array_equal(Rng(3).child(4, 3).uniform(size=5), a)


def test_kolmogorov_smirnov_against_the_analytic_cdf():
    x = laplace_sample(Rng(1), 3.0, 10**5)
    stat = stats.kstest(x, lambda z: laplace_cdf(z, 3.0)).statistic
    assert stat < 0.01


def test_open_interval_uniforms():
    u = Rng(0).uniform_open(10**5)
    assert u.min() > 0 and u.max() < 1


def test_log_density_examples():
    assert laplace_log_density(0.0, 1.0) == pytest.approx(-math.log(2), abs=1e-15)
    assert laplace_log_density(4.0, 4.0) == pytest.approx(-math.log(8) - 1, abs=1e-15)


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
def test_scale_must_be_positive_and_finite(bad):
    with pytest.raises(ValueError):
        laplace_sample(Rng(0), bad)
    with pytest.raises(ValueError):
        laplace_log_density(0.0, bad)


def test_seed_range():
    Rng(2**64 - 1)
    with pytest.raises(ValueError):
        Rng(2**64)
    with pytest.raises(ValueError):
        Rng(-1)


@given(reals, scales)
def test_log_density_is_symmetric(x, lam):
    assert laplace_log_density(x, lam) == laplace_log_density(-x, lam)


@given(reals, reals, scales)
def test_log_density_is_lipschitz(x, y, lam):
    gap = abs(laplace_log_density(x, lam) - laplace_log_density(y, lam))
    assert gap <= abs(x - y) / lam * (1 + 1e-12) + 1e-12


@given(st.floats(-50, 50), scales)
def test_log_cdf_matches_cdf(x, lam):
    assert math.exp(laplace_log_cdf(x, lam)) == pytest.approx(laplace_cdf(x, lam), rel=1e-12)


def test_release_shapes_and_density():
    rel = LaplaceRelease([1.0, -2.0], [1.0, 3.0])
    assert rel.sample(Rng(0)).shape == (2,)
    assert rel.sample(Rng(0), 7).shape == (7, 2)
    expected = -math.log(2) - math.log(6)
    assert rel.log_density(np.array([1.0, -2.0])) == pytest.approx(expected, abs=1e-15)
    assert len(rel.concat(LaplaceRelease(0.0, 2.0))) == 3
