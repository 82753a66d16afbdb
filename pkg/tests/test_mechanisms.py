import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ahdp.dataset import Dataset, Record
from ahdp.mechanisms import (
    CountStage,
    HistogramStage,
    MeanStage,
    QueryFunction,
    RegressionStage,
    SumStage,
    count_estimate,
    frequency_estimate,
    frequency_release,
    keep_probability,
    linear_query,
    linear_query_release,
    mean_estimate,
    mean_release,
    regression,
    regression_release,
    sample_mechanism,
    sample_subsample,
    sum_estimate,
)
from ahdp.noise import Rng
from ahdp.privacy import CappedEpsilon, Constant, Epsilon, OneMinusExp, Ratio, Scaled, Sum

HALF = Scaled(OneMinusExp(), 0.5)


def test_weighted_sum_on_three_value_dataset(example_dataset):
    rel = linear_query_release(example_dataset, QueryFunction.identity(0, 2), OneMinusExp())
    expected = 10 * (1 - math.exp(-1)) + 20 * (1 - math.exp(-2))
    assert rel.center[0] == pytest.approx(expected, abs=1e-12)
    assert rel.scale[0] == 2.0


def test_weighted_sum_when_top_users_demand_nothing():
    d = Dataset({(0.0, 0.0): 10, (1.0, 1.0): 10, (2.0, math.inf): 10})
    r = sum_estimate(d, 0, 2, OneMinusExp(), None, audit=True)
    assert r.output == pytest.approx(26.32, abs=1e-2)
    assert r.output == pytest.approx(10 * (1 - math.exp(-1)) + 20, abs=1e-12)


def test_mean_parts_on_three_value_dataset(example_dataset):
    rel = mean_release(example_dataset, 0, 2, HALF, HALF)
    assert rel.center[0] == pytest.approx(11.8, abs=1e-2)
    assert rel.center[1] == pytest.approx(7.48, abs=1e-2)
    np.testing.assert_array_equal(rel.scale, [2.0, 1.0])
    infinite = Dataset({(0.0, 0.0): 10, (1.0, 1.0): 10, (2.0, math.inf): 10})
    rel = mean_release(infinite, 0, 2, HALF, HALF)
    assert rel.center == pytest.approx([13.16, 8.16], abs=1e-2)


def test_empty_and_degenerate_linear_queries():
    rel = linear_query_release(Dataset(), QueryFunction.identity(0, 5), Epsilon())
    assert rel.center[0] == 0 and rel.scale[0] == 5
    r = count_estimate(Dataset({(5.0, 1.0): 3}), Epsilon(), None, audit=True)
    assert r.output == 3.0 and r.noiseless_part.tolist() == [3.0]
    r = sum_estimate(Dataset({(0.7, 1.0): 9}), 0.25, 1.0, Constant(0), None, audit=True)
    assert r.output == 0.25
    r = linear_query(Dataset({(1.0, 2.0): 2}), QueryFunction.constant(3.0), Constant(0.5),
                     None, audit=True)
    assert r.output == 3.0


def test_noise_is_added_outside_audit_mode(example_dataset):
    r = sum_estimate(example_dataset, 0, 2, OneMinusExp(), Rng(0))
    assert r.noiseless_part is None and not r.flags["audit"]
    draws = sum_estimate(example_dataset, 0, 2, OneMinusExp(), Rng(0), size=200_000).output
    assert draws.mean() == pytest.approx(23.6145, abs=0.03)
    assert draws.var() == pytest.approx(8.0, rel=0.03)


def test_mean_single_record():
    low, x = 0.5, 2.0
    d = Dataset({(x, 1.0): 1})
    r = mean_estimate(d, low, 3.0, Constant(0.5), Constant(0.5), None, audit=True)
    assert r.output == pytest.approx((low + 0.5 * (x - low)) / 1.0)
    r = mean_estimate(d, low, 3.0, Constant(0.5), Constant(0.5), None, floor=0.25, audit=True)
    assert r.output == pytest.approx((low + 0.5 * (x - low)) / 0.5)


def test_mean_spends_both_parts(example_dataset):
    r = mean_estimate(example_dataset, 0, 2, HALF, HALF, Rng(1))
    assert isinstance(r.spent, Sum)
    assert r.spent(0, 1.0) == pytest.approx(1 - math.exp(-1))


def test_floor_only_acts_below_it(example_dataset):
    a = mean_estimate(example_dataset, 0, 2, HALF, HALF, Rng(9), size=5000).output
    b = mean_estimate(example_dataset, 0, 2, HALF, HALF, Rng(9), floor=1e-300, size=5000).output
    den = mean_estimate(example_dataset, 0, 2, HALF, HALF, Rng(9), size=5000)
    rel = mean_release(example_dataset, 0, 2, HALF, HALF)
    noisy = rel.sample(Rng(9), 5000)
    above = noisy[:, 1] >= 1.0
    np.testing.assert_array_equal(a[above], b[above])
    assert den.flags["floored"] == bool(np.any(~above))


def test_mean_clip_is_optional(example_dataset):
    out = mean_estimate(example_dataset, 0, 2, HALF, HALF, Rng(2), size=10_000).output
    assert out.min() < 0 or out.max() > 2
    clipped = mean_estimate(example_dataset, 0, 2, HALF, HALF, Rng(2), clip=True, size=10_000).output
    assert clipped.min() >= 0 and clipped.max() <= 2


def test_frequency_examples():
    d = Dataset({(1, 0.7): 5, (2, 0.7): 5})
    r = frequency_estimate(d, 2, Constant(0.5), Constant(0.5), None, audit=True)
    np.testing.assert_allclose(r.output, [0.5, 0.5])
    r = frequency_estimate(Dataset(), 3, Constant(0.5), Constant(0.5), None, audit=True)
    np.testing.assert_array_equal(r.output, [0.0, 0.0, 0.0])
    assert frequency_release(d, 2, Constant(1.0)).scale.tolist() == [1.0, 1.0]


def test_frequency_draws_have_unit_noise_per_bin():
    d = Dataset({(1, 1.0): 30, (3, 2.0): 10})
    rel = frequency_release(d, 3, Constant(1.0), Constant(1.0))
    np.testing.assert_array_equal(rel.center, [30.0, 0.0, 10.0, 40.0])
    out = frequency_estimate(d, 3, Constant(1.0), Constant(1.0), Rng(4), size=20_000).output
    assert out.shape == (20_000, 3)
    assert out.mean(axis=0) == pytest.approx([0.75, 0.0, 0.25], abs=0.01)


@pytest.mark.parametrize("call,match", [
    (lambda: sum_estimate(Dataset({(1.0, math.inf): 1}), 0, 1, Epsilon(), Rng(0)), "non-finite"),
    (lambda: sum_estimate(Dataset({(1.5, 1.0): 1}), 0, 1, Epsilon(), Rng(0)), "outside"),
    (lambda: mean_estimate(Dataset(), 0, 1, HALF, HALF, Rng(0), floor=0), "floor"),
    (lambda: mean_estimate(Dataset(), 1, 1, HALF, HALF, Rng(0)), "low < high"),
    (lambda: frequency_estimate(Dataset({(4, 1.0): 1}), 3, HALF, HALF, Rng(0)), "labels"),
    (lambda: sample_subsample(Dataset(), Epsilon(), 0, Rng(0)), "t must be"),
    (lambda: regression(Dataset({((0.5, 1.5), 1.0): 1}), Epsilon(), Rng(0)), r"\[-1, 1\]"),
    (lambda: sum_estimate(Dataset({((0.5, 0.5), 1.0): 1}), 0, 1, Epsilon(), Rng(0)), "scalar"),
    (lambda: sum_estimate(Dataset({(0.5, 1.0): 1}), 0, 1, Epsilon(), None), "random stream"),
])
def test_input_validation(call, match):
    with pytest.raises(ValueError, match=match):
        call()


def test_keep_probability_examples():
    assert keep_probability(2.0, 2.0) == 1.0
    assert keep_probability(5.0, 2.0) == 1.0
    assert keep_probability(0.0, 2.0) == 0.0
    assert keep_probability(1.0, 2.0) == pytest.approx(1 / (math.e + 1), abs=1e-12)
    assert keep_probability(math.inf, 0.5) == 1.0


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0.01, 5))
def test_keep_probability_is_monotone(a, b, t):
    lo, hi = sorted((a, b))
    assert 0 <= keep_probability(lo, t) <= keep_probability(hi, t) <= 1


def test_subsample_counts_are_binomial():
    d = Dataset({(0.0, 1.0): 40, (1.0, 0.2): 60})
    t = 2.0
    kept = np.array([[s.count((0.0, 1.0)), s.count((1.0, 0.2))]
                     for s in (sample_subsample(d, Epsilon(), t, Rng(0).child(i)) for i in range(10_000))])
    for col, (h, eps) in enumerate([(40, 1.0), (60, 0.2)]):
        p = math.expm1(eps) / math.expm1(t)
        sigma = math.sqrt(h * p * (1 - p) / 10_000)
        assert abs(kept[:, col].mean() - h * p) < 3 * sigma


def test_sample_mechanism_degenerate_cases():
    d = Dataset({(0.2, 3.0): 2, (0.9, 1.0): 1})
    r = sample_mechanism(d, Epsilon(), 1.0, SumStage(0, 1), Rng(0), audit=True)
    assert r.noiseless_part["subsample"] == d
    assert r.output == pytest.approx(1.3)
    assert isinstance(r.spent, CappedEpsilon) and r.spent(0, 5.0) == 1.0
    r = sample_mechanism(d, Constant(0), 1.0, CountStage(), Rng(0), audit=True)
    assert r.noiseless_part["subsample"] == Dataset() and r.output == 0.0


def test_sample_mechanism_stage_scales():
    assert SumStage(-3, 2).scale(0.5).tolist() == [6.0]
    assert CountStage().scale(0.25).tolist() == [4.0]
    assert MeanStage(0, 150).scale(0.5).tolist() == [600.0, 4.0]
    assert HistogramStage(3).scale(2.0).tolist() == [0.5, 0.5, 0.5]
    assert RegressionStage(2).scale(2.0).tolist() == [3.0] * 6


def test_sample_mechanism_rejects_unknown_stage():
    with pytest.raises(ValueError, match="stage"):
        sample_mechanism(Dataset(), Epsilon(), 1.0, object(), Rng(0))
    with pytest.raises(ValueError, match="t must be"):
        sample_mechanism(Dataset(), Epsilon(), -1.0, CountStage(), Rng(0))


def test_histogram_stage_normalizes():
    d = Dataset({(1, 5.0): 3, (2, 5.0): 1})
    r = sample_mechanism(d, Epsilon(), 1.0, HistogramStage(2), Rng(0), audit=True)
    np.testing.assert_allclose(r.output, [0.75, 0.25])


def _regression_data(rng, n, d, eps_levels=(0.1, 0.5, 2.0)):
    X = rng.uniform(-1, 1, size=(n, d))
    y = np.clip(X @ rng.uniform(-0.5, 0.5, size=d) + rng.normal(0, 0.1, n), -1, 1)
    eps = rng.choice(np.array(eps_levels), size=n)
    return Dataset.from_records(zip(map(tuple, np.column_stack([X, y]).tolist()), eps.tolist()))


def test_regression_noise_scale_is_d_squared_plus_d():
    d = _regression_data(Rng(0), 30, 8)
    rel = regression_release(d, OneMinusExp())
    assert len(rel) == 72 and np.all(rel.scale == 72.0)


def test_regression_noiseless_is_ordinary_least_squares():
    data = _regression_data(Rng(1), 120, 4)
    out = regression(data, Constant(1.0), None, audit=True)
    Z = np.array([r.value for r in data.expand()])
    ols = np.linalg.lstsq(Z[:, :-1], Z[:, -1], rcond=None)[0]
    np.testing.assert_allclose(out.theta, ols, atol=1e-8)
    assert not out.fallback and out.ridge == 0.0


def test_regression_one_covariate_of_ones_is_weighted_mean():
    records = [((1.0, 0.8), 0.5), ((1.0, -0.2), 2.0), ((1.0, 0.4), 2.0)]
    out = regression(Dataset.from_records(records), Ratio(), None, audit=True)
    w = np.array([0.5 / 1.5, 2 / 3, 2 / 3])
    y = np.array([0.8, -0.2, 0.4])
    assert out.theta[0] == pytest.approx((w * y).sum() / w.sum(), abs=1e-12)


def test_regression_noise_is_asymmetric_unless_asked():
    data = _regression_data(Rng(2), 50, 3)
    plain = regression(data, OneMinusExp(), Rng(5), ridge=1.0)
    assert plain.A is None
    sym = regression(data, OneMinusExp(), Rng(5), ridge=1.0, symmetrize=True)
    assert not np.allclose(plain.theta, sym.theta)


def test_regression_ridge_fallback_on_singular_system():
    data = Dataset({((0.5, 0.5, 0.1), 1.0): 4})
    out = regression(data, Constant(1.0), None, audit=True)
    assert out.fallback and out.ridge == 1e-6
    assert np.all(np.isfinite(out.theta))


zero_weight_records = st.sampled_from([Record.make(0.25, 0.0), Record.make(1.0, 0.0)])
scalar_datasets = st.dictionaries(
    st.tuples(st.sampled_from([0.0, 0.25, 0.5, 1.0]), st.sampled_from([0.0, 0.3, 1.0, 4.0])),
    st.integers(1, 5), max_size=5).map(Dataset)


@given(scalar_datasets, zero_weight_records)
def test_zero_weight_records_leave_noiseless_parts_bitwise_equal(d, r):
    d2 = d + Dataset.from_records([r])
    f = QueryFunction.identity(0, 1)
    assert (linear_query_release(d, f, OneMinusExp()).center.tobytes()
            == linear_query_release(d2, f, OneMinusExp()).center.tobytes())
    assert (mean_release(d, 0, 1, HALF, Ratio()).center.tobytes()
            == mean_release(d2, 0, 1, HALF, Ratio()).center.tobytes())


@given(st.lists(st.tuples(st.integers(1, 3), st.sampled_from([0.0, 0.5, 2.0])), max_size=8),
       st.integers(1, 3))
def test_zero_weight_invariance_for_frequencies(records, label):
    d = Dataset.from_records(records)
    d2 = d + Dataset.from_records([(label, 0.0)])
    a = frequency_release(d, 3, OneMinusExp(), Ratio()).center
    b = frequency_release(d2, 3, OneMinusExp(), Ratio()).center
    assert a.tobytes() == b.tobytes()


def test_zero_weight_invariance_for_regression():
    base = _regression_data(Rng(3), 20, 3)
    extra = Dataset.from_records([((0.3, -0.9, 0.1, 0.5), 0.0)])
    a = regression_release(base, OneMinusExp()).center
    b = regression_release(base + extra, OneMinusExp()).center
    assert a.tobytes() == b.tobytes()


@given(st.lists(st.tuples(st.sampled_from([0.0, 0.5, 1.0]), st.sampled_from([0.1, 1.0, 3.0])),
                min_size=1, max_size=10), st.randoms())
def test_linear_query_ignores_record_order(records, random):
    shuffled = list(records)
    random.shuffle(shuffled)
    f = QueryFunction.identity(0, 1)
    a = linear_query(Dataset.from_records(records), f, Ratio(), Rng(7)).output
    b = linear_query(Dataset.from_records(shuffled), f, Ratio(), Rng(7)).output
    assert a == b
