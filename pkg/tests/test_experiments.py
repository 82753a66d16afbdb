import math

import numpy as np
import pytest

from ahdp.dataset import Dataset
from ahdp.experiments import (
    DEFAULT_CONTINGENCY,
    EDUCATION_LEVELS,
    chi_squared_pvalue,
    contingency_table,
    freq_sweep,
    gen_education_eps,
    gen_regression_eps,
    gen_weight_eps,
    housing_split,
    load_housing_csv,
    mean_sweep,
    normalize_regression,
    parse_method,
    regression_sweep,
    synthetic_housing,
)


@pytest.fixture(scope="module")
def weights():
    return gen_weight_eps(2200, seed=0)


def _pearson(d: Dataset):
    values, eps, counts = d.arrays()
    reps = counts.astype(int)
    return float(np.corrcoef(np.repeat(values, reps), np.repeat(eps, reps))[0, 1])


def test_weight_generator_ranges_and_correlation(weights):
    assert weights.size == 2200
    for record in weights.support():
        assert 0 <= record.value <= 150 and 0 <= record.epsilon <= 3
    assert abs(_pearson(weights) + 0.84) <= 0.05


def test_weight_generator_independence_switch():
    d = gen_weight_eps(2200, seed=1, independent=True)
    assert abs(_pearson(d)) <= 0.05


def test_weight_generator_rejects_bad_targets():
    for bad in (0.0, 0.3, -1.0):
        with pytest.raises(ValueError):
            gen_weight_eps(100, 0, bad)
    with pytest.raises(ValueError):
        gen_weight_eps(0, 0)


def test_education_generator():
    d = gen_education_eps(3000, seed=0)
    assert d.size == 3000
    for record in d.support():
        assert record.value in range(1, 7) and record.epsilon in EDUCATION_LEVELS
    table = contingency_table(d)
    assert chi_squared_pvalue(table) < 1e-6
    column = DEFAULT_CONTINGENCY.sum(axis=0)
    observed = table.sum(axis=0) / 3000
    assert np.all(np.abs(observed - column) <= 3 * np.sqrt(column * (1 - column) / 3000))


def test_education_null_model():
    uniform = np.full((6, 5), 1 / 30)
    pvals = [chi_squared_pvalue(contingency_table(gen_education_eps(3000, s, uniform)))
             for s in range(5)]
    assert np.median(pvals) >= 0.01


def test_education_rejects_malformed_matrix():
    with pytest.raises(ValueError):
        gen_education_eps(10, 0, np.full((6, 5), 0.1))
    with pytest.raises(ValueError):
        gen_education_eps(10, 0, np.full((5, 6), 1 / 30))


def test_regression_generator():
    X, y = synthetic_housing(n=20000)
    assert np.all(np.abs(X) <= 1) and np.all(np.abs(y) <= 1)
    train, _ = housing_split(X, y)
    d = gen_regression_eps(train, seed=0)
    eps = np.array([r.epsilon for r in d.support() for _ in range(d.count(r))])
    assert eps.min() >= math.exp(-5) and eps.max() <= math.exp(2)
    logs = np.log(eps)
    assert abs(logs.mean() + 1.5) <= 3 * 7 / math.sqrt(12 * len(logs))
    targets = np.array([r.value[-1] for r in d.support() for _ in range(d.count(r))])
    assert abs(np.corrcoef(logs, targets)[0, 1]) <= 0.05
    with pytest.raises(ValueError):
        gen_regression_eps(train * 2, seed=0)


def test_housing_csv_round_trip(tmp_path):
    path = tmp_path / "housing.csv"
    path.write_text("x1,x2,y\n1,2,3\n4,5,6\n7,8,10\n")
    X, y = load_housing_csv(path)
    assert X.shape == (3, 2) and list(y) == [3, 6, 10]
    Xn, yn = normalize_regression(X, y)
    assert Xn.min() == -1 and Xn.max() == 1 and yn[0] == -1 and yn[-1] == 1
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        load_housing_csv(tmp_path / "bad.csv")


def test_parse_method():
    assert parse_method("sm-t0.5").t == 0.5
    assert parse_method("lq-ratio-half").family == "lq"
    assert parse_method("non-private").family == "baseline"
    assert parse_method("m1:constant:1").family == "m1"
    for bad in ("sm-t0", "lq-foo-half", "magic"):
        with pytest.raises(ValueError):
            parse_method(bad)


def test_noiseless_uniform_weights_are_exact(weights):
    r = mean_sweep(weights, [50, 200], trials=1, methods=["lq:constant:1"], audit=True)
    assert r.series("lq:constant:1") == pytest.approx([0, 0], abs=1e-20)
    edu = gen_education_eps(500, 0)
    f = freq_sweep(edu, [100, 500], trials=1, methods=["lq:constant:1"], audit=True)
    assert f.series("lq:constant:1") == pytest.approx([0, 0], abs=1e-15)


def test_freq_errors_bounded():
    edu = gen_education_eps(800, 3)
    r = freq_sweep(edu, [20, 400], trials=20, seed=1)
    assert all(0 <= v <= 1 for v in r.values.values())
    assert len(list(r.rows())) == len(r.methods) * 2


def test_sweeps_are_deterministic(weights):
    a = mean_sweep(weights, [100, 300], trials=10, seed=7)
    b = mean_sweep(weights, [100, 300], trials=10, seed=7)
    assert a.to_csv() == b.to_csv()
    c = mean_sweep(weights, [100, 300], trials=10, seed=8)
    assert a.to_csv() != c.to_csv()


def test_method_subset_does_not_change_other_methods(weights):
    full = mean_sweep(weights, [100], trials=5, seed=3)
    part = mean_sweep(weights, [100], trials=5, seed=3, methods=["sm-t0.5"])
    assert full.value("sm-t0.5", 100) == part.value("sm-t0.5", 100)


def test_independence_lowers_linear_query_error(weights):
    indep = gen_weight_eps(2200, seed=0, independent=True)
    methods = ["lq-eps-half", "lq-one-minus-exp-half", "lq-ratio-half"]
    corr = mean_sweep(weights, [2000], trials=40, methods=methods, seed=2)
    free = mean_sweep(indep, [2000], trials=40, methods=methods, seed=2)
    for m in methods:
        assert free.value(m, 2000) < corr.value(m, 2000)


def test_sweep_size_validation(weights):
    with pytest.raises(ValueError):
        mean_sweep(weights, [5000], trials=1)
    with pytest.raises(ValueError):
        mean_sweep(weights, [0], trials=1)


def test_regression_sweep_small():
    X, y = synthetic_housing(n=3000, d=3)
    train, test = housing_split(X, y, n_train=2500)
    d = gen_regression_eps(train, 0)
    r = regression_sweep(d, test, [500, 2500], trials=5, seed=0)
    base = r.series("non-private")
    for m in r.methods:
        assert all(v >= min(base) for v in r.series(m))
    with pytest.raises(ValueError):
        regression_sweep(d, test[:, 1:], [100], trials=1)


def test_result_files(tmp_path, weights):
    r = mean_sweep(weights, [100], trials=2, methods=["sm-t2"])
    r.write(tmp_path)
    lines = (tmp_path / "results.csv").read_text().splitlines()
    assert lines[0] == "method,size,metric,value,trials,seed"
    assert lines[1].startswith("sm-t2,100,mse,")
    assert (tmp_path / "results.json").exists()
