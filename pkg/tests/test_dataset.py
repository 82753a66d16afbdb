import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ahdp.dataset import (
    MAX_COUNT,
    CorrelationDomain,
    Dataset,
    Multiset,
    Record,
    add,
    canonical_epsilon,
    project_data,
    read_dataset_csv,
    subtract,
    weighted_distance,
    write_dataset_csv,
)
from ahdp.privacy import Epsilon, OneMinusExp

RECORDS = [Record.make(v, e) for v in (0, 1, 2) for e in (0.0, 0.5, 1.0, math.inf)]

datasets = st.dictionaries(st.sampled_from(RECORDS), st.integers(1, 10), max_size=6).map(Dataset)


def test_add_examples():
    assert add(Dataset(), Dataset()) == Dataset()
    d = Dataset({(1, 1): 2})
    d2 = Dataset({(1, 1): 1, (0, 0): 1})
    assert add(d, d2) == Dataset({(1, 1): 3, (0, 0): 1})
    assert add(d, Dataset()) == d


def test_subtract_truncates():
    assert subtract(Dataset({(1, 1): 3}), Dataset({(1, 1): 1})) == Dataset({(1, 1): 2})
    assert subtract(Dataset({(1, 1): 1}), Dataset({(1, 1): 5})) == Dataset()
    d = Dataset({(1, 1): 4, (2, 0.5): 1})
    assert subtract(d, Dataset()) == d


def test_projection_examples():
    assert project_data(Dataset({(1, 0.5): 2, (1, 2.0): 3})) == Multiset({1: 5})
    assert project_data(Dataset()) == Multiset()
    d = Dataset({(0, 0): 10, (1, 1): 10, (2, math.inf): 10})
    assert project_data(d) == Multiset({0: 10, 1: 10, 2: 10})


def test_weighted_distance_examples():
    d = Dataset({(0, 0): 10, (1, 1): 10})
    d2 = Dataset({(0, 0): 9, (1, 1): 12})
    assert weighted_distance(Epsilon(), d, d) == 0
    assert weighted_distance(Epsilon(), d, d2) == 2
    assert weighted_distance(Epsilon(), d, d + Dataset({(1, 1): 1})) == 1


def test_infinite_weight_only_counts_when_records_differ():
    d = Dataset({(2, math.inf): 3})
    assert weighted_distance(Epsilon(), d, d) == 0
    assert weighted_distance(Epsilon(), d, d + d) == math.inf


def test_zero_counts_are_dropped_and_order_is_irrelevant():
    d = Dataset({(1, 1): 0, (0, 0): 2})
    assert list(d.counts) == [Record(0, 0.0)]
    a = Dataset.from_records([(1.0, 1), (0.0, 0), (1.0, 1)])
    b = Dataset.from_records([(1.0, 1), (1.0, 1), (0.0, 0)])
    assert a == b and hash(a) == hash(b)


def test_count_limits():
    Dataset({(1, 1): MAX_COUNT})
    with pytest.raises(OverflowError):
        Dataset({(1, 1): MAX_COUNT + 1})
    with pytest.raises(ValueError):
        Dataset({(1, 1): -1})


def test_epsilon_parsing():
    assert canonical_epsilon("inf") == math.inf
    assert canonical_epsilon(" INF ") == math.inf
    assert canonical_epsilon(-0.0) == 0.0 and math.copysign(1, canonical_epsilon(-0.0)) == 1
    for bad in (-1, float("nan")):
        with pytest.raises(ValueError):
            canonical_epsilon(bad)
    with pytest.raises(TypeError):
        canonical_epsilon(True)


def test_mixed_kinds_rejected():
    with pytest.raises(ValueError, match="mixes"):
        Dataset.from_records([(1, 1.0), (0.5, 1.0)]).kind()


def test_arrays_grouped_in_canonical_order():
    d = Dataset.from_records([(2.0, 1), (1.0, 3), (2.0, 1), (1.0, 0.5)])
    values, eps, counts = d.arrays()
    np.testing.assert_array_equal(values, [1.0, 1.0, 2.0])
    np.testing.assert_array_equal(eps, [0.5, 3.0, 1.0])
    np.testing.assert_array_equal(counts, [1, 1, 2])


def test_correlation_domain():
    w = CorrelationDomain([(1, 2), (0, 0), (1, 2)])
    assert len(w) == 2 and w.values() == (0, 1)
    assert w.contains_dataset(Dataset({(0, 0): 4}))
    assert not w.contains_dataset(Dataset({(0, 1): 1}))
    with pytest.raises(ValueError):
        CorrelationDomain([])


@pytest.mark.parametrize("rows,header", [
    ([(1.234, 0.5), (70.0, math.inf)], "value,epsilon"),
    ([(1, 0.01), (6, 5.0), (6, 5.0)], "label,epsilon"),
    ([((0.5, -1.0, 0.25), 1.0)], "x1,x2,y,epsilon"),
])
def test_csv_round_trip(tmp_path, rows, header):
    d = Dataset.from_records(rows)
    path = tmp_path / "d.csv"
    write_dataset_csv(d, path)
    assert path.read_text().splitlines()[0] == header
    back = read_dataset_csv(path, precision=4)
    assert back == d


def test_csv_quantizes_comments_and_blanks(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text("# weights\nvalue,epsilon\n\n70.004,1\n70.001,1\n# end\n80,inf\n")
    d = read_dataset_csv(path)
    assert d == Dataset({(70.0, 1.0): 2, (80.0, math.inf): 1})


def test_csv_rejects_bad_labels_and_headers(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("label,epsilon\n0,1\n")
    with pytest.raises(ValueError, match="positive"):
        read_dataset_csv(path)
    path.write_text("foo,epsilon\n0,1\n")
    with pytest.raises(ValueError, match="header"):
        read_dataset_csv(path)


@given(datasets, datasets, datasets)
def test_weighted_distance_is_pseudometric(a, b, c):
    alpha = OneMinusExp()
    assert weighted_distance(alpha, a, a) == 0
    assert weighted_distance(alpha, a, b) == weighted_distance(alpha, b, a)
    assert weighted_distance(alpha, a, c) <= (
        weighted_distance(alpha, a, b) + weighted_distance(alpha, b, c) + 1e-12)


@given(datasets, datasets)
def test_add_and_project_commute(a, b):
    assert project_data(add(a, b)) == add(project_data(a), project_data(b))
    assert add(a, b).size == a.size + b.size
    assert project_data(a).size == a.size


@given(datasets, datasets)
def test_subtract_undoes_add(a, b):
    assert subtract(add(a, b), b) == a
