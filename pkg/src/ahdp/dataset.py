"""Multiset datasets of (data value, privacy demand) records.

A dataset is a count function over records. Every user contributes one
``Record(value, epsilon)``; datasets with the same records in a different
order are the same dataset.

Three kinds of data value are supported:

* scalar: a real number in a declared interval ``[low, high]``
* categorical: an integer label in ``{1, ..., k}``
* regression: a tuple ``(x_1, ..., x_d, y)`` with every entry in ``[-1, 1]``

Mechanisms check the kind they accept when they validate their input.
"""

from __future__ import annotations

import csv
import math
import numbers
from collections.abc import Iterable, Iterator, Mapping
from pathlib import Path
from types import MappingProxyType
from typing import Any, NamedTuple, Union

import numpy as np

MAX_COUNT = 2**32

SCALAR = "scalar"
CATEGORICAL = "categorical"
REGRESSION = "regression"

DataValue = Union[float, int, tuple]


def canonical_epsilon(epsilon: Any) -> float:
    """Parses a privacy level, accepting ``inf`` as a string or float."""
    if isinstance(epsilon, str):
        token = epsilon.strip().lower()
        if token in ("inf", "+inf", "infinity"):
            return math.inf
        epsilon = float(token)
    if isinstance(epsilon, bool) or not isinstance(epsilon, numbers.Real):
        raise TypeError(f"privacy level must be a real number, got {epsilon!r}")
    epsilon = float(epsilon)
    if math.isnan(epsilon) or epsilon < 0:
        raise ValueError(f"privacy level must be >= 0, got {epsilon!r}")
    return epsilon + 0.0  # folds -0.0 into 0.0


def canonical_value(value: Any) -> DataValue:
    if isinstance(value, bool):
        raise TypeError("boolean data values are ambiguous; use 0/1 labels")
    if isinstance(value, numbers.Integral):
        return int(value)
    if isinstance(value, numbers.Real):
        value = float(value)
        if math.isnan(value):
            raise ValueError("data value is NaN")
        return value + 0.0
    if isinstance(value, (tuple, list, np.ndarray)):
        entries = tuple(float(v) + 0.0 for v in value)
        if any(math.isnan(v) for v in entries):
            raise ValueError("regression record contains NaN")
        return entries
    raise TypeError(f"unsupported data value {value!r}")


def value_kind(value: DataValue) -> str:
    if isinstance(value, tuple):
        return REGRESSION
    if isinstance(value, int):
        return CATEGORICAL
    return SCALAR


class Record(NamedTuple):
    """One user's (data value, privacy demand) tuple."""

    value: DataValue
    epsilon: float

    @classmethod
    def make(cls, value: Any, epsilon: Any) -> "Record":
        return cls(canonical_value(value), canonical_epsilon(epsilon))


def _as_record(item: Any) -> Record:
    if isinstance(item, Record):
        return Record.make(item.value, item.epsilon)
    value, epsilon = item
    return Record.make(value, epsilon)


def _sort_key(item: Any) -> tuple:
    if isinstance(item, Record):
        value = item.value
        kind = value_kind(value)
        return (kind, value, item.epsilon)
    if isinstance(item, tuple):
        return ("tuple", item)
    return ("scalar", item)


class Multiset:
    """Immutable multiset with an explicit count function.

    Zero counts are never stored. Iteration is in a canonical sorted order so
    that sums over a multiset do not depend on how it was built.
    """

    __slots__ = ("_counts", "_sorted", "_hash")

    def __init__(self, counts: Mapping[Any, int] | None = None):
        clean: dict[Any, int] = {}
        for key, count in (counts or {}).items():
            key = self._normalize(key)
            if isinstance(count, bool) or not isinstance(count, numbers.Integral):
                raise TypeError(f"count for {key!r} must be an integer, got {count!r}")
            count = int(count)
            if count < 0:
                raise ValueError(f"negative count {count} for {key!r}")
            if count == 0:
                continue
            total = clean.get(key, 0) + count
            if total > MAX_COUNT:
                raise OverflowError(f"count for {key!r} exceeds 2^32")
            clean[key] = total
        self._counts = MappingProxyType(clean)
        self._sorted: tuple | None = None
        self._hash: int | None = None

    @staticmethod
    def _normalize(key: Any) -> Any:
        return key

    @classmethod
    def from_items(cls, items: Iterable[Any]):
        counts: dict[Any, int] = {}
        for item in items:
            item = cls._normalize(item)
            counts[item] = counts.get(item, 0) + 1
        return cls(counts)

    @property
    def counts(self) -> Mapping[Any, int]:
        return self._counts

    def count(self, item: Any) -> int:
        return self._counts.get(self._normalize(item), 0)

    def support(self) -> tuple:
        """Items with positive count, in canonical order."""
        if self._sorted is None:
            self._sorted = tuple(sorted(self._counts, key=_sort_key))
        return self._sorted

    def items(self) -> Iterator[tuple[Any, int]]:
        for key in self.support():
            yield key, self._counts[key]

    @property
    def size(self) -> int:
        return sum(self._counts.values())

    def __len__(self) -> int:
        return self.size

    def __iter__(self):
        return iter(self.support())

    def __contains__(self, item: Any) -> bool:
        return self.count(item) > 0

    def __add__(self, other: "Multiset"):
        counts = dict(self._counts)
        for key, count in other._counts.items():
            counts[key] = counts.get(key, 0) + count
        return type(self)(counts)

    def __sub__(self, other: "Multiset"):
        counts = {}
        for key, count in self._counts.items():
            remaining = count - other._counts.get(key, 0)
            if remaining > 0:
                counts[key] = remaining
        return type(self)(counts)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Multiset):
            return NotImplemented
        return dict(self._counts) == dict(other._counts)

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._counts.items()))
        return self._hash

    def sort_key(self) -> tuple:
        """Canonical encoding used for deterministic tie-breaking."""
        return tuple((_sort_key(k), c) for k, c in self.items())

    def expand(self) -> list:
        """All elements with multiplicity, in canonical order."""
        out = []
        for key, count in self.items():
            out.extend([key] * count)
        return out

    def __repr__(self) -> str:
        inner = ", ".join(f"{k!r}x{c}" for k, c in self.items())
        return f"{type(self).__name__}({{{inner}}})"


class Dataset(Multiset):
    """Multiset of :class:`Record` tuples.

    >>> d = Dataset.from_records([(1.0, 1.0), (1.0, 1.0), (0.0, 0.0)])
    >>> d.size
    3
    """

    __slots__ = ("_arrays",)

    def __init__(self, counts: Mapping[Any, int] | None = None):
        super().__init__(counts)
        self._arrays = None

    @staticmethod
    def _normalize(key: Any) -> Record:
        return _as_record(key)

    @classmethod
    def from_records(cls, records: Iterable[Any]) -> "Dataset":
        return cls.from_items(records)

    @classmethod
    def empty(cls) -> "Dataset":
        return cls()

    def kind(self) -> str | None:
        """The common value kind of all records, ``None`` for an empty dataset."""
        kinds = {value_kind(r.value) for r in self._counts}
        if not kinds:
            return None
        if len(kinds) > 1:
            raise ValueError(f"dataset mixes value kinds {sorted(kinds)}")
        return kinds.pop()

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Grouped ``(values, epsilons, counts)`` arrays in canonical order.

        Regression values come back as an ``(m, d + 1)`` matrix.
        """
        if self._arrays is None:
            support = self.support()
            eps = np.array([r.epsilon for r in support], dtype=float)
            counts = np.array([self._counts[r] for r in support], dtype=float)
            if support and isinstance(support[0].value, tuple):
                values = np.array([r.value for r in support], dtype=float)
            elif support and isinstance(support[0].value, int):
                values = np.array([r.value for r in support], dtype=np.int64)
            else:
                values = np.array([r.value for r in support], dtype=float)
            self._arrays = (values, eps, counts)
        return self._arrays


def add(d1: Multiset, d2: Multiset) -> Multiset:
    return d1 + d2


def subtract(d1: Multiset, d2: Multiset) -> Multiset:
    """Pointwise truncated difference ``max(0, h1 - h2)``."""
    return d1 - d2


def project_data(dataset: Dataset) -> Multiset:
    """Marginal multiset over data values, summing counts across privacy levels."""
    counts: dict[Any, int] = {}
    for record, count in dataset.items():
        counts[record.value] = counts.get(record.value, 0) + count
    return Multiset(counts)


def weighted_distance(alpha, d1: Multiset, d2: Multiset) -> float:
    """Add-remove distance with per-record weights ``alpha(value, epsilon)``.

    Records whose counts agree contribute nothing, even when their weight is
    infinite.
    """
    total = 0.0
    keys = set(d1.counts) | set(d2.counts)
    for key in sorted(keys, key=_sort_key):
        diff = abs(d1.count(key) - d2.count(key))
        if diff == 0:
            continue
        if isinstance(key, Record):
            weight = alpha(key.value, key.epsilon)
        else:
            weight = alpha(key)
        if weight == 0:
            continue
        total += weight * diff
    return total


class CorrelationDomain:
    """Finite set of admissible (data value, privacy demand) records."""

    __slots__ = ("_records",)

    def __init__(self, records: Iterable[Any]):
        self._records = tuple(sorted({_as_record(r) for r in records}, key=_sort_key))
        if not self._records:
            raise ValueError("correlation domain must be non-empty")

    @property
    def records(self) -> tuple[Record, ...]:
        return self._records

    def values(self) -> tuple:
        return tuple(sorted({r.value for r in self._records}, key=_sort_key))

    def __iter__(self) -> Iterator[Record]:
        return iter(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, record: Any) -> bool:
        return _as_record(record) in self._records

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CorrelationDomain):
            return NotImplemented
        return self._records == other._records

    def __hash__(self) -> int:
        return hash(self._records)

    def contains_dataset(self, dataset: Dataset) -> bool:
        allowed = set(self._records)
        return all(r in allowed for r in dataset.counts)

    def __repr__(self) -> str:
        return f"CorrelationDomain({list(self._records)!r})"


# -- CSV ingestion ---------------------------------------------------------


def _data_rows(path: Path) -> Iterator[list[str]]:
    with open(path, newline="") as fh:
        lines = (line for line in fh
                          if line.strip() and not line.lstrip().startswith("#"))
        yield from csv.reader(lines)


def _detect_kind(header: list[str]) -> str:
    names = [h.strip().lower() for h in header]
    if names == ["value", "epsilon"]:
        return SCALAR
    if names == ["label", "epsilon"]:
        return CATEGORICAL
    if (len(names) >= 3 and names[-1] == "epsilon" and names[-2] == "y"
            and all(n == f"x{i + 1}" for i, n in enumerate(names[:-2]))):
        return REGRESSION
    raise ValueError(f"unrecognized dataset header {header!r}")


def read_dataset_csv(path: str | Path, precision: int = 2) -> Dataset:
    """Reads a dataset CSV, one record per row.

    Headers select the kind: ``value,epsilon`` (scalar), ``label,epsilon``
    (categorical) or ``x1,...,xd,y,epsilon`` (regression). Scalar values are
    rounded to ``precision`` decimals so equal weights group together.
    """
    rows = _data_rows(Path(path))
    try:
        header = next(rows)
    except StopIteration:
        raise ValueError(f"{path}: empty dataset file") from None
    kind = _detect_kind(header)
    counts: dict[Record, int] = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {lineno} has {len(row)} fields, "
                                              f"expected {len(header)}")
        epsilon = canonical_epsilon(row[-1])
        if kind == SCALAR:
            value: DataValue = round(float(row[0]), precision) + 0.0
        elif kind == CATEGORICAL:
            label = float(row[0])
            if not label.is_integer() or label < 1:
                raise ValueError(f"{path}: row {lineno}: labels must be positive "
                                                  f"integers, got {row[0]!r}")
            value = int(label)
        else:
            value = tuple(float(v) + 0.0 for v in row[:-1])
        record = Record.make(value, epsilon)
        counts[record] = counts.get(record, 0) + 1
    return Dataset(counts)


def _fmt(x: float) -> str:
    return "inf" if x == math.inf else repr(float(x))


def write_dataset_csv(dataset: Dataset, path: str | Path) -> None:
    """Writes ``dataset`` in the format :func:`read_dataset_csv` reads."""
    kind = dataset.kind() or SCALAR
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if kind == SCALAR:
            writer.writerow(["value", "epsilon"])
        elif kind == CATEGORICAL:
            writer.writerow(["label", "epsilon"])
        else:
            d = len(dataset.support()[0].value) - 1
            writer.writerow([f"x{i + 1}" for i in range(d)] + ["y", "epsilon"])
        for record in dataset.expand():
            if kind == REGRESSION:
                fields = [_fmt(v) for v in record.value]
            elif kind == CATEGORICAL:
                fields = [str(record.value)]
            else:
                fields = [_fmt(record.value)]
            writer.writerow(fields + [_fmt(record.epsilon)])
