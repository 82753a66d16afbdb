"""Privacy mappings: how much privacy a mechanism spends on each record.

A mapping sends a record ``(x, epsilon)`` to the privacy actually spent on it.
A mechanism certified against mapping ``alpha`` honors every user in a
correlation domain ``W`` when ``alpha(x, epsilon) <= epsilon`` on all of ``W``.

All mappings are immutable and evaluate in plain Python floats; ``weights``
gives the vectorized form used by the mechanisms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np

from ahdp.dataset import CorrelationDomain, Record, canonical_epsilon, canonical_value


class PrivacyMapping:
    """Base class. Subclasses implement ``__call__`` and ``name``."""

    def __call__(self, x: Any, epsilon: float) -> float:
        raise NotImplementedError

    def weights(self, values: Any, epsilons: np.ndarray) -> np.ndarray:
        """Evaluates the mapping on aligned arrays of values and epsilons."""
        return np.array([self(canonical_value(v), float(e))
                         for v, e in zip(values, epsilons)], dtype=float)

    @property
    def name(self) -> str:
        raise NotImplementedError

    def __add__(self, other: "PrivacyMapping") -> "PrivacyMapping":
        return compose(self, other)

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Epsilon(PrivacyMapping):
    """Spend exactly the demanded level; unbounded as epsilon grows."""

    def __call__(self, x, epsilon):
        return float(epsilon)

    def weights(self, values, epsilons):
        return np.asarray(epsilons, dtype=float).copy()

    @property
    def name(self):
        return "epsilon"


@dataclass(frozen=True)
class OneMinusExp(PrivacyMapping):
    """``1 - exp(-epsilon)``, which maps ``[0, inf]`` onto ``[0, 1]``."""

    def __call__(self, x, epsilon):
        return -math.expm1(-epsilon)

    def weights(self, values, epsilons):
        return -np.expm1(-np.asarray(epsilons, dtype=float))

    @property
    def name(self):
        return "one-minus-exp"


@dataclass(frozen=True)
class Ratio(PrivacyMapping):
    """``epsilon / (1 + epsilon)``, equal to 1 at infinity."""

    def __call__(self, x, epsilon):
        if epsilon == math.inf:
            return 1.0
        return epsilon / (1.0 + epsilon)

    def weights(self, values, epsilons):
        eps = np.asarray(epsilons, dtype=float)
        with np.errstate(invalid="ignore"):
            out = eps / (1.0 + eps)
        out[np.isinf(eps)] = 1.0
        return out

    @property
    def name(self):
        return "ratio"


@dataclass(frozen=True)
class CappedEpsilon(PrivacyMapping):
    """``min(base(x, epsilon), t)``; the base defaults to :class:`Epsilon`."""

    t: float
    base: PrivacyMapping = field(default_factory=Epsilon)

    def __post_init__(self):
        if not self.t >= 0:
            raise ValueError(f"cap must be >= 0, got {self.t}")

    def __call__(self, x, epsilon):
        return min(self.base(x, epsilon), self.t)

    def weights(self, values, epsilons):
        return np.minimum(self.base.weights(values, epsilons), self.t)

    @property
    def name(self):
        if isinstance(self.base, Epsilon):
            return f"capped:{self.t!r}"
        return f"min({self.base.name},{self.t!r})"


@dataclass(frozen=True)
class Scaled(PrivacyMapping):
    base: PrivacyMapping
    factor: float

    def __post_init__(self):
        if not self.factor >= 0:
            raise ValueError(f"scale factor must be >= 0, got {self.factor}")

    def __call__(self, x, epsilon):
        value = self.base(x, epsilon)
        if self.factor == 0:
            return 0.0
        return value * self.factor

    def weights(self, values, epsilons):
        if self.factor == 0:
            return np.zeros(len(epsilons))
        return self.base.weights(values, epsilons) * self.factor

    @property
    def name(self):
        return f"scaled:{self.base.name}:{self.factor!r}"


@dataclass(frozen=True)
class Sum(PrivacyMapping):
    """Pointwise sum of the children; the mapping of a composed mechanism."""

    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))

    def __call__(self, x, epsilon):
        total = 0.0
        for child in self.children:
            total += child(x, epsilon)
        return total

    def weights(self, values, epsilons):
        total = np.zeros(len(epsilons))
        for child in self.children:
            total = total + child.weights(values, epsilons)
        return total

    @property
    def name(self):
        return "sum(" + ",".join(c.name for c in self.children) + ")"


@dataclass(frozen=True)
class Constant(PrivacyMapping):
    c: float

    def __post_init__(self):
        if not self.c >= 0:
            raise ValueError(f"constant privacy must be >= 0, got {self.c}")

    def __call__(self, x, epsilon):
        return float(self.c)

    def weights(self, values, epsilons):
        return np.full(len(epsilons), float(self.c))

    @property
    def name(self):
        return f"constant:{self.c!r}"


@dataclass(frozen=True)
class PerValueMin(PrivacyMapping):
    """Looks up a per-value level, ignoring the record's own epsilon.

    Built from a domain, ``PerValueMin.from_domain(W)`` spends on every record
    the smallest epsilon that its data value carries anywhere in ``W``.
    """

    table: tuple

    def __post_init__(self):
        items = self.table.items() if isinstance(self.table, Mapping) else self.table
        object.__setattr__(
            self, "table",
            tuple(sorted(((canonical_value(k), canonical_epsilon(v)) for k, v in items),
                         key=lambda kv: repr(kv[0]))))

    @classmethod
    def from_domain(cls, domain: CorrelationDomain) -> "PerValueMin":
        lowest: dict[Any, float] = {}
        for record in domain:
            lowest[record.value] = min(lowest.get(record.value, math.inf), record.epsilon)
        return cls(tuple(lowest.items()))

    def __call__(self, x, epsilon):
        for key, level in self.table:
            if key == x:
                return level
        raise KeyError(f"value {x!r} missing from the per-value table")

    @property
    def name(self):
        return "per-value-min"


def evaluate(mapping: PrivacyMapping, x: Any, epsilon: Any) -> float:
    return mapping(x, canonical_epsilon(epsilon))


def compose(a1: PrivacyMapping, a2: PrivacyMapping) -> Sum:
    """Mapping spent by running an ``a1`` mechanism and an ``a2`` mechanism."""
    return Sum((a1, a2))


@dataclass(frozen=True)
class PrivacyCertificate:
    mapping: PrivacyMapping
    domain: CorrelationDomain
    is_w_ahdp: bool
    witnesses: tuple[Record, ...] = ()

    def __bool__(self) -> bool:
        return self.is_w_ahdp


def certify(mapping: PrivacyMapping, domain: CorrelationDomain | Iterable) -> PrivacyCertificate:
    """Checks ``mapping(x, eps) <= eps`` on every record of a finite domain."""
    if not isinstance(domain, CorrelationDomain):
        domain = CorrelationDomain(domain)
    witnesses = tuple(r for r in domain if not mapping(r.value, r.epsilon) <= r.epsilon)
    return PrivacyCertificate(mapping, domain, not witnesses, witnesses)


PRESETS = {
    "epsilon": Epsilon,
    "one-minus-exp": OneMinusExp,
    "ratio": Ratio,
}


def parse_mapping(text: str) -> PrivacyMapping:
    """Parses the textual mapping names used in configs and on the CLI.

    Accepted forms: ``epsilon``, ``one-minus-exp``, ``ratio``, ``capped:<t>``,
    ``constant:<c>`` and ``scaled:<name>:<factor>`` where ``<name>`` is itself
    any accepted form.

    >>> parse_mapping("scaled:one-minus-exp:0.5").name
    'scaled:one-minus-exp:0.5'
    """
    text = text.strip()
    if text in PRESETS:
        return PRESETS[text]()
    head, _, rest = text.partition(":")
    if head == "capped" and rest:
        return CappedEpsilon(float(rest))
    if head == "constant" and rest:
        return Constant(float(rest))
    if head == "scaled" and rest:
        base, _, factor = rest.rpartition(":")
        if base and factor:
            return Scaled(parse_mapping(base), float(factor))
    raise ValueError(f"unknown privacy mapping {text!r}")
