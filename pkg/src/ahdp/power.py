"""Adversarial power: closed-form bounds and exact enumeration.

Power is the success probability of the best classifier that maps a
mechanism's output back to the hypothesis that produced it, in the worst
case over a finite set of hypotheses. The bound functions here give the
closed forms for swap, add-remove and heterogeneous threat models. The
exponential-style mechanisms attain them, and :func:`exact_power` computes
power exactly for any mechanism with a finite output space.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np
from scipy.optimize import linprog

from ahdp.dataset import CorrelationDomain, Dataset, Multiset, Record, project_data, weighted_distance
from ahdp.noise import Rng
from ahdp.privacy import Epsilon, PerValueMin, PrivacyMapping

FRONTIER_TOL = 1e-12


class Horizon(enum.Enum):
    ONE = "1"
    INFINITY = "inf"

    @classmethod
    def parse(cls, value: Any) -> "Horizon":
        if isinstance(value, Horizon):
            return value
        token = str(value).strip().lower()
        if token in ("1", "one"):
            return cls.ONE
        if token in ("inf", "infinity"):
            return cls.INFINITY
        raise ValueError(f"horizon must be 1 or inf, got {value!r}")


@dataclass(frozen=True)
class PowerResult:
    upper: float
    lower: float
    trivial_floor: float
    exact: float | None = None
    note: str = ""

    def as_dict(self) -> dict:
        out = {"upper": self.upper, "lower": self.lower, "trivial_floor": self.trivial_floor}
        if self.exact is not None:
            out["exact"] = self.exact
        if self.note:
            out["note"] = self.note
        return out


def _one_minus_exp(eps: float) -> float:
    return -math.expm1(-eps)


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if math.isnan(eps) or eps < 0:
        raise ValueError(f"epsilon must be >= 0, got {eps}")
    return eps


def reduce_domain(domain: CorrelationDomain) -> CorrelationDomain:
    """Keeps one record per data value, carrying its smallest epsilon."""
    if not isinstance(domain, CorrelationDomain):
        domain = CorrelationDomain(domain)
    table = PerValueMin.from_domain(domain)
    return CorrelationDomain((value, level) for value, level in table.table)


def power_bound_swap(k: int, epsilon: float) -> PowerResult:
    """Tight bound ``1 / (1 + (k - 1) e^-eps)`` for one unknown record out of ``k`` values."""
    if k < 2:
        raise ValueError(f"swap threat model needs k >= 2, got {k}")
    eps = _check_eps(epsilon)
    p = 1.0 / (1.0 + (k - 1) * math.exp(-eps))
    return PowerResult(p, p, 1.0 / k)


def power_bound_addremove(k: int, epsilon: float, horizon) -> PowerResult:
    """Homogeneous add-remove bounds over an alphabet of ``k`` values.

    Horizon one: tight ``1 / (1 + k e^-eps)``. Horizon infinity: upper
    ``(1 - e^-eps)^k`` and lower ``((1 - e^-eps) / (1 + e^-eps))^k``.
    """
    if k < 1:
        raise ValueError(f"need k >= 1, got {k}")
    eps = _check_eps(epsilon)
    horizon = Horizon.parse(horizon)
    if horizon is Horizon.ONE:
        p = 1.0 / (1.0 + k * math.exp(-eps))
        return PowerResult(p, p, 1.0 / (k + 1))
    if eps == 0:
        raise ValueError("the infinite horizon needs epsilon > 0")
    q = math.exp(-eps)
    upper = _one_minus_exp(eps) ** k
    lower = (_one_minus_exp(eps) / (1.0 + q)) ** k
    return PowerResult(upper, lower, 0.0)


def power_bound_ahdp(domain: CorrelationDomain, horizon) -> PowerResult:
    """Heterogeneous bounds, computed over the reduced domain.

    A value whose smallest epsilon is 0 drives the infinite-horizon bounds
    to exactly 0; this is reported in ``note`` rather than raised.
    """
    reduced = reduce_domain(domain)
    levels = [r.epsilon for r in reduced]
    horizon = Horizon.parse(horizon)
    if horizon is Horizon.ONE:
        p = 1.0 / (1.0 + math.fsum(math.exp(-e) for e in levels))
        return PowerResult(p, p, 1.0 / (len(levels) + 1))
    if any(e == 0 for e in levels):
        return PowerResult(0.0, 0.0, 0.0, note="adversary power degenerate: some value has epsilon 0")
    upper = math.prod(_one_minus_exp(e) for e in levels)
    lower = math.prod(_one_minus_exp(e) / (1.0 + math.exp(-e)) for e in levels)
    return PowerResult(upper, lower, 0.0)


def power_bound_pair(epsilon: float) -> PowerResult:
    """Tight bound ``1 / (1 + e^-eps)`` for deciding whether one known record was added."""
    eps = _check_eps(epsilon)
    p = 1.0 / (1.0 + math.exp(-eps))
    return PowerResult(p, p, 0.5)


def hypothesis_frontier_check(d: float, e1: float, e2: float) -> bool:
    """True when the error pair ``(e1, e2)`` is feasible at log-ratio bound ``d``."""
    if not (0 <= e1 <= 1 and 0 <= e2 <= 1):
        raise ValueError(f"error rates must lie in [0, 1], got {e1}, {e2}")
    if e2 == 0:
        return e1 >= 1 - FRONTIER_TOL or d == math.inf
    return e1 + math.exp(d) * e2 >= 1 - FRONTIER_TOL


# -- threat models ----------------------------------------------------------

EXACT = "exact"
PROJECTION = "projection"


def _label_key(label: Any):
    if isinstance(label, Multiset):
        return (1, label.sort_key())
    if isinstance(label, (int, float, np.integer, np.floating)):
        return (0, float(label))
    return (2, repr(label))


@dataclass(frozen=True)
class ThreatModel:
    """A finite hypothesis set and what counts as a successful inference.

    With ``target == "exact"`` the adversary must name the dataset; with
    ``"projection"`` it only needs the data values (the multiset with privacy
    demands dropped).
    """

    hypotheses: tuple
    target: str = EXACT
    observed: Dataset = Dataset()
    domain: CorrelationDomain | None = None
    generator: str = ""

    def __post_init__(self):
        hypotheses = tuple(h if isinstance(h, Dataset) else Dataset.from_records(h)
                           for h in self.hypotheses)
        if not hypotheses:
            raise ValueError("threat model needs at least one hypothesis")
        if len(set(hypotheses)) != len(hypotheses):
            raise ValueError("hypotheses must be distinct")
        if self.target not in (EXACT, PROJECTION):
            raise ValueError(f"target must be {EXACT!r} or {PROJECTION!r}")
        object.__setattr__(self, "hypotheses", hypotheses)

    def label_of(self, dataset: Dataset):
        return dataset if self.target == EXACT else project_data(dataset)

    def labels(self) -> tuple:
        """Distinct labels in canonical order; ties resolve toward the first."""
        return tuple(sorted({self.label_of(h) for h in self.hypotheses}, key=_label_key))

    @classmethod
    def swap(cls, observed: Dataset, values, epsilon: float) -> "ThreatModel":
        """One unseen record with a value among ``values`` and a public level."""
        hyps = [observed + Dataset.from_records([(v, epsilon)]) for v in values]
        return cls(tuple(hyps), EXACT, observed, None, "swap: one of k values")

    @classmethod
    def append_up_to(cls, observed: Dataset, domain, t: int,
                     target: str = PROJECTION) -> "ThreatModel":
        """All ``observed + S`` with ``S`` a multiset over ``domain`` of size at most ``t``."""
        if t < 0:
            raise ValueError(f"t must be >= 0, got {t}")
        if not isinstance(domain, CorrelationDomain):
            domain = CorrelationDomain(domain)
        hyps = []
        for size in range(t + 1):
            for combo in itertools.combinations_with_replacement(domain.records, size):
                hyps.append(observed + Dataset.from_records(combo))
        return cls(tuple(hyps), target, observed, domain, f"append up to {t} records")

    @classmethod
    def append_one_of(cls, observed: Dataset, domain, target: str = PROJECTION) -> "ThreatModel":
        return cls.append_up_to(observed, domain, 1, target)

    @classmethod
    def pair(cls, observed: Dataset, record) -> "ThreatModel":
        """``{D_o, D_o + {record}}``: was this known record added or not."""
        record = Record.make(*record)
        hyps = (observed, observed + Dataset.from_records([record]))
        return cls(hyps, EXACT, observed, CorrelationDomain([record]), "known record or nothing")

    @classmethod
    def exact_size(cls, observed: Dataset, private_value=0, public_value=1) -> "ThreatModel":
        """Side information pins the dataset size; the unseen user is either
        fully private or demands no privacy at all.

        Some domain-respecting mechanisms reach power 1 here (see
        :func:`presence_indicator_mechanism`).
        """
        private = Record.make(private_value, 0.0)
        public = Record.make(public_value, math.inf)
        hyps = (observed + Dataset.from_records([private]),
                observed + Dataset.from_records([public]))
        return cls(hyps, PROJECTION, observed, CorrelationDomain([private, public]),
                   "exact dataset size known")


# -- discrete mechanisms ----------------------------------------------------


@dataclass(frozen=True)
class DiscreteMechanism:
    """Mechanism with a finite output space, given by its output distribution."""

    distribution: Callable[[Dataset], Mapping[Any, float]]
    name: str

    def __call__(self, dataset: Dataset) -> Mapping[Any, float]:
        return self.distribution(dataset)

    def sample(self, dataset: Dataset, rng: Rng):
        dist = self.distribution(dataset)
        outputs = sorted(dist, key=_label_key)
        probs = np.array([dist[o] for o in outputs])
        return outputs[int(rng.choice(len(outputs), p=probs / probs.sum()))]


def _normalize(labels, distances) -> dict:
    distances = np.asarray(distances, dtype=float)
    finite = distances[np.isfinite(distances)]
    if not len(finite):
        raise ValueError("every label is at infinite distance")
    weights = np.exp(-(distances - finite.min()))
    total = math.fsum(weights)
    return {label: float(w / total) for label, w in zip(labels, weights)}


def exponential_mechanism_distribution(dataset: Dataset, model: ThreatModel, distance: str, *,
                                       epsilon: float | None = None,
                                       alpha: PrivacyMapping | None = None) -> dict:
    """Output distribution ``Pr{label} ∝ exp(-distance(dataset, label))``.

    Distances:
      ``swap-rr``: ``epsilon`` when the label differs from the input's, else 0
        (randomized response over the labels).
      ``add-remove-da``: ``d_alpha`` between the input and a labelled dataset
        (``alpha`` defaults to :class:`Epsilon`).
      ``projected-d'``: distance between data projections, with each value
        weighted by its smallest epsilon in the model's domain.
    """
    labels = model.labels()
    if not labels:
        raise ValueError("empty label space")
    if distance == "swap-rr":
        if epsilon is None:
            raise ValueError("swap-rr needs epsilon")
        own = model.label_of(dataset)
        dists = [0.0 if label == own else _check_eps(epsilon) for label in labels]
    elif distance == "add-remove-da":
        if model.target != EXACT:
            raise ValueError("add-remove-da labels must be datasets (exact target)")
        alpha = alpha or Epsilon()
        dists = [weighted_distance(alpha, dataset, label) for label in labels]
    elif distance in ("projected-d'", "projected-d"):
        if model.domain is None:
            raise ValueError("projected distance needs the model's correlation domain")
        levels = dict(PerValueMin.from_domain(model.domain).table)
        own = project_data(dataset)
        target = [label if model.target == PROJECTION else project_data(label) for label in labels]
        dists = [weighted_distance(levels.__getitem__, own, t) for t in target]
    else:
        raise ValueError(f"unknown distance {distance!r}")
    return _normalize(labels, dists)


def exponential_mechanism(dataset: Dataset, model: ThreatModel, distance: str, rng: Rng, *,
                          epsilon: float | None = None, alpha: PrivacyMapping | None = None):
    """Draws one label from :func:`exponential_mechanism_distribution`."""
    dist = exponential_mechanism_distribution(dataset, model, distance, epsilon=epsilon, alpha=alpha)
    labels = list(dist)
    probs = np.array([dist[label] for label in labels])
    return labels[int(rng.choice(len(labels), p=probs / probs.sum()))]


def exponential_mechanism_descriptor(model: ThreatModel, distance: str, *,
                                     epsilon: float | None = None,
                                     alpha: PrivacyMapping | None = None) -> DiscreteMechanism:
    return DiscreteMechanism(
        lambda d: exponential_mechanism_distribution(d, model, distance, epsilon=epsilon, alpha=alpha),
        f"exponential:{distance}")


def randomized_response(model: ThreatModel, epsilon: float) -> DiscreteMechanism:
    """Reports the true label with weight 1 and every other label with ``e^-eps``."""
    return exponential_mechanism_descriptor(model, "swap-rr", epsilon=epsilon)


def dataset_size_mechanism() -> DiscreteMechanism:
    """Releases ``|D|`` exactly.

    It satisfies swap-model heterogeneous DP (swaps keep the size), yet it
    reveals whether a record was added.
    """
    return DiscreteMechanism(lambda d: {d.size: 1.0}, "dataset-size")


def presence_indicator_mechanism(record) -> DiscreteMechanism:
    """Releases the exact count of one record.

    It is AHDP on any domain where that record demands infinite epsilon and
    the spent mapping is zero elsewhere.
    """
    record = Record.make(*record)
    return DiscreteMechanism(lambda d: {d.count(record): 1.0}, "presence-indicator")


# -- exact power ------------------------------------------------------------

IDENTITY = "identity"
BAYES = "bayes"


def _success_table(mechanism: DiscreteMechanism, model: ThreatModel):
    dists = [mechanism(h) for h in model.hypotheses]
    outputs = sorted({o for dist in dists for o in dist}, key=_label_key)
    if len(model.hypotheses) > 10_000:
        raise ValueError("too many hypotheses to enumerate")
    index = {o: j for j, o in enumerate(outputs)}
    table = np.zeros((len(dists), len(outputs)))
    for i, dist in enumerate(dists):
        for o, p in dist.items():
            table[i, index[o]] = p
    return table, outputs


def _deterministic_power(table, hyp_labels, n_labels, choice) -> float:
    return min(math.fsum(table[i, j] for j in range(table.shape[1]) if choice[j] == hyp_labels[i])
               for i in range(table.shape[0]))


def _bayes_power(table: np.ndarray, hyp_labels: np.ndarray, n_labels: int) -> float:
    n_h, n_o = table.shape
    n_var = n_o * n_labels + 1
    c = np.zeros(n_var)
    c[-1] = -1.0
    A_ub = np.zeros((n_h, n_var))
    for i in range(n_h):
        A_ub[i, np.arange(n_o) * n_labels + hyp_labels[i]] = -table[i]
        A_ub[i, -1] = 1.0
    A_eq = np.zeros((n_o, n_var))
    for j in range(n_o):
        A_eq[j, j * n_labels:(j + 1) * n_labels] = 1.0
    bounds = [(0.0, 1.0)] * (n_var - 1) + [(0.0, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n_h), A_eq=A_eq, b_eq=np.ones(n_o),
                  bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(f"power linear program failed: {res.message}")
    value = -res.fun
    # The dual gives the least favourable prior; its posterior argmax is a
    # deterministic classifier whose power can be computed without LP error.
    prior = np.maximum(-np.asarray(res.ineqlin.marginals), 0.0)
    score = np.zeros((n_labels, n_o))
    for i in range(n_h):
        score[hyp_labels[i]] += prior[i] * table[i]
    choice = np.argmax(score, axis=0)
    deterministic = _deterministic_power(table, hyp_labels, n_labels, choice)
    if deterministic >= value - 1e-9:
        return deterministic
    return float(min(max(value, 0.0), 1.0))


def exact_power(mechanism: DiscreteMechanism, model: ThreatModel,
                classifier: str = IDENTITY) -> PowerResult:
    """Power of ``mechanism`` on ``model`` by full enumeration.

    ``identity`` reads the output as the guessed label and reports that
    classifier's worst-case success (a lower bound on the power).
    ``bayes`` maximizes over all randomized classifiers with a linear
    program, which gives the power itself.
    """
    labels = model.labels()
    label_index = {label: n for n, label in enumerate(labels)}
    hyp_labels = np.array([label_index[model.label_of(h)] for h in model.hypotheses])
    table, outputs = _success_table(mechanism, model)
    floor = 1.0 / len(labels)
    if classifier == IDENTITY:
        success = []
        for i, h in enumerate(model.hypotheses):
            own = model.label_of(h)
            success.append(math.fsum(table[i, j] for j, o in enumerate(outputs) if o == own))
        value = min(success)
        return PowerResult(upper=1.0, lower=value, trivial_floor=floor, exact=value,
                           note="identity classifier")
    if classifier == BAYES:
        value = _bayes_power(table, hyp_labels, len(labels))
        return PowerResult(upper=value, lower=value, trivial_floor=floor, exact=value,
                           note="bayes-optimal classifier")
    raise ValueError(f"unknown classifier {classifier!r}")


def truncated_power_trend(model_factory: Callable[[int], ThreatModel], distance: str,
                          t_values, **kwargs) -> list[float]:
    """Exact identity-classifier power of the exponential mechanism on ``H_t`` for each ``t``."""
    out = []
    for t in t_values:
        model = model_factory(t)
        mech = exponential_mechanism_descriptor(model, distance, **kwargs)
        out.append(exact_power(mech, model).exact)
    return out
