"""Universal AHDP mechanisms.

Each mechanism works in two steps. First it computes a noiseless statistic in
which every record is weighted by the privacy mapping ``alpha``. Then it adds
independent Laplace noise and post-processes the result (dividing, solving,
flooring). The first step is exposed as a :class:`~ahdp.noise.LaplaceRelease`
through the ``*_release`` functions, so the audit module can check densities
exactly.

Passing ``audit=True`` suppresses the Laplace noise and attaches the noiseless
statistic to the report. It exists for testing and must not be used to
release data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ahdp.dataset import CATEGORICAL, REGRESSION, SCALAR, Dataset, Record
from ahdp.noise import LaplaceRelease, Rng
from ahdp.privacy import CappedEpsilon, PrivacyMapping, compose

CONDITION_LIMIT = 1e12
FALLBACK_RIDGE = 1e-6


class SingularSystemError(np.linalg.LinAlgError):
    """The regression system could not be solved, even with a ridge term."""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


@dataclass(frozen=True)
class QueryFunction:
    """A real-valued function of a data value with declared bounds."""

    f: Callable[[Any], float]
    low: float
    high: float

    def __post_init__(self):
        if not self.low <= self.high:
            raise ValueError(f"need low <= high, got [{self.low}, {self.high}]")

    @classmethod
    def identity(cls, low: float, high: float) -> "QueryFunction":
        return cls(_identity, float(low), float(high))

    @classmethod
    def constant(cls, c: float) -> "QueryFunction":
        return cls(_Constant(float(c)), float(c), float(c))

    @classmethod
    def indicator(cls, label: Any) -> "QueryFunction":
        return cls(_Indicator(label), 0.0, 1.0)

    def evaluate(self, values) -> np.ndarray:
        if self.f is _identity:
            fx = np.asarray(values, dtype=float)
        else:
            fx = np.array([self.f(v) for v in values], dtype=float)
        bad = ~((fx >= self.low) & (fx <= self.high))
        if np.any(bad):
            raise ValueError(f"query values {fx[bad][:5]} fall outside "
                             f"[{self.low}, {self.high}]")
        return fx


def _identity(x):
    return x


@dataclass(frozen=True)
class _Constant:
    c: float

    def __call__(self, x):
        return self.c


@dataclass(frozen=True)
class _Indicator:
    label: Any

    def __call__(self, x):
        return 1.0 if x == self.label else 0.0


@dataclass
class MechanismReport:
    """Output of one mechanism run.

    ``spent`` is the privacy mapping the run is certified against. In audit
    mode ``noiseless_part`` holds the statistic before noise; otherwise it is
    ``None``.
    """

    output: Any
    spent: PrivacyMapping
    seed: int | None = None
    stream: tuple = ()
    noiseless_part: Any = None
    flags: dict = field(default_factory=dict)


@dataclass
class RegressionOutput:
    theta: np.ndarray
    spent: PrivacyMapping
    condition: float
    ridge: float
    fallback: bool = False
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    seed: int | None = None


# -- shared helpers ---------------------------------------------------------


def _require_kind(dataset: Dataset, *kinds: str) -> None:
    kind = dataset.kind()
    if kind is not None and kind not in kinds:
        raise ValueError(f"mechanism accepts {kinds} records, got {kind}")


def _weights(alpha: PrivacyMapping, values, epsilons) -> np.ndarray:
    w = alpha.weights(values, epsilons)
    bad = ~np.isfinite(w)
    if np.any(bad):
        raise ValueError(
            f"privacy mapping {alpha.name} gives non-finite weight to "
            f"{int(bad.sum())} record type(s); cap it (e.g. CappedEpsilon) "
            "or pick a bounded mapping")
    if np.any(w < 0):
        raise ValueError(f"privacy mapping {alpha.name} returned negative weights")
    return w


def _wsum(terms: np.ndarray, weights: np.ndarray) -> float:
    # Zero-weight records are dropped before summing so that adding one never
    # changes a single bit of the result.
    return math.fsum(terms[weights > 0])


def _scalar_values(dataset: Dataset, low: float, high: float):
    _require_kind(dataset, SCALAR, CATEGORICAL)
    values, eps, counts = dataset.arrays()
    values = values.astype(float)
    bad = ~((values >= low) & (values <= high))
    if np.any(bad):
        raise ValueError(f"values {values[bad][:5]} fall outside [{low}, {high}]")
    return values, eps, counts


def _check_floor(floor: float) -> None:
    if not floor > 0:
        raise ValueError(f"denominator floor must be > 0, got {floor}")


def _draw(release: LaplaceRelease, rng: Rng | None, audit: bool, size: int | None):
    if audit:
        if size is None:
            return release.center.copy()
        return np.broadcast_to(release.center, (size, len(release))).copy()
    if rng is None:
        raise ValueError("a random stream is required outside audit mode")
    return release.sample(rng, size)


def _report(output, spent, rng, release, audit, **flags) -> MechanismReport:
    return MechanismReport(
        output=output,
        spent=spent,
        seed=None if rng is None else rng.seed,
        stream=() if rng is None else rng.stream,
        noiseless_part=release.center.copy() if audit else None,
        flags={"audit": audit, **flags},
    )


def _squeeze(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


# -- linear queries ---------------------------------------------------------


def linear_query_center(fx, weights, counts, low: float) -> float:
    """``low + sum(w * (f(x) - low) * h)`` over records with positive weight."""
    return low + _wsum(weights * (fx - low) * counts, weights)


def linear_query_release(dataset: Dataset, f: QueryFunction,
                         alpha: PrivacyMapping) -> LaplaceRelease:
    """Noiseless part and noise scale of :func:`linear_query`.

    When ``f`` is a constant ``c`` the release is the weighted count with
    ``Laplace(1)`` noise; :func:`linear_query` then multiplies by ``c``.
    """
    values, eps, counts = dataset.arrays()
    if dataset.kind() == REGRESSION:
        raise ValueError("linear queries take scalar or categorical records")
    fx = f.evaluate(values) if len(values) else np.zeros(0)
    w = _weights(alpha, values, eps)
    if f.low == f.high:
        return LaplaceRelease([_wsum(w * counts, w)], [1.0])
    return LaplaceRelease([linear_query_center(fx, w, counts, f.low)],
                          [f.high - f.low])


def linear_query(dataset: Dataset, f: QueryFunction, alpha: PrivacyMapping,
                 rng: Rng | None, *, audit: bool = False,
                 size: int | None = None) -> MechanismReport:
    """AHDP linear query ``low + sum(alpha * (f(x) - low) * h) + Laplace(high - low)``.

    The run spends ``alpha`` on every record; it respects every user's demand
    whenever ``alpha(x, eps) <= eps``, whatever the data-privacy correlation.

    Args:
      dataset: scalar or categorical records with ``f(x)`` in ``[f.low, f.high]``.
      f: the query and its declared bounds.
      alpha: privacy mapping; must be finite on every record.
      rng: noise stream.
      audit: suppress noise and expose the noiseless part.
      size: draw this many independent releases at once.
    """
    release = linear_query_release(dataset, f, alpha)
    noisy = _draw(release, rng, audit, size)[..., 0]
    if f.low == f.high:
        noisy = f.low * noisy
    return _report(_squeeze(noisy), alpha, rng, release, audit)


def sum_estimate(dataset: Dataset, low: float, high: float, alpha: PrivacyMapping,
                 rng: Rng | None, *, audit: bool = False,
                 size: int | None = None) -> MechanismReport:
    return linear_query(dataset, QueryFunction.identity(low, high), alpha, rng,
                        audit=audit, size=size)


def count_estimate(dataset: Dataset, alpha: PrivacyMapping, rng: Rng | None, *,
                   audit: bool = False, size: int | None = None) -> MechanismReport:
    """Weighted count ``sum(alpha * h) + Laplace(1)``."""
    return linear_query(dataset, QueryFunction.constant(1.0), alpha, rng,
                        audit=audit, size=size)


# -- mean -------------------------------------------------------------------


def mean_release(dataset: Dataset, low: float, high: float, alpha1: PrivacyMapping,
                 alpha2: PrivacyMapping) -> LaplaceRelease:
    """Numerator and denominator of :func:`mean_estimate` before noise."""
    if not low < high:
        raise ValueError(f"mean estimation needs low < high, got [{low}, {high}]")
    values, eps, counts = _scalar_values(dataset, low, high)
    w1 = _weights(alpha1, values, eps)
    w2 = _weights(alpha2, values, eps)
    return mean_release_from_arrays(values, counts, w1, w2, low, high)


def mean_release_from_arrays(values, counts, w1, w2, low, high) -> LaplaceRelease:
    numerator = linear_query_center(values, w1, counts, low)
    denominator = _wsum(w2 * counts, w2)
    return LaplaceRelease([numerator, denominator], [high - low, 1.0])


def finish_ratio(noisy: np.ndarray, floor: float) -> np.ndarray:
    """``numerator / max(denominator, floor)`` along the last axis."""
    return noisy[..., 0] / np.maximum(noisy[..., 1], floor)


def mean_estimate(dataset: Dataset, low: float, high: float, alpha1: PrivacyMapping,
                  alpha2: PrivacyMapping, rng: Rng | None, *, floor: float = 1.0,
                  clip: bool = False, audit: bool = False,
                  size: int | None = None) -> MechanismReport:
    """AHDP mean: a weighted sum over a weighted count, both noised.

    The numerator ``low + sum(alpha1 * h * (x - low)) + Laplace(high - low)``
    is divided by ``max(sum(alpha2 * h) + Laplace(1), floor)``. Flooring and
    the optional clip to ``[low, high]`` are post-processing, so the run
    spends ``alpha1 + alpha2``.
    """
    _check_floor(floor)
    release = mean_release(dataset, low, high, alpha1, alpha2)
    noisy = _draw(release, rng, audit, size)
    out = finish_ratio(noisy, floor)
    if clip:
        out = np.clip(out, low, high)
    floored = bool(np.any(noisy[..., 1] < floor))
    return _report(_squeeze(out), compose(alpha1, alpha2), rng, release, audit,
                   floored=floored, clipped=clip)


# -- frequency --------------------------------------------------------------


def frequency_release(dataset: Dataset, k: int, alpha1: PrivacyMapping,
                      alpha2: PrivacyMapping | None = None) -> LaplaceRelease:
    """Per-label weighted counts, followed by the weighted total if ``alpha2``.

    Every coordinate carries ``Laplace(1)`` noise.
    """
    if k < 1:
        raise ValueError(f"need k >= 1 labels, got {k}")
    _require_kind(dataset, CATEGORICAL)
    values, eps, counts = dataset.arrays()
    if len(values) and (values.min() < 1 or values.max() > k):
        raise ValueError(f"labels must lie in 1..{k}")
    w1 = _weights(alpha1, values, eps)
    w2 = None if alpha2 is None else _weights(alpha2, values, eps)
    return frequency_release_from_arrays(values, counts, w1, w2, k)


def frequency_release_from_arrays(values, counts, w1, w2, k: int) -> LaplaceRelease:
    centers = [_wsum(w1 * counts * (values == label), w1) for label in range(1, k + 1)]
    if w2 is not None:
        centers.append(_wsum(w2 * counts, w2))
    return LaplaceRelease(centers, 1.0)


def frequency_estimate(dataset: Dataset, k: int, alpha1: PrivacyMapping,
                       alpha2: PrivacyMapping, rng: Rng | None, *, floor: float = 1.0,
                       audit: bool = False, size: int | None = None) -> MechanismReport:
    """Relative frequencies of labels ``1..k``.

    Bin ``i`` reports ``N_i / max(S, floor)`` with ``N_i`` the ``alpha1``
    weighted count of label ``i`` and ``S`` the ``alpha2`` weighted total,
    each with independent ``Laplace(1)`` noise. Spends ``alpha1 + alpha2``.
    """
    _check_floor(floor)
    release = frequency_release(dataset, k, alpha1, alpha2)
    noisy = _draw(release, rng, audit, size)
    out = noisy[..., :k] / np.maximum(noisy[..., k:], floor)
    return _report(out, compose(alpha1, alpha2), rng, release, audit)


# -- sample mechanism -------------------------------------------------------


def keep_probability(weight, t: float):
    """``(exp(min(weight, t)) - 1) / (exp(t) - 1)``; exactly 1 when weight >= t."""
    if not t > 0:
        raise ValueError(f"threshold t must be > 0, got {t}")
    w = np.minimum(np.asarray(weight, dtype=float), t)
    p = np.where(w >= t, 1.0, np.expm1(w) / math.expm1(t))
    return float(p) if p.ndim == 0 else p


def sample_subsample(dataset: Dataset, alpha: PrivacyMapping, t: float,
                     rng: Rng) -> Dataset:
    """First stage of the sample mechanism.

    Each unit of count is kept independently with
    :func:`keep_probability` of its weight; group counts are binomial.
    """
    if not t > 0:
        raise ValueError(f"threshold t must be > 0, got {t}")
    values, eps, counts = dataset.arrays()
    w = alpha.weights(values, eps)
    if np.any(np.isnan(w)):
        raise ValueError("privacy mapping returned NaN")
    p = keep_probability(w, t)
    kept = {}
    for record, h, prob in zip(dataset.support(), counts.astype(np.int64), np.atleast_1d(p)):
        n_kept = int(h) if prob >= 1.0 else int(rng.binomial(int(h), prob))
        if n_kept:
            kept[record] = n_kept
    return Dataset(kept)


@dataclass(frozen=True)
class SumStage:
    """Homogeneous ``t``-DP sum: ``Laplace(max(|low|, |high|) / t)``."""

    low: float
    high: float
    name = "sum"

    def center(self, values, counts) -> np.ndarray:
        return np.array([math.fsum(values * counts)])

    def scale(self, t: float) -> np.ndarray:
        return np.array([max(abs(self.low), abs(self.high)) / t])

    def finish(self, noisy):
        return _squeeze(noisy[..., 0])

    def accepts(self, dataset):
        _scalar_values(dataset, self.low, self.high)


@dataclass(frozen=True)
class CountStage:
    """Homogeneous ``t``-DP count: ``Laplace(1 / t)``."""

    name = "count"

    def center(self, values, counts):
        return np.array([math.fsum(counts)])

    def scale(self, t):
        return np.array([1.0 / t])

    def finish(self, noisy):
        return _squeeze(noisy[..., 0])

    def accepts(self, dataset):
        pass


@dataclass(frozen=True)
class MeanStage:
    """Sum and count at ``t / 2`` each, divided with a floored denominator."""

    low: float
    high: float
    floor: float = 1.0
    name = "mean"

    def center(self, values, counts):
        return np.array([math.fsum(values * counts), math.fsum(counts)])

    def scale(self, t):
        return np.array([2.0 * max(abs(self.low), abs(self.high)) / t, 2.0 / t])

    def finish(self, noisy):
        return _squeeze(finish_ratio(noisy, self.floor))

    def accepts(self, dataset):
        _scalar_values(dataset, self.low, self.high)


@dataclass(frozen=True)
class HistogramStage:
    """Per-label counts with ``Laplace(1 / t)``, normalized by their noisy total.

    Adding or removing one record moves one bin by one, so the released
    vector is ``t``-DP; the normalization is post-processing.
    """

    k: int
    floor: float = 1.0
    name = "histogram"

    def center(self, values, counts):
        return np.array([math.fsum(counts[values == label])
                         for label in range(1, self.k + 1)])

    def scale(self, t):
        return np.full(self.k, 1.0 / t)

    def finish(self, noisy):
        total = np.sum(noisy, axis=-1, keepdims=True)
        return noisy / np.maximum(total, self.floor)

    def accepts(self, dataset):
        _require_kind(dataset, CATEGORICAL)


@dataclass(frozen=True)
class RegressionStage:
    """Functional mechanism with unit weights and ``Laplace((d^2 + d) / t)``."""

    d: int
    ridge: float = 0.0
    name = "regression"

    def center(self, values, counts):
        X, y = _split_regression(values, self.d)
        return _normal_equation_entries(X, y, counts)

    def scale(self, t):
        return np.full(self.d * self.d + self.d, (self.d * self.d + self.d) / t)

    def finish(self, noisy):
        A, b = unpack_entries(noisy, self.d)
        theta, _, _, _ = solve_regression(A, b, self.ridge)
        return theta

    def accepts(self, dataset):
        _regression_arrays(dataset)


def stage_release(stage, dataset: Dataset, t: float) -> LaplaceRelease:
    values, _, counts = dataset.arrays()
    if isinstance(stage, (SumStage, MeanStage)):
        values = values.astype(float)
    if not len(counts):
        if isinstance(stage, RegressionStage):
            values = np.zeros((0, stage.d + 1))
        else:
            values = np.zeros(0)
    return LaplaceRelease(stage.center(values, counts), stage.scale(t))


def sample_mechanism(dataset: Dataset, alpha: PrivacyMapping, t: float, stage,
                     rng: Rng, *, audit: bool = False) -> MechanismReport:
    """Subsample, then run a homogeneous ``t``-DP stage on what was kept.

    Spends ``min(alpha, t)`` on each record.
    """
    if not t > 0:
        raise ValueError(f"threshold t must be > 0, got {t}")
    if not isinstance(stage, (SumStage, CountStage, MeanStage, HistogramStage,
                              RegressionStage)):
        raise ValueError(f"unknown second stage {stage!r}")
    stage.accepts(dataset)
    kept = sample_subsample(dataset, alpha, t, rng.child(0))
    release = stage_release(stage, kept, t)
    noisy = _draw(release, rng.child(1), audit, None)
    report = _report(stage.finish(noisy), CappedEpsilon(t, base=alpha), rng, release, audit,
                     stage=stage.name, kept=kept.size)
    if audit:
        report.noiseless_part = {"subsample": kept, "center": release.center.copy()}
    return report


# -- linear regression ------------------------------------------------------


def _split_regression(values, d: int):
    values = np.asarray(values, dtype=float).reshape(-1, d + 1)
    return values[:, :d], values[:, d]


def _regression_arrays(dataset: Dataset):
    _require_kind(dataset, REGRESSION)
    values, eps, counts = dataset.arrays()
    if not len(values):
        raise ValueError("regression needs at least one record to fix the dimension")
    if values.ndim != 2 or values.shape[1] < 2:
        raise ValueError("regression records must be (x_1..x_d, y) tuples")
    if np.any(np.abs(values) > 1):
        raise ValueError("regression covariates and targets must lie in [-1, 1]")
    return values, eps, counts


def _normal_equation_entries(X, y, weights) -> np.ndarray:
    keep = weights > 0
    X, y, weights = X[keep], y[keep], weights[keep]
    A = (X * weights[:, None]).T @ X
    b = X.T @ (weights * y)
    return np.concatenate([A.ravel(), b])


def unpack_entries(entries, d: int):
    entries = np.asarray(entries, dtype=float)
    return entries[:d * d].reshape(d, d), entries[d * d:]


def solve_regression(A, b, ridge: float = 0.0):
    """Solves ``(A + ridge I) theta = b``, falling back to a tiny ridge.

    Returns ``(theta, condition, ridge_used, fell_back)``.
    """
    d = len(b)
    ridge_used = float(ridge)
    fell_back = False
    for attempt in range(2):
        M = A + ridge_used * np.eye(d)
        condition = float(np.linalg.cond(M)) if np.all(np.isfinite(M)) else math.inf
        try:
            if condition > CONDITION_LIMIT and attempt == 0 and ridge_used < FALLBACK_RIDGE:
                raise np.linalg.LinAlgError("ill-conditioned")
            theta = np.linalg.solve(M, b)
            if np.all(np.isfinite(theta)):
                return theta, condition, ridge_used, fell_back
        except np.linalg.LinAlgError:
            pass
        if attempt == 0 and ridge_used < FALLBACK_RIDGE:
            ridge_used, fell_back = FALLBACK_RIDGE, True
        else:
            break
    raise SingularSystemError(
        f"regression system unsolvable (condition number {condition:.3g}, "
        f"ridge {ridge_used})", condition)


def regression_release(dataset: Dataset, alpha: PrivacyMapping) -> LaplaceRelease:
    """Entries of ``X^T Diag(w) X`` then ``X^T Diag(w) y``, each with ``Laplace(d^2 + d)``."""
    values, eps, counts = _regression_arrays(dataset)
    d = values.shape[1] - 1
    w = _weights(alpha, [tuple(row) for row in values], eps)
    X, y = _split_regression(values, d)
    return regression_release_from_arrays(X, y, w * counts)


def regression_release_from_arrays(X, y, weights) -> LaplaceRelease:
    d = X.shape[1]
    return LaplaceRelease(_normal_equation_entries(X, y, weights), float(d * d + d))


def regression(dataset: Dataset, alpha: PrivacyMapping, rng: Rng | None, *,
               ridge: float = 0.0, symmetrize: bool = False,
               audit: bool = False) -> RegressionOutput:
    """AHDP linear regression by perturbing the weighted normal equations.

    Every entry of ``A = X^T Diag(w) X`` and ``b = X^T Diag(w) y`` gets
    independent ``Laplace(d^2 + d)`` noise, with ``w_i = alpha(z_i, eps_i)``.
    The noise on ``A`` is not symmetrized unless ``symmetrize`` is set, so
    ``A`` is in general asymmetric. Solving, symmetrizing and the ridge
    fallback are post-processing: the run spends ``alpha``.

    Raises:
      ValueError: records out of ``[-1, 1]`` or of mixed dimension.
      SingularSystemError: the perturbed system cannot be solved.
    """
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    release = regression_release(dataset, alpha)
    d = int(round((math.sqrt(1 + 4 * len(release)) - 1) / 2))
    noisy = _draw(release, rng, audit, None)
    A, b = unpack_entries(noisy, d)
    if symmetrize:
        A = 0.5 * (A + A.T)
    theta, condition, ridge_used, fell_back = solve_regression(A, b, ridge)
    return RegressionOutput(
        theta=theta, spent=alpha, condition=condition, ridge=ridge_used,
        fallback=fell_back,
        A=A.copy() if audit else None, b=b.copy() if audit else None,
        seed=None if rng is None else rng.seed)
