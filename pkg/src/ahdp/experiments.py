"""Synthetic correlated datasets and the mean / frequency / regression sweeps.

Every trial draws its randomness from child streams keyed by
``(size, trial, ...)``, so a sweep gives the same numbers whatever order or
subset of trials is run. Each method's noise stream is keyed by a checksum
of its name, so adding a method to a sweep does not perturb the others.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import expit

from ahdp.dataset import Dataset, Record
from ahdp.mechanisms import (
    HistogramStage,
    MeanStage,
    RegressionStage,
    SingularSystemError,
    finish_ratio,
    frequency_release_from_arrays,
    keep_probability,
    mean_release_from_arrays,
    regression_release_from_arrays,
    solve_regression,
    unpack_entries,
)
from ahdp.noise import LaplaceRelease, Rng
from ahdp.privacy import Epsilon, OneMinusExp, PrivacyMapping, Ratio, Scaled, parse_mapping

EDUCATION_LEVELS = (0.01, 0.1, 0.5, 1.0, 5.0)

# Rows: education 1 (none) .. 6 (PhD). Columns: EDUCATION_LEVELS.
# Privacy demand tightens as education rises.
DEFAULT_CONTINGENCY = np.array([
    [0.01, 0.04, 0.15, 0.30, 0.50],
    [0.02, 0.06, 0.20, 0.32, 0.40],
    [0.03, 0.10, 0.25, 0.32, 0.30],
    [0.05, 0.15, 0.30, 0.28, 0.22],
    [0.08, 0.22, 0.32, 0.23, 0.15],
    [0.12, 0.30, 0.30, 0.18, 0.10],
]) * np.array([[0.10], [0.20], [0.25], [0.20], [0.15], [0.10]])

WEIGHT_LOW, WEIGHT_HIGH = 0.0, 150.0

MEAN_METHODS = ("lq-eps-half", "lq-one-minus-exp-half", "lq-ratio-half", "sm-t2", "sm-t0.5")
FREQ_METHODS = ("lq-eps-half", "lq-one-minus-exp-half", "lq-ratio-half", "sm-t0.1", "sm-t1")
REGRESSION_METHODS = ("m1-eps", "m1-one-minus-exp", "m1-ratio", "sm-t1", "non-private")

_PRESET_ALIASES = {"eps": Epsilon(), "one-minus-exp": OneMinusExp(), "ratio": Ratio()}


# -- generators -------------------------------------------------------------


def _pearson(a, b) -> float:
    return float(np.corrcoef(a, b)[0, 1])


def gen_weight_eps(n: int, seed: int, target_corr: float = -0.84, *,
                   independent: bool = False, s: float = 15.0,
                   tolerance: float = 0.05) -> Dataset:
    """Body weights (kg, 2 decimals) with privacy demands that fall as weight rises.

    ``weight ~ N(75, 15)`` clipped to ``[30, 150]``; ``epsilon =
    clip(3 sigmoid(-(w - 75) / s) + N(0, tau), 0, 3)`` rounded to 2
    decimals. ``tau`` is found by bisection (20 steps, common random numbers)
    so that the sample correlation hits ``target_corr``. With
    ``independent`` the demands are shuffled, which keeps their marginal and
    breaks the dependence.

    Raises:
      ValueError: if the target cannot be reached within ``tolerance``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not -1 < target_corr < 0:
        raise ValueError(f"target_corr must lie in (-1, 0), got {target_corr}")
    rng = Rng(seed)
    weights = np.round(np.clip(rng.child(0).normal(75.0, 15.0, n), 30.0, 150.0), 2)
    z = rng.child(1).normal(size=n)
    signal = 3.0 * expit(-(weights - 75.0) / s)

    def demands(tau):
        return np.round(np.clip(signal + tau * z, 0.0, 3.0), 2)

    def corr(tau):
        eps = demands(tau)
        return _pearson(weights, eps) if np.std(eps) > 0 else 0.0

    lo, hi = 0.0, 3.0
    for _ in range(20):
        mid = 0.5 * (lo + hi)
        if corr(mid) < target_corr:
            lo = mid
        else:
            hi = mid
    tau = lo if abs(corr(lo) - target_corr) <= abs(corr(hi) - target_corr) else hi
    if abs(corr(tau) - target_corr) > tolerance:
        raise ValueError(f"could not reach correlation {target_corr} "
                         f"(closest {corr(tau):.3f}); try a larger n")
    eps = demands(tau)
    if independent:
        eps = rng.child(2).permutation(eps)
    return Dataset.from_records(zip(weights.tolist(), eps.tolist()))


def gen_education_eps(n: int, seed: int, contingency=None) -> Dataset:
    """Education labels 1..6 with demands in :data:`EDUCATION_LEVELS`, drawn
    i.i.d. from a 6x5 joint probability table."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    table = DEFAULT_CONTINGENCY if contingency is None else np.asarray(contingency, dtype=float)
    if table.shape != (6, 5):
        raise ValueError(f"contingency must be 6x5, got {table.shape}")
    if np.any(table < 0) or abs(table.sum() - 1.0) > 1e-9:
        raise ValueError("contingency entries must be >= 0 and sum to 1")
    cells = Rng(seed).generator.multinomial(n, table.ravel() / table.sum())
    counts = {}
    for index, count in enumerate(cells):
        if count:
            label, level = divmod(index, 5)
            counts[Record.make(label + 1, EDUCATION_LEVELS[level])] = int(count)
    return Dataset(counts)


def contingency_table(dataset: Dataset) -> np.ndarray:
    """Observed 6x5 counts of an education dataset."""
    table = np.zeros((6, 5), dtype=np.int64)
    for record, count in dataset.items():
        table[record.value - 1, EDUCATION_LEVELS.index(record.epsilon)] += count
    return table


def chi_squared_pvalue(table: np.ndarray) -> float:
    keep_rows = table.sum(axis=1) > 0
    keep_cols = table.sum(axis=0) > 0
    return float(stats.chi2_contingency(table[keep_rows][:, keep_cols])[1])


def gen_regression_eps(base, seed: int) -> Dataset:
    """Attaches ``epsilon = exp(U)``, ``U ~ Uniform(-5, 2)``, to each row of ``base``.

    ``base`` is an ``(n, d + 1)`` array of covariates then target, already
    rescaled to ``[-1, 1]``.
    """
    base = np.asarray(base, dtype=float)
    if base.ndim != 2 or base.shape[1] < 2:
        raise ValueError("base must be an (n, d + 1) array")
    if np.any(np.abs(base) > 1):
        raise ValueError("normalize covariates and targets to [-1, 1] first")
    eps = np.exp(Rng(seed).uniform(-5.0, 2.0, size=len(base)))
    return Dataset.from_records(zip(map(tuple, base.tolist()), eps.tolist()))


def normalize_regression(X, y):
    """Linearly rescales each covariate column and the target onto ``[-1, 1]``."""
    Z = np.column_stack([np.asarray(X, dtype=float), np.asarray(y, dtype=float)])
    lo, hi = Z.min(axis=0), Z.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    Z = np.clip(2.0 * (Z - lo) / span - 1.0, -1.0, 1.0)
    return Z[:, :-1], Z[:, -1]


def load_housing_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Reads an ``x1,...,xd,y`` CSV (no privacy column) into ``(X, y)``."""
    with open(path, newline="") as fh:
        lines = [line for line in fh if line.strip() and not line.lstrip().startswith("#")]
    rows = list(csv.reader(lines))
    header = [h.strip().lower() for h in rows[0]]
    if header[-1] != "y" or header[:-1] != [f"x{i + 1}" for i in range(len(header) - 1)]:
        raise ValueError(f"{path}: expected header x1,...,xd,y, got {rows[0]!r}")
    data = np.array(rows[1:], dtype=float)
    return data[:, :-1], data[:, -1]


def synthetic_housing(n: int = 20_000, d: int = 8, seed: int = 0):
    """Offline stand-in for a housing table: correlated covariates, a fixed
    linear model and Gaussian noise, rescaled to ``[-1, 1]``."""
    rng = Rng(seed)
    mix = rng.child(0).normal(size=(d, d)) / math.sqrt(d) + np.eye(d)
    X = rng.child(1).normal(size=(n, d)) @ mix
    theta = np.linspace(1.0, -1.0, d)
    y = X @ theta + rng.child(2).normal(0.0, 1.0, n)
    return normalize_regression(X, y)


def housing_split(X, y, n_train: int = 18_000, seed: int = 0):
    """Shuffles and splits into train and test ``(n, d + 1)`` arrays."""
    Z = np.column_stack([X, y])
    order = Rng(seed).permutation(len(Z))
    return Z[order[:n_train]], Z[order[n_train:]]


# -- methods ----------------------------------------------------------------


@dataclass(frozen=True)
class Method:
    name: str
    family: str  # "lq", "sm", "m1" or "baseline"
    mapping: PrivacyMapping | None = None
    t: float | None = None

    @property
    def stream(self) -> int:
        return zlib.crc32(self.name.encode())


def parse_method(name: str) -> Method:
    """Method names.

    ``lq-<preset>-half``: both mean (or frequency) parts at half the preset.
    ``lq:<mapping>``: both parts at the given mapping, unhalved.
    ``sm-t<t>``: sample mechanism with demand-capped keep probabilities.
    ``m1-<preset>`` / ``m1:<mapping>``: weighted functional regression.
    ``non-private``: least squares without noise.
    """
    if name == "non-private":
        return Method(name, "baseline")
    m = re.fullmatch(r"lq-(eps|one-minus-exp|ratio)-half", name)
    if m:
        return Method(name, "lq", Scaled(_PRESET_ALIASES[m.group(1)], 0.5))
    if name.startswith("lq:"):
        return Method(name, "lq", parse_mapping(name[3:]))
    m = re.fullmatch(r"sm-t([0-9.]+(?:e-?[0-9]+)?)", name)
    if m:
        t = float(m.group(1))
        if not t > 0:
            raise ValueError(f"{name}: t must be > 0")
        return Method(name, "sm", Epsilon(), t)
    m = re.fullmatch(r"m1-(eps|one-minus-exp|ratio)", name)
    if m:
        return Method(name, "m1", _PRESET_ALIASES[m.group(1)])
    if name.startswith("m1:"):
        return Method(name, "m1", parse_mapping(name[3:]))
    raise ValueError(f"unknown method {name!r}")


# -- results ----------------------------------------------------------------


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


@dataclass
class SweepResult:
    """Per ``(method, size)`` error statistic of one sweep."""

    task: str
    metric: str
    sizes: list
    methods: list
    trials: int
    seed: int
    values: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def value(self, method: str, size: int) -> float:
        return self.values[(method, size)]

    def series(self, method: str) -> list[float]:
        return [self.values[(method, n)] for n in self.sizes]

    def rows(self):
        for method in self.methods:
            for size in self.sizes:
                yield method, size, self.metric, self.values[(method, size)], self.trials, self.seed

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["method", "size", "metric", "value", "trials", "seed"])
        for method, size, metric, value, trials, seed in self.rows():
            writer.writerow([method, size, metric, _fmt(value), trials, seed])
        return out.getvalue()

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "metric": self.metric,
            "trials": self.trials,
            "seed": self.seed,
            "sizes": list(self.sizes),
            "notes": self.notes,
            "rows": [{"method": m, "size": n, "value": v if math.isfinite(v) else _fmt(v)}
                     for m, n, _, v, _, _ in self.rows()],
        }

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "results.csv").write_text(self.to_csv())
        (directory / "results.json").write_text(json.dumps(self.to_json(), indent=2) + "\n")


# -- sweeps -----------------------------------------------------------------


def _units(dataset: Dataset):
    values, eps, counts = dataset.arrays()
    reps = counts.astype(np.int64)
    return np.repeat(values, reps, axis=0), np.repeat(eps, reps)


def _draw(release: LaplaceRelease, rng: Rng, audit: bool) -> np.ndarray:
    return release.center.copy() if audit else release.sample(rng)


def _check_sizes(sizes, available: int) -> list[int]:
    sizes = [int(n) for n in sizes]
    if not sizes or any(n < 1 for n in sizes):
        raise ValueError("sizes must be positive")
    if max(sizes) > available:
        raise ValueError(f"size {max(sizes)} exceeds the {available} available records")
    return sizes


def _sm_keep(method: Method, x, eps, rng: Rng) -> np.ndarray:
    p = keep_probability(method.mapping.weights(x, eps), method.t)
    return rng.uniform(size=len(eps)) < p


def mean_estimate_arrays(method: Method, x, eps, rng: Rng, *, low: float, high: float,
                         floor: float = 1.0, audit: bool = False) -> float:
    """One run of a mean method on unit-level arrays."""
    ones = np.ones(len(x))
    if method.family == "lq":
        w = method.mapping.weights(x, eps)
        if not np.all(np.isfinite(w)):
            raise ValueError(f"{method.name}: non-finite weights")
        release = mean_release_from_arrays(x, ones, w, w, low, high)
        return float(finish_ratio(_draw(release, rng.child(1), audit), floor))
    if method.family == "sm":
        kept = _sm_keep(method, x, eps, rng.child(0))
        stage = MeanStage(low, high, floor)
        release = LaplaceRelease(stage.center(x[kept], ones[kept]), stage.scale(method.t))
        return float(stage.finish(_draw(release, rng.child(1), audit)))
    raise ValueError(f"{method.name} is not a mean method")


def mean_sweep(dataset: Dataset, sizes, trials: int = 500, methods=MEAN_METHODS,
               seed: int = 0, *, low: float = WEIGHT_LOW, high: float = WEIGHT_HIGH,
               floor: float = 1.0, audit: bool = False) -> SweepResult:
    """MSE against the subsample's true mean, per method and subsample size."""
    values, eps = _units(dataset)
    values = values.astype(float)
    sizes = _check_sizes(sizes, len(values))
    parsed = [parse_method(m) for m in methods]
    rng = Rng(seed)
    sq = {(m.name, n): [] for m in parsed for n in sizes}
    for n in sizes:
        for trial in range(trials):
            idx = rng.child(n, trial, 0).choice(len(values), n, replace=False)
            x, e = values[idx], eps[idx]
            truth = math.fsum(x) / n
            for m in parsed:
                est = mean_estimate_arrays(m, x, e, rng.child(n, trial, 1, m.stream),
                                           low=low, high=high, floor=floor, audit=audit)
                sq[(m.name, n)].append((est - truth) ** 2)
    result = SweepResult("mean", "mse", sizes, [m.name for m in parsed], trials, seed)
    result.values = {key: math.fsum(v) / len(v) for key, v in sq.items()}
    return result


def frequency_estimate_arrays(method: Method, labels, eps, k: int, rng: Rng, *,
                              floor: float = 1.0, audit: bool = False) -> np.ndarray:
    ones = np.ones(len(labels))
    if method.family == "lq":
        w = method.mapping.weights(labels, eps)
        release = frequency_release_from_arrays(labels, ones, w, w, k)
        noisy = _draw(release, rng.child(1), audit)
        return noisy[:k] / max(noisy[k], floor)
    if method.family == "sm":
        kept = _sm_keep(method, labels, eps, rng.child(0))
        stage = HistogramStage(k, floor)
        release = LaplaceRelease(stage.center(labels[kept], ones[kept]), stage.scale(method.t))
        return stage.finish(_draw(release, rng.child(1), audit))
    raise ValueError(f"{method.name} is not a frequency method")


def freq_sweep(dataset: Dataset, sizes, trials: int = 500, methods=FREQ_METHODS,
               seed: int = 0, *, k: int = 6, floor: float = 1.0,
               audit: bool = False) -> SweepResult:
    """Mean l-infinity error of relative label frequencies.

    Estimates are clipped to ``[0, 1]`` before scoring, so every error lies
    in ``[0, 1]``.
    """
    labels, eps = _units(dataset)
    sizes = _check_sizes(sizes, len(labels))
    parsed = [parse_method(m) for m in methods]
    rng = Rng(seed)
    errs = {(m.name, n): [] for m in parsed for n in sizes}
    for n in sizes:
        for trial in range(trials):
            idx = rng.child(n, trial, 0).choice(len(labels), n, replace=False)
            x, e = labels[idx], eps[idx]
            truth = np.bincount(x, minlength=k + 1)[1:k + 1] / n
            for m in parsed:
                est = frequency_estimate_arrays(m, x, e, k, rng.child(n, trial, 1, m.stream),
                                                floor=floor, audit=audit)
                errs[(m.name, n)].append(float(np.max(np.abs(np.clip(est, 0, 1) - truth))))
    result = SweepResult("freq", "mean_linf", sizes, [m.name for m in parsed], trials, seed)
    result.values = {key: math.fsum(v) / len(v) for key, v in errs.items()}
    return result


def regression_fit_arrays(method: Method, X, y, eps, rng: Rng, *, audit: bool = False):
    """Coefficients from one run of a regression method, ``None`` if unsolvable."""
    d = X.shape[1]
    if method.family == "baseline":
        return np.linalg.lstsq(X, y, rcond=None)[0]
    if method.family == "m1":
        w = method.mapping.weights(np.column_stack([X, y]), eps)
        release = regression_release_from_arrays(X, y, w)
    elif method.family == "sm":
        kept = _sm_keep(method, X, eps, rng.child(0))
        stage = RegressionStage(d)
        values = np.column_stack([X[kept], y[kept]])
        release = LaplaceRelease(stage.center(values, np.ones(int(kept.sum()))),
                                 stage.scale(method.t))
    else:
        raise ValueError(f"{method.name} is not a regression method")
    A, b = unpack_entries(_draw(release, rng.child(1), audit), d)
    try:
        return solve_regression(A, b)[0]
    except SingularSystemError:
        return None


def regression_sweep(train, test, sizes, trials: int = 50, methods=REGRESSION_METHODS,
                     seed: int = 0, *, audit: bool = False) -> SweepResult:
    """Median test residual (mean squared error) per method and training size.

    Args:
      train: a regression :class:`Dataset` with privacy demands.
      test: an ``(m, d + 1)`` array or a regression dataset.
    """
    Z, eps = _units(train)
    if isinstance(test, Dataset):
        test = _units(test)[0]
    test = np.asarray(test, dtype=float)
    if test.shape[1] != Z.shape[1]:
        raise ValueError(f"train has {Z.shape[1] - 1} covariates, test has {test.shape[1] - 1}")
    X_test, y_test = test[:, :-1], test[:, -1]
    sizes = _check_sizes(sizes, len(Z))
    parsed = [parse_method(m) for m in methods]
    rng = Rng(seed)
    res = {(m.name, n): [] for m in parsed for n in sizes}
    failures = {m.name: 0 for m in parsed}
    for n in sizes:
        for trial in range(trials):
            idx = rng.child(n, trial, 0).choice(len(Z), n, replace=False)
            X, y, e = Z[idx, :-1], Z[idx, -1], eps[idx]
            for m in parsed:
                theta = regression_fit_arrays(m, X, y, e, rng.child(n, trial, 1, m.stream),
                                              audit=audit)
                if theta is None:
                    failures[m.name] += 1
                    res[(m.name, n)].append(math.inf)
                else:
                    res[(m.name, n)].append(float(np.mean((X_test @ theta - y_test) ** 2)))
    result = SweepResult("regress", "median_residual", sizes, [m.name for m in parsed],
                         trials, seed)
    result.values = {key: float(np.median(v)) for key, v in res.items()}
    result.notes = {"unsolvable_fits": failures}
    return result
