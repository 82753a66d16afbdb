"""Exact privacy audits and attack demonstrations.

Every Laplace-based release has a closed-form density, so the audits here
compare log densities directly rather than estimating them from samples.
Post-division outputs (a mean, a solved regression) are not audited. They
are post-processing of an audited release and cannot widen its bound.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb, logsumexp

from ahdp.dataset import Dataset, Record, weighted_distance
from ahdp.mechanisms import (
    CountStage,
    HistogramStage,
    MeanStage,
    QueryFunction,
    RegressionStage,
    SumStage,
    frequency_release,
    keep_probability,
    linear_query_release,
    mean_release,
    regression_release,
    stage_release,
)
from ahdp.noise import LaplaceRelease, Rng, laplace_cdf, laplace_log_cdf
from ahdp.privacy import CappedEpsilon, PrivacyMapping, compose

TOLERANCE = 1e-9
GRID_POINTS = 64
MAX_BRUTE_FORCE = 12

MECHANISMS = ("linear-query", "sum", "count", "mean-parts", "frequency-vector",
              "regression-entries")


@dataclass
class AuditReport:
    mechanism: str
    pair: tuple
    claimed: float
    observed: float
    probes: str
    tolerance: float = TOLERANCE
    margin: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        self.margin = self.claimed - self.observed
        self.passed = bool(self.observed <= self.claimed + self.tolerance)

    def as_dict(self) -> dict:
        return {
            "mechanism": self.mechanism,
            "sizes": [self.pair[0].size, self.pair[1].size],
            "claimed": self.claimed,
            "observed": self.observed,
            "margin": self.margin,
            "pass": self.passed,
            "probes": self.probes,
        }


def _coordinate_grid(c1, c2, scale, extra=None, n=GRID_POINTS):
    lo = min(c1, c2) - 5 * scale
    hi = max(c1, c2) + 5 * scale
    points = [np.linspace(lo, hi, n), [c1, c2]]
    if extra is not None:
        points.append(extra)
    return np.concatenate(points)


def release_log_ratio_bound(rel1: LaplaceRelease, rel2: LaplaceRelease, probes: int = 0,
                            rng: Rng | None = None) -> float:
    """Largest ``|log p1(s) - log p2(s)|`` over a product probe grid.

    Coordinates are independent, so the joint maximum over the product grid
    is the larger of the summed per-coordinate maxima of each sign.
    """
    if len(rel1) != len(rel2) or not np.array_equal(rel1.scale, rel2.scale):
        raise ValueError("releases differ in shape or noise scale")
    randoms = None
    if probes and rng is not None:
        half = (probes + 1) // 2
        randoms = np.concatenate([rel1.sample(rng.child(0), half),
                                  rel2.sample(rng.child(1), probes - half)])
    up = 0.0
    down = 0.0
    for i in range(len(rel1)):
        extra = None if randoms is None else randoms[:, i]
        s = _coordinate_grid(rel1.center[i], rel2.center[i], rel1.scale[i], extra)
        r = (np.abs(s - rel2.center[i]) - np.abs(s - rel1.center[i])) / rel1.scale[i]
        up += float(np.max(r))
        down += float(np.max(-r))
    return max(up, down)


def audit_releases(name: str, d1: Dataset, d2: Dataset, rel1: LaplaceRelease,
                   rel2: LaplaceRelease, claimed: float, probes: int = 0,
                   rng: Rng | None = None) -> AuditReport:
    observed = release_log_ratio_bound(rel1, rel2, probes, rng)
    desc = f"{GRID_POINTS}-point grid per coordinate + centers + {probes} random"
    return AuditReport(name, (d1, d2), claimed, observed, desc)


def mechanism_release(mech: str, dataset: Dataset, alpha: PrivacyMapping, *,
                      alpha2: PrivacyMapping | None = None, low: float = 0.0,
                      high: float = 1.0, k: int | None = None) -> tuple[LaplaceRelease, PrivacyMapping]:
    """Release and spent mapping of a named mechanism."""
    if mech == "linear-query" or mech == "sum":
        return linear_query_release(dataset, QueryFunction.identity(low, high), alpha), alpha
    if mech == "count":
        return linear_query_release(dataset, QueryFunction.constant(1.0), alpha), alpha
    if mech == "mean-parts":
        a2 = alpha2 or alpha
        return mean_release(dataset, low, high, alpha, a2), compose(alpha, a2)
    if mech == "frequency-vector":
        if k is None:
            raise ValueError("frequency-vector needs k")
        spent = alpha if alpha2 is None else compose(alpha, alpha2)
        return frequency_release(dataset, k, alpha, alpha2), spent
    if mech == "regression-entries":
        return regression_release(dataset, alpha), alpha
    if mech in ("mean", "frequency", "regression"):
        raise ValueError(
            f"{mech!r} divides or solves after adding noise and has no closed-form "
            "density; audit its pre-division release instead "
            "(mean-parts, frequency-vector, regression-entries)")
    raise ValueError(f"unknown mechanism {mech!r}; choose from {MECHANISMS}")


def density_ratio_audit(mech: str, d1: Dataset, d2: Dataset, alpha: PrivacyMapping, *,
                        alpha2: PrivacyMapping | None = None, probes: int = 16,
                        rng: Rng | None = None, low: float = 0.0, high: float = 1.0,
                        k: int | None = None) -> AuditReport:
    """Checks ``|log p_D(s) - log p_D2(s)| <= d_alpha(D, D2)`` on a probe grid.

    Args:
      mech: one of :data:`MECHANISMS`.
      d1, d2: the datasets compared; they need not be neighbors.
      alpha, alpha2: mappings handed to the mechanism. The claimed bound uses
        the mapping the mechanism reports as spent.
      probes: random probe points added to the deterministic grid.
      low, high: value bounds for scalar mechanisms.
      k: alphabet size for ``frequency-vector``.
    """
    kwargs = dict(alpha2=alpha2, low=low, high=high, k=k)
    rel1, spent = mechanism_release(mech, d1, alpha, **kwargs)
    rel2, _ = mechanism_release(mech, d2, alpha, **kwargs)
    claimed = weighted_distance(spent, d1, d2)
    return audit_releases(mech, d1, d2, rel1, rel2, claimed, probes, rng)


def _clipped_log_probs(rel: LaplaceRelease, a: float, b: float, s: np.ndarray):
    c, lam = rel.center[0], rel.scale[0]
    inner = -math.log(2 * lam) - np.abs(s - c) / lam
    atom_low = float(laplace_log_cdf(a - c, lam))
    atom_high = float(laplace_log_cdf(c - b, lam))
    return inner, atom_low, atom_high


def clipped_linear_query_audit(d1: Dataset, d2: Dataset, f: QueryFunction,
                               alpha: PrivacyMapping, clip_low: float,
                               clip_high: float) -> AuditReport:
    """Audit of ``clip(linear_query, clip_low, clip_high)`` including its atoms."""
    if not clip_low < clip_high:
        raise ValueError("need clip_low < clip_high")
    rel1 = linear_query_release(d1, f, alpha)
    rel2 = linear_query_release(d2, f, alpha)
    s = np.linspace(clip_low, clip_high, GRID_POINTS + 2)[1:-1]
    i1, lo1, hi1 = _clipped_log_probs(rel1, clip_low, clip_high, s)
    i2, lo2, hi2 = _clipped_log_probs(rel2, clip_low, clip_high, s)
    observed = max(float(np.max(np.abs(i1 - i2))), abs(lo1 - lo2), abs(hi1 - hi2))
    claimed = weighted_distance(alpha, d1, d2)
    return AuditReport("clipped-linear-query", (d1, d2), claimed, observed,
                       f"{GRID_POINTS} interior points + 2 atoms")


# -- sample mechanism -------------------------------------------------------


def _subsample_patterns(dataset: Dataset, alpha: PrivacyMapping, t: float):
    """All subsamples with their probabilities, grouped by record type."""
    records = dataset.support()
    counts = [dataset.count(r) for r in records]
    probs = [keep_probability(alpha(r.value, r.epsilon), t) for r in records]
    for kept in itertools.product(*(range(h + 1) for h in counts)):
        logw = 0.0
        for h, k, p in zip(counts, kept, probs):
            if (p == 0 and k > 0) or (p == 1 and k < h):
                logw = -math.inf
                break
            logw += math.log(comb(h, k, exact=True))
            if k:
                logw += k * math.log(p)
            if h - k:
                logw += (h - k) * math.log1p(-p)
        if logw == -math.inf:
            continue
        yield Dataset({r: k for r, k in zip(records, kept) if k}), logw


def sample_mechanism_log_density(dataset: Dataset, alpha: PrivacyMapping, t: float,
                                 stage, points: np.ndarray) -> np.ndarray:
    """Exact log density of the sample mechanism's noisy release at ``points``.

    The mixture runs over every inclusion pattern of the dataset's units.
    Patterns are grouped by record type: within a group only the number kept
    matters, with binomial weight.
    """
    terms = []
    for sub, logw in _subsample_patterns(dataset, alpha, t):
        rel = stage_release(stage, sub, t)
        terms.append(logw + rel.log_density(points))
    return logsumexp(np.stack(terms), axis=0)


def _default_grid(dataset, alpha, t, stage, extras, n_grid, rng):
    lows, highs = None, None
    for d in [dataset] + [dataset + Dataset.from_records([r]) for r in extras]:
        for sub, _ in _subsample_patterns(d, alpha, t):
            rel = stage_release(stage, sub, t)
            lo, hi = rel.center - 5 * rel.scale, rel.center + 5 * rel.scale
            lows = lo if lows is None else np.minimum(lows, lo)
            highs = hi if highs is None else np.maximum(highs, hi)
    if len(lows) == 1:
        return np.linspace(lows[0], highs[0], n_grid)[:, None]
    return np.stack([rng.uniform(lows[i], highs[i], n_grid) for i in range(len(lows))], axis=1)


def sample_mechanism_brute_force(dataset: Dataset, alpha: PrivacyMapping, t: float, stage, *,
                                 grid=None, n_grid: int = 101, extra_records=(),
                                 rng: Rng | None = None,
                                 tolerance: float = 1e-6) -> list[AuditReport]:
    """Checks the sample mechanism against every add-one neighbor.

    For each record ``r`` in the support of ``dataset`` (plus
    ``extra_records``), compares the exact mixture density on ``dataset`` and
    on ``dataset + {r}`` at the grid points. The log ratio must stay within
    ``min(alpha(r), t)``.

    Args:
      grid: points of shape ``(G,)`` or ``(G, m)``. By default ``n_grid``
        points span every mixture component's center +- 5 noise scales;
        vector stages draw points uniformly from that box.
    """
    if dataset.size > MAX_BRUTE_FORCE:
        raise ValueError(f"brute force is limited to {MAX_BRUTE_FORCE} records, "
                         f"got {dataset.size}")
    extras = list(dataset.support()) + [Record.make(*r) for r in extra_records
                                        if Record.make(*r) not in dataset]
    if grid is None:
        grid = _default_grid(dataset, alpha, t, stage, extras, n_grid, rng or Rng(0))
    grid = np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    base = sample_mechanism_log_density(dataset, alpha, t, stage, grid)
    capped = CappedEpsilon(t, base=alpha)
    reports = []
    for r in extras:
        neighbor = dataset + Dataset.from_records([r])
        other = sample_mechanism_log_density(neighbor, alpha, t, stage, grid)
        observed = float(np.max(np.abs(other - base)))
        reports.append(AuditReport(f"sample-mechanism:{stage.name}", (dataset, neighbor),
                                   capped(r.value, r.epsilon), observed,
                                   f"{len(grid)} grid points", tolerance))
    return reports


# -- attacks and interpretations --------------------------------------------


def hdp_pitfall_output(values: np.ndarray, epsilons: np.ndarray, rng: Rng, size: int | None = None):
    """Swap-model heterogeneous mechanism ``clip(<eps, x>/|eps|_1 + L(1/|eps|_1), -1, 3)``.

    With ``|eps|_1 = 0`` the noise scale is infinite; the clipped output then
    takes the limit distribution, -1 or 3 with probability 1/2 each.
    """
    total = float(np.sum(epsilons))
    shape = () if size is None else (size,)
    if total == 0:
        return np.where(rng.uniform(size=shape) < 0.5, -1.0, 3.0)
    center = float(np.dot(epsilons, values)) / total
    return np.clip(center + rng.laplace(1.0 / total, size=shape if shape else None), -1.0, 3.0)


def hdp_pitfall_demo(n: int, eps_large: float, trials: int, rng: Rng) -> float:
    """Success rate of a threshold attack on a swap-model heterogeneous mechanism.

    Hypothesis A: ``n`` records ``(1, 0)`` (everyone fully private). Its
    output is the limit distribution on ``{-1, 3}``. Hypothesis B: ``m >= 1``
    of those records are replaced by ``(0, eps_large)``. The output then
    concentrates near 0. The attacker says A when ``|out - 1| > 1.5``. Each
    trial picks the hypothesis by a fair coin and ``m`` uniformly in
    ``1..n``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not eps_large >= 0:
        raise ValueError("eps_large must be >= 0")
    correct = 0
    for trial in range(trials):
        stream = rng.child(trial)
        is_private = bool(stream.uniform() < 0.5)
        if is_private:
            values, eps = np.ones(n), np.zeros(n)
        else:
            m = int(stream.integers(1, n + 1))
            values = np.concatenate([np.zeros(m), np.ones(n - m)])
            eps = np.concatenate([np.full(m, float(eps_large)), np.zeros(n - m)])
        out = float(hdp_pitfall_output(values, eps, stream.child(0)))
        guess_private = abs(out - 1.0) > 1.5
        correct += guess_private == is_private
    return correct / trials


def posterior_odds_audit(mech: str, observed: Dataset, record, alpha: PrivacyMapping, *,
                         prior_odds: float = 1.0, probes: int = 16, rng: Rng | None = None,
                         **kwargs) -> AuditReport:
    """Bayesian reading of the density audit for ``D_o`` versus ``D_o + {record}``.

    The posterior odds are computed explicitly from ``prior_odds`` and the
    likelihood ratio at each probe; the report compares
    ``max |log(posterior / prior)|`` with the record's spent privacy.
    """
    if not prior_odds > 0:
        raise ValueError(f"prior odds must be > 0, got {prior_odds}")
    record = Record.make(*record)
    d2 = observed + Dataset.from_records([record])
    rel1, spent = mechanism_release(mech, observed, alpha, **kwargs)
    rel2, _ = mechanism_release(mech, d2, alpha, **kwargs)
    pts = []
    for i in range(len(rel1)):
        pts.append(_coordinate_grid(rel1.center[i], rel2.center[i], rel1.scale[i]))
    n = min(len(p) for p in pts)
    grid = np.stack([p[:n] for p in pts], axis=1)
    if probes and rng is not None:
        grid = np.concatenate([grid, rel1.sample(rng, probes)])
    log_prior = math.log(prior_odds)
    log_posterior = log_prior + rel1.log_density(grid) - rel2.log_density(grid)
    shift = float(np.max(np.abs(log_posterior - log_prior)))
    claimed = spent(record.value, record.epsilon)
    return AuditReport(f"posterior-odds:{mech}", (observed, d2), claimed, shift,
                       f"{len(grid)} probe outputs, prior odds {prior_odds!r}")


def threshold_test_errors(rel1: LaplaceRelease, rel2: LaplaceRelease, threshold: float, *,
                          trials: int = 0, rng: Rng | None = None) -> tuple[float, float]:
    """Type-I/II errors of "say D2 when the first coordinate exceeds ``threshold``".

    With ``trials == 0`` the rates are exact; otherwise they are Monte-Carlo
    estimates from ``trials`` draws per hypothesis.
    """
    if trials:
        if rng is None:
            raise ValueError("Monte-Carlo errors need a random stream")
        y1 = rel1.sample(rng.child(0), trials)[:, 0]
        y2 = rel2.sample(rng.child(1), trials)[:, 0]
        return float(np.mean(y1 > threshold)), float(np.mean(y2 <= threshold))
    e1 = 1.0 - float(laplace_cdf(threshold - rel1.center[0], rel1.scale[0]))
    e2 = float(laplace_cdf(threshold - rel2.center[0], rel2.scale[0]))
    return e1, e2


# -- random neighbor pairs --------------------------------------------------

EPSILON_LEVELS = (0.0, 0.1, 0.5, 1.0, 2.0, 5.0)


def _random_value(kind: str, rng: Rng, low: float, high: float, k: int, d: int):
    if kind == "scalar":
        return round(float(rng.uniform(low, high)), 2)
    if kind == "categorical":
        return int(rng.integers(1, k + 1))
    return tuple(round(float(v), 2) for v in rng.uniform(-1, 1, size=d + 1))


def random_neighbor_pair(kind: str, rng: Rng, *, max_size: int = 8, max_support: int = 5,
                         low: float = 0.0, high: float = 1.0, k: int = 4, d: int = 2,
                         allow_inf: bool = False) -> tuple[Dataset, Dataset]:
    """A random dataset and an add-one or remove-one neighbor of it.

    Both datasets have at most ``max_size`` records over at most
    ``max_support`` record types.
    """
    levels = EPSILON_LEVELS + ((math.inf,) if allow_inf else ())
    n_types = int(rng.integers(1, max_support + 1))
    pool = [Record.make(_random_value(kind, rng, low, high, k, d),
                        levels[int(rng.integers(len(levels)))]) for _ in range(n_types)]
    size = int(rng.integers(1, max_size))
    base = Dataset.from_records(pool[int(rng.integers(n_types))] for _ in range(size))
    if rng.uniform() < 0.5 and base.size > 1:
        removed = base.support()[int(rng.integers(len(base.support())))]
        return base, base - Dataset.from_records([removed])
    added = pool[int(rng.integers(n_types))]
    return base, base + Dataset.from_records([added])
