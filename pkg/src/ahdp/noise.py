"""Seeded randomness and the Laplace distribution.

Every random draw in the package goes through :class:`Rng`, a counter-based
(Philox) generator addressed by ``(seed, stream path)``. Child streams are
derived by index, so trial ``i`` of an experiment sees the same noise whether
trials run in order, out of order or in parallel.

Laplace noise is sampled by inverting the CDF of a uniform draw on the open
interval ``(0, 1)``; :func:`laplace_log_density` is the exact density of that
sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_U53 = 2.0**-53


class Rng:
    """Deterministic random stream.

    Args:
      seed: unsigned 64-bit seed.
      stream: path of child indices identifying an independent sub-stream.
    """

    def __init__(self, seed: int = 0, stream: tuple[int, ...] = ()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.stream = tuple(int(i) for i in stream)
        sequence = np.random.SeedSequence(seed, spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.Philox(sequence))

    def child(self, *index: int) -> "Rng":
        """Independent stream for the given index path."""
        return Rng(self.seed, self.stream + tuple(index))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform_open(self, size=None):
        """Uniform draws on the open interval (0, 1), on a 2^-53 lattice."""
        k = self._gen.integers(0, 2**53, size=size, dtype=np.int64)
        return (k + 0.5) * _U53

    def laplace(self, scale, size=None):
        return laplace_sample(self, scale, size)

    def binomial(self, n, p, size=None):
        return self._gen.binomial(n, p, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def permutation(self, x):
        return self._gen.permutation(x)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"


def _check_scale(scale) -> np.ndarray:
    scale = np.asarray(scale, dtype=float)
    if np.any(~(scale > 0)) or np.any(~np.isfinite(scale)):
        raise ValueError(f"Laplace scale must be positive and finite, got {scale}")
    return scale


def laplace_sample(rng: Rng, scale, size=None):
    """Draws Laplace(0, scale) noise by inverse CDF."""
    scale = _check_scale(scale)
    if size is None:
        size = scale.shape if scale.ndim else None
    u = rng.uniform_open(size) - 0.5
    draw = -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    if np.ndim(draw) == 0:
        return float(draw)
    return draw


def laplace_log_density(x, scale):
    """``-log(2 * scale) - |x| / scale``, elementwise."""
    scale = _check_scale(scale)
    out = -np.log(2.0 * scale) - np.abs(x) / scale
    return float(out) if np.ndim(out) == 0 else out


def laplace_cdf(x, scale):
    scale = _check_scale(scale)
    z = np.asarray(x, dtype=float) / scale
    out = np.where(z < 0, 0.5 * np.exp(np.minimum(z, 0.0)),
                   1.0 - 0.5 * np.exp(-np.maximum(z, 0.0)))
    return float(out) if np.ndim(out) == 0 else out


def laplace_log_cdf(x, scale):
    """Log of the Laplace CDF, accurate in both tails."""
    scale = _check_scale(scale)
    z = np.asarray(x, dtype=float) / scale
    out = np.where(z < 0, math.log(0.5) + np.minimum(z, 0.0),
                   np.log1p(-0.5 * np.exp(-np.maximum(z, 0.0))))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class LaplaceRelease:
    """A vector ``center + Laplace(scale)`` with independent coordinates.

    Every mechanism in this package releases one of these before any
    post-processing (division, solving, clipping), so its density is known in
    closed form.
    """

    center: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        scale = np.broadcast_to(np.asarray(self.scale, dtype=float), center.shape).copy()
        _check_scale(scale)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", scale)

    def __len__(self) -> int:
        return self.center.shape[0]

    def sample(self, rng: Rng, size: int | None = None) -> np.ndarray:
        """One release (shape ``(m,)``) or ``size`` of them (``(size, m)``)."""
        shape = self.center.shape if size is None else (size,) + self.center.shape
        return self.center + laplace_sample(rng, self.scale, shape)

    def coordinate_log_density(self, points: np.ndarray) -> np.ndarray:
        return laplace_log_density(np.asarray(points) - self.center, self.scale)

    def log_density(self, points: np.ndarray) -> np.ndarray:
        """Joint log density at ``points`` of shape ``(..., m)``."""
        return np.sum(self.coordinate_log_density(points), axis=-1)

    def concat(self, other: "LaplaceRelease") -> "LaplaceRelease":
        return LaplaceRelease(np.concatenate([self.center, other.center]),
                              np.concatenate([self.scale, other.scale]))
