"""Reproducible Brownian increments with exact coarsening.

Every increment is a pure function of ``(seed, path_index, channel, step)``:
a Philox4x64 counter-based generator is keyed on ``(seed, path_index)``,
each channel starts from its own counter block, and the raw 64-bit words are
mapped to standard normals by the inverse normal CDF.  Regenerating any path
therefore gives the same bits regardless of how paths are split across
workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError

__all__ = ["BrownianPath", "generate_brownian", "brownian_batch", "coarsen",
           "coarsen_increments", "standard_normals"]

_MASK64 = (1 << 64) - 1


def standard_normals(seed: int, path_index: int, channel: int, n: int) -> np.ndarray:
    """The first ``n`` N(0, 1) draws of one (seed, path, channel) stream."""
    key = (int(seed) & _MASK64) | ((int(path_index) & _MASK64) << 64)
    # Channel selects the third counter word; the generator steps the first.
    bitgen = np.random.Philox(key=key, counter=int(channel) << 128)
    raw = bitgen.random_raw(n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True)
class BrownianPath:
    seed: int
    path_index: int
    m: int
    fine_dt: float
    n_fine: int
    increments: np.ndarray  # shape (m, n_fine)


def generate_brownian(seed, path_index, m, fine_dt, n_fine) -> BrownianPath:
    if fine_dt <= 0 or n_fine < 1 or m < 1:
        raise ConfigurationError("need fine_dt > 0, n_fine >= 1 and m >= 1")
    scale = math.sqrt(fine_dt)
    inc = np.empty((m, n_fine))
    for c in range(m):
        inc[c] = scale * standard_normals(seed, path_index, c, n_fine)
    inc.flags.writeable = False
    return BrownianPath(int(seed), int(path_index), m, float(fine_dt), int(n_fine), inc)


def _halve(a, axis):
    a = np.moveaxis(a, axis, -1)
    out = a[..., 0::2] + a[..., 1::2]
    return np.moveaxis(out, -1, axis)


def coarsen_increments(inc: np.ndarray, factor: int, axis: int = -1) -> np.ndarray:
    """Block sums of ``factor`` consecutive increments along ``axis``.

    Powers of two are summed as a balanced binary tree (repeated pairwise
    halving), so coarsening by 2 then 2 equals coarsening by 4 bit for bit.
    Other factors are summed left to right.
    """
    factor = int(factor)
    n = inc.shape[axis]
    if factor < 1 or n % factor:
        raise ConfigurationError(f"factor {factor} does not divide {n} steps")
    out = np.asarray(inc, dtype=float)
    while factor > 1 and factor % 2 == 0:
        out = _halve(out, axis)
        factor //= 2
    if factor > 1:
        a = np.moveaxis(out, axis, -1)
        blocks = a.reshape(a.shape[:-1] + (a.shape[-1] // factor, factor))
        acc = blocks[..., 0]
        for k in range(1, factor):
            acc = acc + blocks[..., k]
        out = np.moveaxis(acc, -1, axis)
    elif out is inc:
        out = out.copy()
    return out


def coarsen(path: BrownianPath, factor: int) -> np.ndarray:
    """Coarse increments of shape ``(m, n_fine // factor)``."""
    return coarsen_increments(path.increments, factor, axis=1)


def brownian_batch(seed, path_indices, m, fine_dt, n_fine) -> np.ndarray:
    """Fine increments for many paths, shape ``(n_fine, n_paths, m)``.

    Step-major so a solver can take ``inc[k]`` as one contiguous slab.
    """
    path_indices = list(path_indices)
    out = np.empty((n_fine, len(path_indices), m))
    scale = math.sqrt(fine_dt)
    for p, idx in enumerate(path_indices):
        for c in range(m):
            out[:, p, c] = scale * standard_normals(seed, idx, c, n_fine)
    return out
