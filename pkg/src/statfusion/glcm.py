"""Grey-level co-occurrence matrices.

A GLCM here counts horizontally adjacent pixel pairs (distance 1, 0 degrees),
symmetrises the counts and normalises them to a probability table. Extra
offsets can be passed as ``(drow, dcol)`` tuples.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadChannelIndex, BadLevelCount, DegenerateSize
from .imageio import ImageRgb

DEFAULT_LEVELS = 32
HORIZONTAL = ((0, 1),)


@dataclass(frozen=True, eq=False)
class Glcm:
    """Normalised symmetric co-occurrence table plus marginal moments.

    Moments use 0-based level indices as values.
    """

    levels: int
    p: np.ndarray
    marginal_x: np.ndarray
    marginal_y: np.ndarray
    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float


def _check_levels(levels):
    if not isinstance(levels, (int, np.integer)) or not 2 <= levels <= 256:
        raise BadLevelCount(f"levels must be an integer in [2, 256], got {levels!r}")


def quantize_channel(img: ImageRgb, channel: int, levels: int = DEFAULT_LEVELS) -> np.ndarray:
    """Map 8-bit values to ``floor(v * levels / 256)``."""
    if channel not in (0, 1, 2):
        raise BadChannelIndex(f"channel must be 0, 1 or 2, got {channel!r}")
    _check_levels(levels)
    return (img.channel(channel).astype(np.int64) * levels) // 256


def cooccurrence_counts(grid: np.ndarray, levels: int, offsets=HORIZONTAL) -> np.ndarray:
    """Raw (unsymmetrised) pair counts ``C[a, b]`` for the given offsets."""
    grid = np.asarray(grid, dtype=np.int64)
    if grid.ndim != 2:
        raise DegenerateSize("grid must be two-dimensional")
    rows, cols = grid.shape
    counts = np.zeros(levels * levels, dtype=np.int64)
    n_pairs = 0
    for dr, dc in offsets:
        r0, r1 = max(0, -dr), rows - max(0, dr)
        c0, c1 = max(0, -dc), cols - max(0, dc)
        if r1 <= r0 or c1 <= c0:
            continue
        first = grid[r0:r1, c0:c1]
        second = grid[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        counts += np.bincount((first * levels + second).ravel(), minlength=levels * levels)
        n_pairs += first.size
    if n_pairs == 0:
        raise DegenerateSize(f"grid of shape {grid.shape} has no pixel pair at the requested offsets")
    return counts.reshape(levels, levels)


def glcm_from_probabilities(p: np.ndarray) -> Glcm:
    p = np.asarray(p, dtype=np.float64)
    levels = p.shape[0]
    idx = np.arange(levels, dtype=np.float64)
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mu_x = float(idx @ px)
    mu_y = float(idx @ py)
    sigma_x = float(np.sqrt(max(((idx - mu_x) ** 2) @ px, 0.0)))
    sigma_y = float(np.sqrt(max(((idx - mu_y) ** 2) @ py, 0.0)))
    for arr in (p, px, py):
        arr.setflags(write=False)
    return Glcm(levels, p, px, py, mu_x, mu_y, sigma_x, sigma_y)


def build_glcm(grid: np.ndarray, levels: int = DEFAULT_LEVELS, offsets=HORIZONTAL) -> Glcm:
    """Symmetrised, normalised GLCM of a quantised grid."""
    _check_levels(levels)
    grid = np.asarray(grid)
    if grid.size and (grid.min() < 0 or grid.max() >= levels):
        raise BadLevelCount(f"grid values must lie in [0, {levels - 1}]")
    counts = cooccurrence_counts(grid, levels, offsets)
    sym = counts + counts.T
    return glcm_from_probabilities(sym / sym.sum())


def channel_glcm(img: ImageRgb, channel: int, levels: int = DEFAULT_LEVELS, offsets=HORIZONTAL) -> Glcm:
    return build_glcm(quantize_channel(img, channel, levels), levels, offsets)
