"""Seeded Latin hypercube sampling for initial designs of experiments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class LhsConfig:
    """A fully determined LHS draw: same config, bit-identical output."""

    n_points: int
    bounds: tuple[tuple[float, float], ...]
    seed: int

    def __post_init__(self) -> None:
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        if not self.bounds:
            raise ValueError("need at least one dimension")
        for d, (lo, hi) in enumerate(self.bounds):
            if not lo < hi:
                raise ValueError(f"degenerate bounds ({lo}, {hi}) in dimension {d}")


def lhs_sample(config: LhsConfig) -> np.ndarray:
    """Draw a Latin hypercube sample, one point per stratum per dimension.

    For each dimension, in order, a stratum permutation and then the
    within-stratum uniform offsets are drawn from a PCG64 generator seeded
    with ``config.seed``; the fixed draw order makes the output portable
    across platforms.
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_points
    dim = len(config.bounds)
    out = np.empty((n, dim))
    for d, (lo, hi) in enumerate(config.bounds):
        strata = rng.permutation(n)
        offsets = rng.random(n)
        out[:, d] = lo + (strata + offsets) * ((hi - lo) / n)
    return out


def lhs_in_bounds(n_points: int, bounds, seed: int) -> np.ndarray:
    """Convenience wrapper: ``bounds`` is an (n, 2) array-like of (lower, upper)."""
    b = np.asarray(bounds, dtype=float)
    pairs = tuple((float(lo), float(hi)) for lo, hi in b)
    return lhs_sample(LhsConfig(n_points=n_points, bounds=pairs, seed=seed))
