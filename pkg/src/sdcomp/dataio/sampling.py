"""Sparse-depth subsampling from dense ground truth.

Selection is uniform at random over valid pixels. Real trackers do not
measure depth at random locations, so this is an approximation used to
emulate benchmark density levels (0.5% / 0.15% / 0.05% of VGA).
"""

from __future__ import annotations

import numpy as np

from ..scaffold import DenseDepthMap, SparseDepthMap

# Fractions of the full image area matching the benchmark's 1500 / 500 /
# 150 tracked features on 640x480 frames.
DENSITY_PRESETS = {"high": 0.005, "mid": 0.0015, "low": 0.0005}


class InsufficientValidPixels(ValueError):
    """Not enough valid ground-truth pixels for the requested density."""


def subsample_sparse(gt: DenseDepthMap, density: float, seed: int) -> SparseDepthMap:
    """Draw round(density * W * H) sparse points from valid pixels.

    Deterministic per seed; raises when the target count is zero or exceeds
    the number of valid pixels.
    """
    if not 0 < density <= 1:
        raise ValueError(f"density must be in (0, 1], got {density}")
    height, width = gt.depth.shape
    target = int(round(density * width * height))
    valid = np.flatnonzero(gt.validity & (gt.depth > 0))
    if target < 1 or target > valid.size:
        raise InsufficientValidPixels(
            f"need {target} points but only {valid.size} valid pixels"
        )
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(valid, size=target, replace=False))
    vs, us = np.unravel_index(chosen, gt.depth.shape)
    points = np.column_stack([us.astype(float), vs.astype(float), gt.depth.reshape(-1)[chosen]])
    return SparseDepthMap(width, height, points)
