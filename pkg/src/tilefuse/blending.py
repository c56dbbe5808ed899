"""Per-tile blending weights.

Weights ramp linearly from a small positive floor at the tile border up to 1
over a configurable number of cells; the 2-D map is the outer product of the
two 1-D profiles. The floor keeps every fusion denominator strictly positive.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ArgumentError

DEFAULT_MIN_WEIGHT = 0.1


def ramp_profile(length: int, ramp_len: int, w_min: float) -> np.ndarray:
    """1-D border ramp: w_min at the edge, 1 from ramp_len cells inward."""
    if length < 1:
        raise ArgumentError(f"profile length must be positive, got {length}")
    if not 0.0 < w_min <= 1.0:
        raise ArgumentError(f"minimum weight must be in (0, 1], got {w_min}")
    if ramp_len < 0:
        raise ArgumentError(f"ramp length must be nonnegative, got {ramp_len}")
    if ramp_len == 0:
        return np.ones(length, dtype=np.float64)
    idx = np.arange(length, dtype=np.float64)
    dist = np.minimum(idx, length - 1 - idx)
    return np.minimum(1.0, w_min + (1.0 - w_min) * dist / ramp_len)


@lru_cache(maxsize=256)
def _cached_map(height, width, ramp_h, ramp_w, w_min):
    prof_h = ramp_profile(height, ramp_h, w_min)
    prof_w = ramp_profile(width, ramp_w, w_min)
    out = np.outer(prof_h, prof_w).astype(np.float32)
    out.setflags(write=False)
    return out


def ramp_weight_map(height: int, width: int, ramp_len, w_min: float = DEFAULT_MIN_WEIGHT) -> np.ndarray:
    """Separable (H, W) weight map; ramp_len is one int or an (h, w) pair.

    Maps are cached and returned read-only.
    """
    if isinstance(ramp_len, tuple):
        ramp_h, ramp_w = ramp_len
    else:
        ramp_h = ramp_w = int(ramp_len)
    return _cached_map(int(height), int(width), int(ramp_h), int(ramp_w), float(w_min))
