"""Physical constants and unit helpers. Timestamps are integer TDC ticks."""

from __future__ import annotations

import numpy as np

TICK_S = 81e-12
SPEED_OF_LIGHT = 299_792_458.0
FIBER_INDEX = 1.468


def s_to_ticks(seconds):
    return np.asarray(seconds, dtype=np.float64) / TICK_S


def ns_to_ticks(ns):
    return np.asarray(ns, dtype=np.float64) * 1e-9 / TICK_S


def ticks_to_ns(ticks):
    return np.asarray(ticks, dtype=np.float64) * TICK_S * 1e9


def light_time(distance_m: float, index: float = 1.0) -> float:
    """Propagation time in seconds over ``distance_m`` in a medium of refractive ``index``."""
    return distance_m * index / SPEED_OF_LIGHT
