"""From synchronized click streams to Bell quantities.

Two-folds pair each peripheral click with a central-arm click of the same source;
four-folds pair an AB two-fold with a BC two-fold inside the (swept) four-fold window.
Both stages use greedy nearest-neighbour matching, earliest event first, each event
consumed at most once, and only within one settings-schedule block.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Literal

import numba
import numpy as np

from .quantum_core import (
    SETTINGS,
    Behavior,
    Convention,
    IncompleteBehaviorError,
    chsh_from_correlators,
    functional_from_correlators,
    parity_table,
)
from .units import SPEED_OF_LIGHT, TICK_S, ns_to_ticks

TWOFOLD_DTYPE = np.dtype([
    ("t_mid", "f8"),
    ("x_local", "u1"),
    ("x_central", "u1"),
    ("a_local", "u1"),
    ("b_central", "u1"),
    ("block_index", "u4"),
    ("i_local", "i8"),
    ("i_central", "i8"),
])

FOURFOLD_DTYPE = np.dtype([
    ("t_ab", "f8"),
    ("t_bc", "f8"),
    ("dt", "f8"),
    ("xA", "u1"),
    ("xB", "u1"),
    ("xC", "u1"),
    ("a", "u1"),
    ("bA", "u1"),
    ("bC", "u1"),
    ("c", "u1"),
    ("block_index", "u4"),
    ("i_ab", "i8"),
    ("i_bc", "i8"),
])

DEFAULT_TWOFOLD_WINDOW_NS = 1.0
FIELD_OPTIMAL_WINDOW_NS = 51_435.0
SHORTEST_VIOLATING_WINDOW_NS = 283.5


def default_fourfold_windows_ns(n: int = 12) -> np.ndarray:
    return np.geomspace(SHORTEST_VIOLATING_WINDOW_NS, FIELD_OPTIMAL_WINDOW_NS, n)


class IncompleteSettingsError(ValueError):
    pass


class IncompleteBlockWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    std_error: float
    n_blocks: int
    flag: str = ""

    @property
    def ok(self) -> bool:
        return not self.flag

    def sigma_distance(self, bound: float) -> float:
        if self.std_error <= 0:
            return float("inf") if self.value > bound else float("-inf")
        return (self.value - bound) / self.std_error


@numba.njit(cache=True)
def _greedy_match(tx, ty, bx, by, half_window):
    """For each x (ascending), take the nearest unused y in the same block within half_window."""
    nx, ny = tx.size, ty.size
    used = np.zeros(ny, dtype=np.bool_)
    mx = np.empty(min(nx, ny), dtype=np.int64)
    my = np.empty(min(nx, ny), dtype=np.int64)
    n = 0
    j0 = 0
    for i in range(nx):
        lo = tx[i] - half_window
        hi = tx[i] + half_window
        while j0 < ny and ty[j0] < lo:
            j0 += 1
        best = -1
        best_d = 0.0
        j = j0
        while j < ny and ty[j] <= hi:
            if not used[j] and by[j] == bx[i]:
                d = abs(ty[j] - tx[i])
                if best < 0 or d < best_d:
                    best = j
                    best_d = d
            j += 1
        if best >= 0:
            used[best] = True
            mx[n] = i
            my[n] = best
            n += 1
    return mx[:n], my[:n]


def greedy_match(tx, ty, bx, by, half_window: float) -> tuple[np.ndarray, np.ndarray]:
    tx = np.ascontiguousarray(tx, dtype=np.float64)
    ty = np.ascontiguousarray(ty, dtype=np.float64)
    bx = np.ascontiguousarray(bx, dtype=np.int64)
    by = np.ascontiguousarray(by, dtype=np.int64)
    if tx.size == 0 or ty.size == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return _greedy_match(tx, ty, bx, by, float(half_window))


def twofold_match(stream_local: np.ndarray, stream_central: np.ndarray,
                  window: float = float(ns_to_ticks(DEFAULT_TWOFOLD_WINDOW_NS))) -> np.ndarray:
    """Pair peripheral and central-arm clicks lying within +-window/2 ticks."""
    i, j = greedy_match(stream_local["tick"], stream_central["tick"],
                        stream_local["block_index"], stream_central["block_index"], window / 2)
    x, y = stream_local[i], stream_central[j]
    out = np.empty(i.size, dtype=TWOFOLD_DTYPE)
    out["t_mid"] = (x["tick"].astype(np.float64) + y["tick"].astype(np.float64)) / 2
    out["x_local"], out["x_central"] = x["setting"], y["setting"]
    out["a_local"], out["b_central"] = x["detector"], y["detector"]
    out["block_index"] = x["block_index"]
    out["i_local"], out["i_central"] = i, j
    return out[np.argsort(out["t_mid"], kind="stable")]


def fourfold_filter(ab: np.ndarray, bc: np.ndarray, window: float) -> np.ndarray:
    """Join AB and BC two-folds whose midpoints differ by at most ``window`` ticks."""
    i, j = greedy_match(ab["t_mid"], bc["t_mid"], ab["block_index"], bc["block_index"], window)
    x, y = ab[i], bc[j]
    consistent = x["x_central"] == y["x_central"]
    x, y, i, j = x[consistent], y[consistent], i[consistent], j[consistent]
    out = np.empty(i.size, dtype=FOURFOLD_DTYPE)
    out["t_ab"], out["t_bc"] = x["t_mid"], y["t_mid"]
    out["dt"] = np.abs(x["t_mid"] - y["t_mid"])
    out["xA"], out["xB"], out["xC"] = x["x_local"], x["x_central"], y["x_local"]
    out["a"], out["bA"] = x["a_local"], x["b_central"]
    out["bC"], out["c"] = y["b_central"], y["a_local"]
    out["block_index"] = x["block_index"]
    out["i_ab"], out["i_bc"] = i, j
    return out


@dataclass(frozen=True)
class CountsTable:
    """Four-fold counts indexed [xA, xB, xC, a, bA, bC, c]."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (2,) * 7 or c.min() < 0:
            raise ValueError("counts must be a non-negative (2,)*7 integer table")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_events(cls, events: np.ndarray) -> CountsTable:
        idx = np.ravel_multi_index(tuple(events[k].astype(np.intp) for k in
                                         ("xA", "xB", "xC", "a", "bA", "bC", "c")), (2,) * 7)
        return cls(np.bincount(idx, minlength=128).reshape((2,) * 7))

    @property
    def per_setting(self) -> np.ndarray:
        return self.counts.reshape(2, 2, 2, 16).sum(axis=-1)

    @property
    def missing_settings(self) -> list[tuple[int, int, int]]:
        n = self.per_setting
        return [x for x in SETTINGS if n[x] == 0]

    def behavior(self) -> Behavior:
        parity = parity_table(self.counts).astype(np.float64)
        n = self.per_setting.astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            table = parity / n[..., None, None, None]
        return Behavior(table)

    def correlators(self) -> tuple[np.ndarray, np.ndarray]:
        """Correlator estimates and their binomial variances, both indexed [xA, xB, xC]."""
        if self.missing_settings:
            raise IncompleteBehaviorError(f"no events for settings {self.missing_settings}")
        parity = parity_table(self.counts).astype(np.float64)
        sign = np.array([1.0, -1.0])
        signs = np.einsum("a,b,c->abc", sign, sign, sign)
        n = self.per_setting.astype(np.float64)
        E = np.einsum("xyzabc,abc->xyz", parity, signs) / n
        return E, (1 - E ** 2) / n


def estimate_behavior(events: np.ndarray) -> tuple[Behavior, CountsTable]:
    counts = CountsTable.from_events(events)
    if counts.missing_settings:
        warnings.warn(f"no four-fold events for settings {counts.missing_settings}; "
                      "those cells are undefined", stacklevel=2)
    return counts.behavior(), counts


def biloc_with_error(counts: CountsTable, convention: Convention = "peripheral-sum"
                     ) -> tuple[EstimateWithError, float, float]:
    """B from one dataset, error by binomial propagation through I1 and I2."""
    E, var = counts.correlators()
    res = functional_from_correlators(E, convention)
    if convention == "peripheral-sum":
        v1, v2 = var[:, 0, :].sum() / 16, var[:, 1, :].sum() / 16
    else:
        v1, v2 = var[:, :, 0].sum() / 16, var[:, :, 1].sum() / 16
    err2 = 0.0
    for I, v in ((res.I1, v1), (res.I2, v2)):
        # d sqrt|I| = dI / (2 sqrt|I|); guard the cusp at I = 0
        err2 += v / (4 * max(abs(I), np.sqrt(v), 1e-300))
    return EstimateWithError(res.B, float(np.sqrt(err2)), 1), res.I1, res.I2


def _block_groups(block_index: np.ndarray, n_blocks: int, cycle: int) -> tuple[np.ndarray, int]:
    """Assign events to contiguous groups made of whole settings cycles."""
    c = block_index.astype(np.int64) // cycle
    lo, hi = c.min(), c.max()
    n_cycles = int(hi - lo + 1)
    if n_blocks > n_cycles:
        warnings.warn(f"only {n_cycles} settings cycles available; using {n_cycles} blocks "
                      f"instead of {n_blocks}", IncompleteBlockWarning, stacklevel=3)
        n_blocks = n_cycles
    return ((c - lo) * n_blocks) // n_cycles, n_blocks


def _biloc_value(events: np.ndarray, convention: Convention) -> float:
    counts = CountsTable.from_events(events)
    if counts.missing_settings:
        raise IncompleteSettingsError(str(counts.missing_settings))
    E, _ = counts.correlators()
    return functional_from_correlators(E, convention).B


def _chsh_value(events: np.ndarray) -> float:
    idx = np.ravel_multi_index(tuple(events[k].astype(np.intp) for k in
                                     ("x_local", "x_central", "a_local", "b_central")), (2,) * 4)
    n = np.bincount(idx, minlength=16).reshape(2, 2, 2, 2).astype(np.float64)
    tot = n.sum(axis=(2, 3))
    if np.any(tot == 0):
        raise IncompleteSettingsError("missing setting pairs")
    sign = np.array([[1.0, -1.0], [-1.0, 1.0]])
    # local observable first: S = E00 + E01 + E10 - E11 with (x_local, x_central)
    return chsh_from_correlators(np.einsum("xyab,ab->xy", n, sign) / tot)


def block_errors(events: np.ndarray, n_blocks: int,
                 functional: Literal["biloc", "chsh"] = "biloc",
                 convention: Convention = "peripheral-sum",
                 cycle: int = len(SETTINGS)) -> EstimateWithError:
    """Mean and standard error of the functional over contiguous groups of schedule blocks.

    Group boundaries fall on multiples of ``cycle`` schedule blocks, so each group sees
    every setting combination of a block-cyclic schedule.
    """
    if n_blocks < 2:
        raise ValueError("n_blocks must be >= 2")
    if events.size == 0:
        return EstimateWithError(float("nan"), float("nan"), 0, "empty")
    groups, n_blocks = _block_groups(events["block_index"], n_blocks, cycle)
    values, dropped = [], []
    for g in range(n_blocks):
        sel = events[groups == g]
        try:
            values.append(_biloc_value(sel, convention) if functional == "biloc"
                          else _chsh_value(sel))
        except (IncompleteSettingsError, IncompleteBehaviorError):
            dropped.append(g)
    if dropped:
        warnings.warn(f"{len(dropped)} of {n_blocks} blocks lack some setting combinations "
                      f"and were dropped: {dropped}", IncompleteBlockWarning, stacklevel=2)
    if len(values) < 2:
        return EstimateWithError(float("nan"), float("nan"), len(values), "too few complete blocks")
    v = np.array(values)
    return EstimateWithError(float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size)), v.size)


@dataclass(frozen=True)
class SweepPoint:
    window: float
    estimate: EstimateWithError
    n_fourfolds: int
    I1: float = float("nan")
    I2: float = float("nan")

    @property
    def sigma_distance(self) -> float:
        return self.estimate.sigma_distance(1.0) if self.estimate.ok else float("nan")


def window_sweep(ab: np.ndarray, bc: np.ndarray, windows, n_blocks: int = 25,
                 convention: Convention = "peripheral-sum") -> list[SweepPoint]:
    windows = np.asarray(windows, dtype=np.float64)
    if np.any(np.diff(windows) < 0):
        raise ValueError("windows must be sorted ascending")
    out = []
    for w in windows:
        ff = fourfold_filter(ab, bc, w)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            est = block_errors(ff, n_blocks, "biloc", convention)
        for c in caught:
            warnings.warn(f"window {w:.0f} ticks: {c.message}", c.category, stacklevel=2)
        I1 = I2 = float("nan")
        if ff.size and not CountsTable.from_events(ff).missing_settings:
            _, I1, I2 = biloc_with_error(CountsTable.from_events(ff), convention)
        out.append(SweepPoint(float(w), est, int(ff.size), I1, I2))
    return out


def optimal_window(sweep: list[SweepPoint]) -> SweepPoint:
    """Window with the largest sigma-distance of B above the classical bound."""
    valid = [p for p in sweep if p.estimate.ok]
    if not valid:
        raise ValueError("no window produced a valid estimate")
    return max(valid, key=lambda p: p.sigma_distance)


def chsh_from_twofolds(events: np.ndarray, n_blocks: int = 25) -> EstimateWithError:
    if events.size == 0:
        raise IncompleteSettingsError("no two-fold events")
    _chsh_value(events)
    return block_errors(events, n_blocks, "chsh")


def spacelike_check(window: float, distance_m: float, tick_s: float = TICK_S) -> bool:
    """True iff a window of ``window`` ticks is shorter than light travel over ``distance_m``."""
    if distance_m <= 0:
        raise ValueError("distance must be positive")
    return window * tick_s < distance_m / SPEED_OF_LIGHT


@dataclass
class AnalysisResult:
    ab: np.ndarray
    bc: np.ndarray
    sweep: list[SweepPoint]
    chsh: dict[str, EstimateWithError]
    headline: SweepPoint
    meta: dict = field(default_factory=dict)

    def summary(self, distance_m: float = 270.0) -> dict:
        h = self.headline
        return {
            "B": h.estimate.value,
            "B_std_error": h.estimate.std_error,
            "I1": h.I1,
            "I2": h.I2,
            "S_AB": self.chsh["AB"].value,
            "S_AB_std_error": self.chsh["AB"].std_error,
            "S_BC": self.chsh["BC"].value,
            "S_BC_std_error": self.chsh["BC"].std_error,
            "optimal_window_ns": h.window * TICK_S * 1e9,
            "sigma_distance": h.sigma_distance,
            "n_fourfolds": h.n_fourfolds,
            "spacelike": spacelike_check(h.window, distance_m),
            **self.meta,
        }


def analyze_streams(streams: dict[str, np.ndarray], windows_ticks, *,
                    twofold_window: float = float(ns_to_ticks(DEFAULT_TWOFOLD_WINDOW_NS)),
                    n_blocks: int = 25, convention: Convention = "peripheral-sum") -> AnalysisResult:
    """Two-folds per link, four-fold window sweep, and CHSH per link, on aligned streams."""
    ab = twofold_match(streams["A"], streams["B_armA"], twofold_window)
    bc = twofold_match(streams["C"], streams["B_armC"], twofold_window)
    sweep = window_sweep(ab, bc, windows_ticks, n_blocks, convention)
    chsh = {"AB": chsh_from_twofolds(ab, n_blocks), "BC": chsh_from_twofolds(bc, n_blocks)}
    return AnalysisResult(ab, bc, sweep, chsh, optimal_window(sweep),
                          {"n_twofold_AB": int(ab.size), "n_twofold_BC": int(bc.size)})
