"""Common time base across stations.

Three stages, as run on the TDC records:
  * drift: the 10 kHz reference edges fix a piecewise-linear map local ticks -> reference ticks;
  * coarse offset: median difference of matched 1 Hz pulses (GPS grade, ~10 ns);
  * fine offset: peak of the two-fold time-difference histogram in a narrow search window.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .streams import ReferenceSignal
from .units import TICK_S, ns_to_ticks

MAX_GAP_PERIODS = 10
LARGE_DRIFT = 1e-4
MIN_PEAK_RATIO = 3.0


class DriftWarning(UserWarning):
    pass


class SyncError(RuntimeError):
    pass


@dataclass(frozen=True)
class DriftModel:
    """Piecewise-linear map from local ticks to reference-frame ticks."""

    knots_local: np.ndarray
    knots_nominal: np.ndarray
    slope: float  # local ticks per reference tick, global fit
    gaps: tuple[tuple[int, int], ...] = ()
    residual: float = 0.0

    @property
    def drift_correction(self) -> float:
        return self.slope - 1.0

    def apply(self, ticks) -> np.ndarray:
        x = np.asarray(ticks, dtype=np.float64)
        kl, kn = self.knots_local, self.knots_nominal
        if kl.size == 1:
            return kn[0] + (x - kl[0]) / self.slope
        y = np.interp(x, kl, kn)
        lo, hi = x < kl[0], x > kl[-1]
        y[lo] = kn[0] + (x[lo] - kl[0]) * (kn[1] - kn[0]) / (kl[1] - kl[0])
        y[hi] = kn[-1] + (x[hi] - kl[-1]) * (kn[-1] - kn[-2]) / (kl[-1] - kl[-2])
        return y

    def in_gap(self, ticks) -> np.ndarray:
        x = np.asarray(ticks, dtype=np.int64)
        mask = np.zeros(x.shape, dtype=bool)
        for lo, hi in self.gaps:
            mask |= (x > lo) & (x < hi)
        return mask


@dataclass
class DriftCorrected:
    stream: np.ndarray
    model: DriftModel
    n_excluded: int = 0


def _line_fit(k: np.ndarray, e: np.ndarray) -> tuple[float, float]:
    """Least-squares e = a + b k, centred for conditioning."""
    km, em = k.mean(), e.mean()
    dk = k - km
    denom = float(dk @ dk)
    b = float(dk @ (e - em)) / denom if denom > 0 else 0.0
    return em - b * km, b


def fit_drift(ref: ReferenceSignal, period_s: float = 1e-4, tick_s: float = TICK_S,
              segment_edges: int = 1000) -> DriftModel:
    edges = ref.edges.astype(np.float64)
    if edges.size < 2:
        raise SyncError("drift correction needs at least two reference edges")
    period = period_s / tick_s
    steps = np.rint(np.diff(edges) / period).astype(np.int64)
    if np.any(steps < 1):
        raise SyncError("reference edges closer than one nominal period")
    gap_at = np.flatnonzero(steps > MAX_GAP_PERIODS)
    k = np.concatenate([[0], np.cumsum(steps)]).astype(np.float64)

    a, b = _line_fit(k, edges)
    slope = b / period
    if abs(slope - 1) > LARGE_DRIFT:
        warnings.warn(f"reference drift {slope - 1:.3g} exceeds {LARGE_DRIFT:g}", DriftWarning,
                      stacklevel=2)
    # reference frame chosen so that local tick 0 maps to (about) reference tick 0
    n0 = a / slope

    bounds = set(range(0, edges.size, segment_edges)) | {edges.size - 1}
    for g in gap_at:
        bounds |= {int(g), int(g) + 1}
    bounds = sorted(bounds)
    segments = [(s, e) for s, e in zip(bounds[:-1], bounds[1:]) if not (s in gap_at and e == s + 1)]
    fits = {}
    for s, e in segments:
        if e - s >= 1:
            fits[(s, e)] = _line_fit(k[s:e + 1], edges[s:e + 1])
    knot_vals: dict[int, list[float]] = {}
    for (s, e), (sa, sb) in fits.items():
        knot_vals.setdefault(s, []).append(sa + sb * k[s])
        knot_vals.setdefault(e, []).append(sa + sb * k[e])
    idx = np.array(sorted(knot_vals))
    knots_local = np.array([np.mean(knot_vals[i]) for i in idx])
    knots_nominal = n0 + k[idx] * period
    gaps = tuple((int(edges[g]), int(edges[g + 1])) for g in gap_at)
    model = DriftModel(knots_local, knots_nominal, slope, gaps)
    resid = model.apply(edges) - (n0 + k * period)
    return replace(model, residual=float(np.max(np.abs(resid))))


def drift_correct(stream: np.ndarray, ref: ReferenceSignal, period_s: float = 1e-4,
                  tick_s: float = TICK_S) -> DriftCorrected:
    """Rescale record ticks to the reference frame; records inside reference gaps are dropped."""
    model = fit_drift(ref, period_s, tick_s)
    ticks = stream["tick"].astype(np.int64)
    keep = ~model.in_gap(ticks)
    out = stream[keep].copy()
    # map the centre of each local bin, then re-quantize
    corrected = np.floor(model.apply(ticks[keep] + 0.5))
    if corrected.size and corrected.min() < 0:
        raise SyncError("drift correction produced negative ticks")
    out["tick"] = corrected.astype(np.uint64)
    order = np.argsort(out["tick"], kind="stable")
    return DriftCorrected(out[order], model, int((~keep).sum()))


@dataclass(frozen=True)
class CoarseOffset:
    offset_ticks: float
    uncertainty_ticks: float
    n_pulses: int


def coarse_offset(pulses_x, pulses_y, gps_sigma_s: float = 0.0, tick_s: float = TICK_S,
                  max_separation_ticks: float | None = None) -> CoarseOffset:
    """Median of (y - nearest x) over matched 1 Hz pulses; offset is Y minus X."""
    x = np.asarray(getattr(pulses_x, "edges", pulses_x), dtype=np.float64)
    y = np.asarray(getattr(pulses_y, "edges", pulses_y), dtype=np.float64)
    if x.size == 0 or y.size == 0:
        raise SyncError("coarse offset needs at least one pulse on each side")
    if max_separation_ticks is None:
        max_separation_ticks = 0.5 / tick_s
    j = np.clip(np.searchsorted(x, y), 1, max(x.size - 1, 1))
    cand = np.stack([x[j - 1], x[np.minimum(j, x.size - 1)]])
    nearest = cand[np.argmin(np.abs(cand - y), axis=0), np.arange(y.size)]
    d = y - nearest
    d = d[np.abs(d) <= max_separation_ticks]
    if d.size == 0:
        raise SyncError("no overlapping pulses")
    return CoarseOffset(float(np.median(d)), gps_sigma_s / tick_s, int(d.size))


@numba.njit(cache=True)
def _diff_histogram(tx, ty, lo, hi, width):
    nbins = (hi - lo) // width + 1
    counts = np.zeros(nbins, dtype=np.int64)
    j0 = 0
    ny = ty.size
    for i in range(tx.size):
        start = tx[i] + lo
        while j0 < ny and ty[j0] < start:
            j0 += 1
        j = j0
        stop = tx[i] + hi
        while j < ny and ty[j] <= stop:
            counts[(ty[j] - start) // width] += 1
            j += 1
    return counts


def difference_histogram(ticks_x, ticks_y, lo: int, hi: int, width: int = 1):
    """Counts of (y - x) for every pair with lo <= y - x <= hi; returns (bin_lo_edges, counts)."""
    tx = np.ascontiguousarray(ticks_x, dtype=np.int64)
    ty = np.ascontiguousarray(ticks_y, dtype=np.int64)
    counts = _diff_histogram(tx, ty, np.int64(lo), np.int64(hi), np.int64(width))
    return lo + width * np.arange(counts.size, dtype=np.int64), counts


def _ticks(stream) -> np.ndarray:
    arr = np.asarray(stream)
    return arr["tick"] if arr.dtype.names else arr


@dataclass
class SyncSolution:
    offset_ticks: int
    offset_fine: float
    drift_correction: float
    residual: float
    histogram: tuple[np.ndarray, np.ndarray]
    peak_ratio: float
    low_confidence: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def confidence(self) -> str:
        return "low" if self.low_confidence else "ok"

    def to_json(self) -> str:
        return json.dumps({"offset_ticks": int(self.offset_ticks),
                           "offset_fine_ticks": float(self.offset_fine),
                           "drift_correction": float(self.drift_correction),
                           "residual_ticks": float(self.residual),
                           "peak_ratio": float(self.peak_ratio),
                           "confidence": self.confidence}, indent=2)

    def histogram_rows(self) -> list[tuple[float, int]]:
        edges, counts = self.histogram
        width = edges[1] - edges[0] if edges.size > 1 else 1
        centers = edges + (width - 1) / 2
        return list(zip(centers.tolist(), counts.tolist()))


def fine_offset(stream_x, stream_y, coarse: float, search_halfwidth: int | None = None,
                bin_width: int = 1, refine_bins: int = 3,
                drift_correction: float = 0.0) -> SyncSolution:
    """Offset (Y minus X, ticks) at the highest peak of the pair-difference histogram.

    Ties go to the bin nearest ``coarse``. The integer estimate is the peak bin centre;
    ``offset_fine`` adds a centroid over +-refine_bins bins.
    """
    if search_halfwidth is None:
        search_halfwidth = int(np.ceil(ns_to_ticks(40.0)))
    tx, ty = _ticks(stream_x), _ticks(stream_y)
    center = int(np.rint(coarse))
    lo, hi = center - int(search_halfwidth), center + int(search_halfwidth)
    edges, counts = difference_histogram(tx, ty, lo, hi, bin_width)
    centers = edges + (bin_width - 1) / 2
    peak_val = counts.max() if counts.size else 0
    if peak_val == 0:
        return SyncSolution(center, float(center), drift_correction, float(search_halfwidth),
                            (edges, counts), 0.0, True, {"reason": "empty histogram"})
    cand = np.flatnonzero(counts == peak_val)
    p = int(cand[np.argmin(np.abs(centers[cand] - coarse))])

    lo_i, hi_i = max(p - refine_bins, 0), min(p + refine_bins, counts.size - 1)
    w = counts[lo_i:hi_i + 1].astype(np.float64)
    rel = (np.arange(lo_i, hi_i + 1) - p) * bin_width
    offset_fine = float(centers[p]) + float(w @ rel) / float(w.sum())

    half = peak_val / 2
    left = p
    while left > 0 and counts[left - 1] >= half:
        left -= 1
    right = p
    while right < counts.size - 1 and counts[right + 1] >= half:
        right += 1
    residual = (right - left + 1) * bin_width / 2

    guard = max(5, 3 * (right - left + 1))
    bg_mask = np.ones(counts.size, dtype=bool)
    bg_mask[max(p - guard, 0):p + guard + 1] = False
    bg = counts[bg_mask].mean() if bg_mask.any() else 0.0
    ratio = float(peak_val / max(bg, 1.0))
    return SyncSolution(int(np.rint(centers[p])), offset_fine, drift_correction, float(residual),
                        (edges, counts), ratio, ratio < MIN_PEAK_RATIO)


@dataclass
class NetworkSync:
    """Streams on station B's reference frame, with the solutions that put them there."""

    streams: dict[str, np.ndarray]
    drift: dict[str, DriftModel]
    coarse: dict[str, CoarseOffset]
    fine: dict[str, SyncSolution]

    @property
    def low_confidence(self) -> list[str]:
        return [link for link, sol in self.fine.items() if sol.low_confidence]

    def summary(self) -> dict:
        return {link: {"offset_ticks": int(sol.offset_ticks),
                       "offset_fine_ticks": float(sol.offset_fine),
                       "drift_correction": float(sol.drift_correction),
                       "residual_ticks": float(sol.residual),
                       "peak_ratio": float(sol.peak_ratio),
                       "confidence": sol.confidence,
                       "coarse_ticks": float(self.coarse[link].offset_ticks)}
                for link, sol in self.fine.items()}


def align_network(streams: dict[str, np.ndarray], square: dict[str, ReferenceSignal],
                  pulses: dict[str, ReferenceSignal], expected_delay_ticks: dict[str, float],
                  *, period_s: float = 1e-4, gps_sigma_s: float = 0.0,
                  search_halfwidth: int | None = None) -> NetworkSync:
    """Drift-correct every station, then shift A and C onto B using pulses + two-fold peaks.

    ``expected_delay_ticks`` holds the nominal central-minus-peripheral propagation delay
    of each link ("AB", "BC"); the fine search is centred on coarse offset + that delay.
    """
    station_of = {"A": "A", "B_armA": "B", "B_armC": "B", "C": "C"}
    models = {st: fit_drift(square[st], period_s) for st in ("A", "B", "C")}
    corrected = {}
    for node, stream in streams.items():
        model = models[station_of[node]]
        ticks = stream["tick"].astype(np.int64)
        keep = ~model.in_gap(ticks)
        out = stream[keep].copy()
        out["tick"] = np.floor(model.apply(ticks[keep] + 0.5)).astype(np.int64).clip(0)
        corrected[node] = out[np.argsort(out["tick"], kind="stable")]
    pulse_ref = {st: models[st].apply(pulses[st].edges.astype(np.float64) + 0.5)
                 for st in ("A", "B", "C")}

    aligned = {"B_armA": corrected["B_armA"], "B_armC": corrected["B_armC"]}
    coarse, fine = {}, {}
    for link, node, central, station in (("AB", "A", "B_armA", "A"), ("BC", "C", "B_armC", "C")):
        c = coarse_offset(pulse_ref[station], pulse_ref["B"], gps_sigma_s)
        sol = fine_offset(corrected[node], corrected[central],
                          c.offset_ticks + expected_delay_ticks[link], search_halfwidth,
                          drift_correction=models[station].drift_correction)
        sol.meta["central_drift_correction"] = models["B"].drift_correction
        shifted = corrected[node].copy()
        shifted["tick"] = (shifted["tick"].astype(np.int64) + sol.offset_ticks).clip(0)
        aligned[node] = shifted
        coarse[link], fine[link] = c, sol
    return NetworkSync({n: aligned[n] for n in streams}, models, coarse, fine)
