from __future__ import annotations

import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilocnet.event_sim import ClockModel, field_network, reference_signal
from bilocnet.streams import ReferenceSignal, make_stream
from bilocnet.sync import (
    DriftWarning,
    SyncError,
    align_network,
    coarse_offset,
    difference_histogram,
    drift_correct,
    fine_offset,
    fit_drift,
)
from bilocnet.units import TICK_S

PERIOD_TICKS = 1e-4 / TICK_S


def clocked_stream(clock: ClockModel, true_s: np.ndarray):
    """Records at known true times, as a station with ``clock`` would log them."""
    local = clock.to_local(true_s)
    ticks = np.floor(local / TICK_S).astype(np.int64)
    n = ticks.size
    return make_stream("A", np.zeros(n), np.zeros(n), ticks, np.zeros(n)), local


def square_ref(clock: ClockModel, duration: float) -> ReferenceSignal:
    net = field_network(clocks={"A": clock, "B": ClockModel(), "C": ClockModel()})
    return reference_signal(net, "A", "square_10kHz", duration, seed=0)


def brute_histogram(tx, ty, lo, hi, width):
    d = (np.asarray(ty)[None, :] - np.asarray(tx)[:, None]).ravel()
    d = d[(d >= lo) & (d <= hi)]
    nbins = (hi - lo) // width + 1
    return np.bincount((d - lo) // width, minlength=nbins)


class TestDrift:
    def test_zero_drift_is_identity(self):
        clock = ClockModel(offset=3e-6)
        ref = square_ref(clock, 2.0)
        true = np.sort(np.random.default_rng(0).uniform(0, 2.0, 5000))
        stream, _ = clocked_stream(clock, true)
        out = drift_correct(stream, ref)
        np.testing.assert_array_equal(out.stream["tick"], stream["tick"])
        assert out.n_excluded == 0
        assert abs(out.model.drift_correction) < 1e-12

    def test_one_ppm_over_long_run(self):
        clock = ClockModel(offset=2e-6, drift=1e-6)
        duration = 1500.0
        ref = square_ref(clock, duration)
        true = np.sort(np.random.default_rng(1).uniform(0, duration, 20_000))
        stream, local = clocked_stream(clock, true)
        model = fit_drift(ref)
        assert model.drift_correction == pytest.approx(1e-6, abs=1e-9)
        truth = local / (1 + clock.drift) / TICK_S
        mapped = model.apply(stream["tick"].astype(np.float64) + 0.5)
        assert np.max(np.abs(mapped - truth)) < 1.0
        out = drift_correct(stream, ref)
        assert np.max(np.abs(out.stream["tick"].astype(np.int64) - np.floor(truth))) <= 1

    def test_large_drift_warns_and_is_corrected(self):
        clock = ClockModel(drift=5e-4)
        ref = square_ref(clock, 1.0)
        true = np.sort(np.random.default_rng(2).uniform(0, 1.0, 2000))
        stream, local = clocked_stream(clock, true)
        with pytest.warns(DriftWarning):
            out = drift_correct(stream, ref)
        truth = np.floor(local / (1 + clock.drift) / TICK_S)
        assert np.max(np.abs(out.stream["tick"].astype(np.int64) - truth)) <= 2

    def test_reference_gap_excludes_records(self):
        clock = ClockModel()
        ref = square_ref(clock, 1.0)
        edges = ref.edges
        cut = (edges > edges[3000]) & (edges < edges[3020])
        gapped = ReferenceSignal(ref.kind, edges[~cut])
        inside = np.full(7, (edges[3005] + edges[3010]) // 2)
        outside = np.array([edges[100], edges[6000]])
        ticks = np.concatenate([outside[:1], inside, outside[1:]])
        stream = make_stream("A", np.zeros(ticks.size), np.zeros(ticks.size), ticks,
                             np.zeros(ticks.size))
        out = drift_correct(stream, gapped)
        assert len(out.model.gaps) == 1
        assert out.n_excluded == 7
        assert out.stream.size == 2

    def test_needs_two_edges(self):
        with pytest.raises(SyncError):
            fit_drift(ReferenceSignal("square_10kHz", [5]))


class TestCoarse:
    def test_identical_pulses(self):
        p = np.arange(10) * int(1 / TICK_S)
        assert coarse_offset(p, p).offset_ticks == 0

    def test_single_pulse_exact(self):
        shift = 1e-6 / TICK_S
        c = coarse_offset([1000.0], [1000.0 + shift])
        assert c.offset_ticks == pytest.approx(shift)
        assert c.n_pulses == 1

    def test_gps_noise_recovered(self):
        rng = np.random.default_rng(4)
        true = np.arange(25) * 1.0
        x = (true + rng.normal(0, 5e-9, 25)) / TICK_S
        y = (true + 13e-9 + rng.normal(0, 5e-9, 25)) / TICK_S
        c = coarse_offset(x, y, gps_sigma_s=5e-9)
        assert abs(c.offset_ticks * TICK_S - 13e-9) < 3e-9
        assert c.uncertainty_ticks == pytest.approx(5e-9 / TICK_S)

    def test_no_overlap(self):
        with pytest.raises(SyncError, match="overlapping"):
            coarse_offset([0.0, 1e6], [1e12, 2e12])
        with pytest.raises(SyncError):
            coarse_offset([], [1.0])


class TestHistogram:
    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 400), max_size=40), st.lists(st.integers(0, 400), max_size=40),
           st.integers(-50, 10), st.integers(0, 60), st.integers(1, 4))
    def test_matches_brute_force(self, x, y, lo, span, width):
        tx, ty = np.sort(np.asarray(x, np.int64)), np.sort(np.asarray(y, np.int64))
        hi = lo + span
        edges, counts = difference_histogram(tx, ty, lo, hi, width)
        np.testing.assert_array_equal(counts, brute_histogram(tx, ty, lo, hi, width))
        assert edges[0] == lo and np.all(np.diff(edges) == width)


def correlated_pair(n=4000, shift=1234, noise=400, seed=0):
    rng = np.random.default_rng(seed)
    base = np.sort(rng.integers(0, 10**9, n))
    x = np.sort(np.concatenate([base, rng.integers(0, 10**9, noise)]))
    y = np.sort(np.concatenate([base + shift, rng.integers(0, 10**9, noise)]))
    return x, y


class TestFine:
    def test_identical_streams(self):
        x, _ = correlated_pair()
        sol = fine_offset(x, x, coarse=3.0)
        assert sol.offset_ticks == 0
        assert sol.offset_fine == pytest.approx(0.0)
        assert not sol.low_confidence
        assert sol.residual == 0.5

    def test_recovers_shift(self):
        x, y = correlated_pair(shift=1234)
        sol = fine_offset(x, y, coarse=1234 + 60)
        assert sol.offset_ticks == 1234
        assert sol.peak_ratio > 100

    def test_darks_only_low_confidence(self):
        rng = np.random.default_rng(5)
        x = np.sort(rng.integers(0, 10**10, 2000))
        y = np.sort(rng.integers(0, 10**10, 2000))
        sol = fine_offset(x, y, coarse=0.0)
        assert sol.low_confidence
        assert sol.confidence == "low"
        assert sol.residual >= 0

    @given(st.integers(-200, 200))
    @settings(max_examples=25, deadline=None)
    def test_translation_equivariant(self, delta):
        x, y = correlated_pair(shift=700, seed=6)
        a = fine_offset(x, y, coarse=700)
        b = fine_offset(x, y + 10**4 + delta, coarse=700 + 10**4 + delta)
        assert b.offset_ticks - a.offset_ticks == 10**4 + delta
        assert b.offset_fine - a.offset_fine == pytest.approx(10**4 + delta)

    def test_chunking_invariance(self):
        x, y = correlated_pair(seed=7)
        whole = difference_histogram(x, y, -500, 2500)[1]
        cut = np.searchsorted(x, x[x.size // 2])
        parts = difference_histogram(x[:cut], y, -500, 2500)[1] + \
            difference_histogram(x[cut:], y, -500, 2500)[1]
        np.testing.assert_array_equal(whole, parts)

    def test_serialization(self):
        x, y = correlated_pair()
        sol = fine_offset(x, y, coarse=1234)
        doc = json.loads(sol.to_json())
        assert set(doc) == {"offset_ticks", "offset_fine_ticks", "drift_correction",
                            "residual_ticks", "peak_ratio", "confidence"}
        rows = sol.histogram_rows()
        assert len(rows) == sol.histogram[1].size
        assert sum(c for _, c in rows) == sol.histogram[1].sum()

    def test_empty_streams_low_confidence(self):
        sol = fine_offset(np.array([], np.int64), np.array([5], np.int64), coarse=0.0)
        assert sol.low_confidence
        assert np.isfinite(sol.residual)


def test_align_network_recovers_offsets():
    from bilocnet.event_sim import SettingsSchedule, simulate_run

    clocks = {"A": ClockModel(offset=17e-9, drift=3e-6, gps_coarse_sigma=5e-9),
              "B": ClockModel(offset=2e-9, drift=-2e-6, gps_coarse_sigma=5e-9),
              "C": ClockModel(offset=-9e-9, drift=1e-6, gps_coarse_sigma=5e-9)}
    net = field_network(clocks=clocks)
    duration = 30.0
    run = simulate_run(net, SettingsSchedule(), duration, seed=11)
    square = {s: reference_signal(net, s, "square_10kHz", duration, seed=11) for s in "ABC"}
    pulses = {s: reference_signal(net, s, "pulse_1Hz", duration, seed=11) for s in "ABC"}
    delays = {link: net.expected_delay(link) / TICK_S for link in ("AB", "BC")}
    with warnings.catch_warnings():
        warnings.simplefilter("error", DriftWarning)
        sync = align_network(run.streams, square, pulses, delays, gps_sigma_s=5e-9)
    assert sync.low_confidence == []
    for link, node in (("AB", "A"), ("BC", "C")):
        ob, on = clocks["B"], clocks[node]
        truth = (net.expected_delay(link) + ob.offset / (1 + ob.drift)
                 - on.offset / (1 + on.drift)) / TICK_S
        assert abs(sync.fine[link].offset_fine - truth) <= 1.0, link
        assert sync.drift[node].drift_correction == pytest.approx(on.drift, abs=1e-8)
