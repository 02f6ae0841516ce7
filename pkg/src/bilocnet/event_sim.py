"""Monte Carlo of the three-node network: pair sources, lossy channels, detectors and clocks.

Source rho1 feeds node A and the central arm B_armA; source rho2 feeds B_armC and node C.
Each station (A, B, C) runs its own TDC clock; both central arms share station B's clock.
All randomness comes from labelled Philox substreams of a single 64-bit seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .quantum_core import (
    SETTINGS,
    ArmBehavior,
    Behavior,
    MeasurementPlan,
    TwoQubitState,
    pair_distribution,
    werner_state,
)
from .streams import (
    NODES,
    STATION,
    ReferenceSignal,
    empty_stream,
    make_stream,
)
from .units import FIBER_INDEX, TICK_S, light_time

FREE_SPACE_STAGES = {
    "sending table": 0.85,
    "air propagation": 0.85,
    "receiving table": 0.80,
    "SMF coupling": 0.50,
}
FIBER_TRANSMISSION = 0.92
FREE_SPACE_DISTANCE_M = 270.0
FIBER_LENGTH_M = 25.0


@dataclass(frozen=True)
class SourceModel:
    kind: Literal["pulsed", "cw"]
    pair_rate: float
    state: TwoQubitState
    rep_rate: float | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("pulsed", "cw"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.pair_rate < 0:
            raise ValueError("pair_rate must be non-negative")
        if self.kind == "pulsed":
            if not self.rep_rate or self.rep_rate <= 0:
                raise ValueError("pulsed sources need a positive rep_rate")
            if self.pair_rate / self.rep_rate > 1:
                raise ValueError(f"pair-per-pulse probability {self.pair_rate / self.rep_rate:.3g} "
                                 "exceeds 1")


@dataclass(frozen=True)
class ChannelModel:
    transmission: float
    delay: float = 0.0
    label: str = ""

    def __post_init__(self):
        if not 0 < self.transmission <= 1:
            raise ValueError(f"channel transmission must lie in (0, 1], got {self.transmission}")
        if self.delay < 0:
            raise ValueError("channel delay must be non-negative")


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 0.6
    dark_rate: float = 200.0
    jitter_sigma: float = 100e-12
    tick: float = TICK_S

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError("detector efficiency must lie in [0, 1]")
        if self.dark_rate < 0 or self.jitter_sigma < 0:
            raise ValueError("dark_rate and jitter_sigma must be non-negative")
        if self.tick <= 0:
            raise ValueError("tick must be positive")


@dataclass(frozen=True)
class ClockModel:
    """Local time = (1 + drift) * true time + offset (seconds)."""

    offset: float = 0.0
    drift: float = 0.0
    gps_coarse_sigma: float = 0.0

    def __post_init__(self):
        if abs(self.drift) >= 1e-3:
            raise ValueError(f"|drift| must be < 1e-3, got {self.drift}")
        if self.gps_coarse_sigma < 0:
            raise ValueError("gps_coarse_sigma must be non-negative")

    def to_local(self, t):
        return (1.0 + self.drift) * np.asarray(t, dtype=np.float64) + self.offset

    def to_true(self, t_local):
        return (np.asarray(t_local, dtype=np.float64) - self.offset) / (1.0 + self.drift)


@dataclass(frozen=True)
class SettingsSchedule:
    block_duration: float = 1.0
    order: tuple[tuple[int, int, int], ...] = SETTINGS

    def __post_init__(self):
        order = tuple(tuple(int(v) for v in t) for t in self.order)
        if not order:
            raise ValueError("settings schedule is empty")
        if any(len(t) != 3 or not set(t) <= {0, 1} for t in order):
            raise ValueError("schedule entries must be (xA, xB, xC) bit triples")
        if set(order) != set(SETTINGS):
            raise ValueError("schedule must cover all 8 setting triples per cycle")
        if self.block_duration <= 0:
            raise ValueError("block_duration must be positive")
        object.__setattr__(self, "order", order)

    def block_of(self, t) -> np.ndarray:
        return np.floor(np.asarray(t) / self.block_duration).astype(np.int64)

    def settings_of(self, block) -> np.ndarray:
        """(n, 3) array of (xA, xB, xC) for schedule block indices."""
        table = np.array(self.order, dtype=np.uint8)
        return table[np.asarray(block) % len(self.order)]


@dataclass(frozen=True)
class NetworkConfig:
    rho1: SourceModel
    rho2: SourceModel
    channels: dict[str, ChannelModel]
    detectors: dict[str, DetectorModel]
    clocks: dict[str, ClockModel]
    plan: MeasurementPlan = field(default_factory=MeasurementPlan.optimal)
    reference_period: float = 1e-4
    pulse_period: float = 1.0

    def __post_init__(self):
        for name, table in (("channels", self.channels), ("detectors", self.detectors)):
            missing = set(NODES) - set(table)
            if missing:
                raise ValueError(f"{name} missing entries for nodes {sorted(missing)}")
        missing = set(STATION.values()) - set(self.clocks)
        if missing:
            raise ValueError(f"clocks missing entries for stations {sorted(missing)}")

    def path_efficiency(self, node: str) -> float:
        return self.channels[node].transmission * self.detectors[node].efficiency

    def expected_delay(self, link: Literal["AB", "BC"]) -> float:
        """Nominal central-minus-peripheral propagation delay of a link (seconds)."""
        if link == "AB":
            return self.channels["B_armA"].delay - self.channels["A"].delay
        return self.channels["B_armC"].delay - self.channels["C"].delay


def free_space_transmission() -> float:
    return float(np.prod(list(FREE_SPACE_STAGES.values())))


def field_network(v1: float = 0.8783, v2: float = 0.9543, *, efficiency: float = 0.6,
                  dark_rate: float = 200.0, jitter: float = 100e-12,
                  clocks: dict[str, ClockModel] | None = None) -> NetworkConfig:
    """Network at the field experiment's rates and link budget, with Werner sources."""
    det = DetectorModel(efficiency=efficiency, dark_rate=dark_rate, jitter_sigma=jitter)
    if clocks is None:
        b_clock = ClockModel(offset=0.0, drift=-1e-7)
        clocks = {"A": ClockModel(offset=13e-9, drift=2e-7, gps_coarse_sigma=5e-9),
                  "B": b_clock, "C": b_clock}
    return NetworkConfig(
        rho1=SourceModel("pulsed", 13.7e3, werner_state(v1), rep_rate=320e6, label="QD"),
        rho2=SourceModel("cw", 3e3, werner_state(v2), label="SPDC"),
        channels={
            "A": ChannelModel(1.0, 0.0, "local"),
            "B_armA": ChannelModel(free_space_transmission(), light_time(FREE_SPACE_DISTANCE_M),
                                   "free-space 270 m"),
            "B_armC": ChannelModel(FIBER_TRANSMISSION, light_time(FIBER_LENGTH_M, FIBER_INDEX),
                                   "fiber 25 m"),
            "C": ChannelModel(1.0, 0.0, "local"),
        },
        detectors={n: det for n in NODES},
        clocks=dict(clocks),
    )


def substream(seed: int, label: str) -> np.random.Generator:
    """Counter-based generator keyed by (seed, label); independent of call order."""
    key = int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little")
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


def _emission_times(src: SourceModel, duration: float, rng: np.random.Generator) -> np.ndarray:
    if src.pair_rate == 0 or duration <= 0:
        return np.zeros(0)
    if src.kind == "cw":
        n = rng.poisson(src.pair_rate * duration)
        return np.sort(rng.uniform(0.0, duration, n))
    # Bernoulli trial per pulse, drawn as geometric gaps between successful pulses
    p = src.pair_rate / src.rep_rate
    n_pulses = int(np.floor(duration * src.rep_rate))
    if p >= 1:
        return np.arange(n_pulses) / src.rep_rate
    mean = n_pulses * p
    chunks, last = [], -1
    while last < n_pulses:
        size = int(mean + 6 * np.sqrt(mean) + 64)
        idx = last + np.cumsum(rng.geometric(p, size))
        chunks.append(idx)
        last = int(idx[-1])
    idx = np.concatenate(chunks)
    return idx[idx < n_pulses] / src.rep_rate


def _sample_pairs(state: TwoQubitState, left, right, x_left: np.ndarray, x_right: np.ndarray,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Outcome bits for each pair from the Born rule of its setting pair."""
    cdf = np.empty((2, 2, 4))
    for x in (0, 1):
        for y in (0, 1):
            cdf[x, y] = np.cumsum(pair_distribution(state, left[x], right[y]).ravel())
    cdf[..., -1] = 1.0
    u = rng.random(x_left.size)
    rows = cdf[x_left, x_right]
    k = (u[:, None] >= rows).sum(axis=1)
    return (k >> 1).astype(np.uint8), (k & 1).astype(np.uint8)


@dataclass
class SimulationRun:
    """Output of one simulated acquisition: per-node record streams plus clock references."""

    streams: dict[str, np.ndarray]
    config: NetworkConfig
    schedule: SettingsSchedule
    duration: float
    seed: int

    def reference(self, station: str, kind: Literal["square_10kHz", "pulse_1Hz"]) -> ReferenceSignal:
        return reference_signal(self.config, station, kind, self.duration, self.seed)


def reference_signal(config: NetworkConfig, station: str,
                     kind: Literal["square_10kHz", "pulse_1Hz"], duration: float,
                     seed: int) -> ReferenceSignal:
    """GPS-disciplined reference edges as recorded by a station's TDC."""
    clock = config.clocks[station]
    tick = config.detectors[next(n for n in NODES if STATION[n] == station)].tick
    if kind == "square_10kHz":
        true = np.arange(int(np.ceil(duration / config.reference_period))) * config.reference_period
    elif kind == "pulse_1Hz":
        true = np.arange(int(np.ceil(duration / config.pulse_period))) * config.pulse_period
        rng = substream(seed, f"station:{station}:gps")
        true = true + rng.normal(0.0, clock.gps_coarse_sigma, true.size)
    else:
        raise ValueError(f"unknown reference kind {kind!r}")
    local = clock.to_local(true)
    ticks = np.floor(local[local >= 0] / tick).astype(np.int64)
    return ReferenceSignal(kind, ticks)


def simulate_run(config: NetworkConfig, schedule: SettingsSchedule, duration: float,
                 seed: int) -> SimulationRun:
    if duration <= 0:
        raise ValueError("duration must be positive")
    plan = config.plan
    parts: dict[str, list[tuple]] = {n: [] for n in NODES}

    links = (
        ("rho1", config.rho1, ("A", "B_armA"), (plan.a_settings, plan.b_arm_A_settings), (0, 1)),
        ("rho2", config.rho2, ("B_armC", "C"), (plan.b_arm_C_settings, plan.c_settings), (1, 2)),
    )
    for name, src, nodes, observables, slots in links:
        t_emit = _emission_times(src, duration, substream(seed, f"source:{name}:emission"))
        block = schedule.block_of(t_emit)
        triples = schedule.settings_of(block)
        x_left, x_right = triples[:, slots[0]], triples[:, slots[1]]
        out_left, out_right = _sample_pairs(src.state, observables[0], observables[1],
                                            x_left, x_right,
                                            substream(seed, f"source:{name}:outcomes"))
        for node, x, out in ((nodes[0], x_left, out_left), (nodes[1], x_right, out_right)):
            rng = substream(seed, f"source:{name}:photon:{node}")
            keep = rng.random(t_emit.size) < config.path_efficiency(node)
            det = config.detectors[node]
            t = t_emit[keep] + config.channels[node].delay
            t = t + rng.normal(0.0, det.jitter_sigma, t.size)
            parts[node].append((t, out[keep], x[keep], block[keep]))

    slot_of = {"A": 0, "B_armA": 1, "B_armC": 1, "C": 2}
    for node in NODES:
        det = config.detectors[node]
        for d, dname in enumerate(("plus", "minus")):
            rng = substream(seed, f"node:{node}:dark:{dname}")
            n = rng.poisson(det.dark_rate * duration)
            t = rng.uniform(0.0, duration, n)
            block = schedule.block_of(t)
            x = schedule.settings_of(block)[:, slot_of[node]]
            parts[node].append((t, np.full(n, d, dtype=np.uint8), x, block))

    streams = {}
    for node in NODES:
        t, det_bits, setting, block = (np.concatenate(c) for c in zip(*parts[node]))
        clock = config.clocks[STATION[node]]
        local = clock.to_local(t)
        ok = local >= 0
        ticks = np.floor(local[ok] / config.detectors[node].tick).astype(np.int64)
        streams[node] = make_stream(node, det_bits[ok], setting[ok], ticks,
                                    block[ok].astype(np.uint32))
    return SimulationRun(streams, config, schedule, duration, int(seed))


def empty_run(config: NetworkConfig, schedule: SettingsSchedule, seed: int) -> SimulationRun:
    return SimulationRun({n: empty_stream() for n in NODES}, config, schedule, 0.0, int(seed))


def ideal_streams(behavior: Behavior | ArmBehavior, n_events: int, seed: int,
                  spacing_ticks: int = 12_346) -> dict[str, np.ndarray]:
    """Noise-free four-fold fixture: all four clicks of event i share one tick.

    Event i uses setting triple i mod 8 and schedule block i // 8. Given a parity-only
    Behavior, the central arm bits are split as bA = 0, bC = b.
    """
    if n_events <= 0:
        raise ValueError("n_events must be positive")
    rng = substream(seed, "ideal")
    i = np.arange(n_events)
    settings = np.array(SETTINGS, dtype=np.uint8)[i % 8]
    block = (i // 8).astype(np.uint32)
    if isinstance(behavior, ArmBehavior):
        flat = behavior.table.reshape(8, 16)
    else:
        flat = np.zeros((8, 16))
        t = behavior.table.reshape(8, 2, 2, 2)
        for a, b, c in np.ndindex(2, 2, 2):
            flat[:, a * 8 + b * 2 + c] = t[:, a, b, c]
    cdf = np.cumsum(flat, axis=1)
    cdf[:, -1] = 1.0
    k = (rng.random(n_events)[:, None] >= cdf[i % 8]).sum(axis=1)
    bits = {"A": (k >> 3) & 1, "B_armA": (k >> 2) & 1, "B_armC": (k >> 1) & 1, "C": k & 1}
    slot = {"A": 0, "B_armA": 1, "B_armC": 1, "C": 2}
    ticks = (i + 1) * np.int64(spacing_ticks)
    return {node: make_stream(node, bits[node].astype(np.uint8), settings[:, slot[node]], ticks,
                              block)
            for node in NODES}
