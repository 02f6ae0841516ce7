"""JSON experiment configuration with explicit units in every key name.

Durations and delays carry their unit as a suffix (``_s``, ``_ns``, ``_ps``), rates
``_hz``, fractions ``_pct``, plate angles ``_deg``, drifts ``_ppm``. Validation errors
report the dotted field path and, when the source text is available, its line.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .event_sim import (
    ChannelModel,
    ClockModel,
    DetectorModel,
    NetworkConfig,
    SettingsSchedule,
    SourceModel,
    free_space_transmission,
)
from .quantum_core import (
    NAMED_OBSERVABLES,
    SETTINGS,
    DichotomicObservable,
    MeasurementPlan,
    TwoQubitState,
    hwp_to_observable,
    singlet_state,
    visibility_for_chsh,
    werner_state,
)
from .streams import NODES, STATIONS
from .units import FIBER_INDEX, SPEED_OF_LIGHT

CONVENTIONS = ("peripheral-sum", "literal")
PLAN_KEYS = ("a_settings", "b_arm_A_settings", "b_arm_C_settings", "c_settings")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str, line: int | None = None):
        self.path, self.line, self.message = path, line, message
        where = f"{path or '<root>'}" + (f" (line {line})" if line else "")
        super().__init__(f"{where}: {message}")


class _Node:
    """Dict view that remembers its dotted path, for error messages."""

    def __init__(self, data: Any, path: str, locate):
        self.data, self.path, self._locate = data, path, locate
        if not isinstance(data, dict):
            self.fail("expected an object")
        self._used: set[str] = set()

    def fail(self, msg: str, key: str | None = None):
        path = f"{self.path}.{key}" if key and self.path else (key or self.path)
        raise ConfigError(path, msg, self._locate(path))

    def child_path(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.data

    def get(self, key: str, default: Any = ...) -> Any:
        self._used.add(key)
        if key not in self.data:
            if default is ...:
                self.fail("required field missing", key)
            return default
        return self.data[key]

    def sub(self, key: str, default: Any = ...) -> _Node:
        val = self.get(key, default)
        return _Node(val, self.child_path(key), self._locate)

    def num(self, key: str, default: Any = ..., lo: float = -np.inf, hi: float = np.inf,
            lo_open: bool = False) -> float:
        val = self.get(key, default)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.fail(f"expected a number, got {val!r}", key)
        if not np.isfinite(val) or val < lo or val > hi or (lo_open and val == lo):
            bracket = "(" if lo_open else "["
            self.fail(f"value {val} outside {bracket}{lo}, {hi}]", key)
        return float(val)

    def integer(self, key: str, default: Any = ..., lo: int | None = None) -> int:
        val = self.get(key, default)
        if isinstance(val, bool) or not isinstance(val, int):
            self.fail(f"expected an integer, got {val!r}", key)
        if lo is not None and val < lo:
            self.fail(f"must be >= {lo}", key)
        return int(val)

    def choice(self, key: str, options, default: Any = ...) -> str:
        val = self.get(key, default)
        if val not in options:
            self.fail(f"expected one of {list(options)}, got {val!r}", key)
        return val

    def done(self):
        extra = sorted(set(self.data) - self._used)
        if extra:
            self.fail(f"unknown field(s) {extra}", extra[0])


def _line_locator(text: str | None):
    """Map a dotted field path to the line of its last key in ``text`` (best effort)."""
    if not text:
        return lambda path: None
    lines = text.splitlines()

    def locate(path: str) -> int | None:
        start = 0
        found = None
        for part in path.split("."):
            if part.isdigit():
                continue
            pat = re.compile(r'"' + re.escape(part) + r'"\s*:')
            for i in range(start, len(lines)):
                if pat.search(lines[i]):
                    found = start = i
                    break
            else:
                return found + 1 if found is not None else None
        return found + 1 if found is not None else None

    return locate


# -- specification-level records (plain values, so equality and round trips are exact) --

@dataclass(frozen=True)
class StateSpec:
    """Werner state given by visibility or by its CHSH value; ``singlet`` means v = 1."""

    werner_visibility: float | None = None
    chsh: float | None = None

    def visibility(self) -> float:
        if self.chsh is not None:
            return visibility_for_chsh(self.chsh)
        return 1.0 if self.werner_visibility is None else self.werner_visibility

    def build(self) -> TwoQubitState:
        v = self.visibility()
        return singlet_state() if v == 1.0 else werner_state(v)

    def to_dict(self) -> dict:
        if self.chsh is not None:
            return {"chsh": self.chsh}
        if self.werner_visibility is None:
            return {"singlet": True}
        return {"werner_visibility": self.werner_visibility}


@dataclass(frozen=True)
class SourceSpec:
    kind: str
    pair_rate_hz: float
    state: StateSpec
    rep_rate_hz: float | None = None
    label: str = ""

    def build(self) -> SourceModel:
        return SourceModel(self.kind, self.pair_rate_hz, self.state.build(), self.rep_rate_hz,
                           self.label)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "pair_rate_hz": self.pair_rate_hz, "state": self.state.to_dict(),
             "label": self.label}
        if self.rep_rate_hz is not None:
            d["rep_rate_hz"] = self.rep_rate_hz
        return d


@dataclass(frozen=True)
class ChannelSpec:
    transmission_pct: float
    delay_ns: float
    label: str = ""

    def build(self) -> ChannelModel:
        return ChannelModel(self.transmission_pct / 100, self.delay_ns * 1e-9, self.label)


@dataclass(frozen=True)
class DetectorSpec:
    efficiency_pct: float = 60.0
    dark_rate_hz: float = 200.0
    jitter_sigma_ps: float = 100.0
    tick_ps: float = 81.0

    def build(self) -> DetectorModel:
        return DetectorModel(self.efficiency_pct / 100, self.dark_rate_hz,
                             self.jitter_sigma_ps * 1e-12, self.tick_ps * 1e-12)


@dataclass(frozen=True)
class ClockSpec:
    offset_ns: float = 0.0
    drift_ppm: float = 0.0
    gps_sigma_ns: float = 0.0

    def build(self) -> ClockModel:
        return ClockModel(self.offset_ns * 1e-9, self.drift_ppm * 1e-6, self.gps_sigma_ns * 1e-9)


# a measurement entry is an observable name or a half-wave-plate angle in degrees
Setting = str | float


def _observable(entry: Setting) -> DichotomicObservable:
    if isinstance(entry, str):
        return NAMED_OBSERVABLES[entry]
    return hwp_to_observable(entry)


@dataclass(frozen=True)
class PlanSpec:
    a_settings: tuple[Setting, Setting] = ("diag_plus", "diag_minus")
    b_arm_A_settings: tuple[Setting, Setting] = ("sigma_z", "sigma_x")
    b_arm_C_settings: tuple[Setting, Setting] = ("sigma_z", "sigma_x")
    c_settings: tuple[Setting, Setting] = ("diag_plus", "diag_minus")

    def build(self) -> MeasurementPlan:
        return MeasurementPlan(*(tuple(_observable(e) for e in getattr(self, k))
                                 for k in PLAN_KEYS))

    def to_dict(self) -> dict:
        return {k: [e if isinstance(e, str) else {"hwp_deg": e} for e in getattr(self, k)]
                for k in PLAN_KEYS}


@dataclass(frozen=True)
class AnalysisSpec:
    twofold_window_ns: float = 1.0
    fourfold_windows_ns: tuple[float, ...] = tuple(
        float(w) for w in np.round(np.geomspace(283.5, 51_435.0, 12), 3))
    n_blocks: int = 25
    convention: str = "peripheral-sum"


@dataclass(frozen=True)
class ExperimentConfig:
    sources: dict[str, SourceSpec]
    channels: dict[str, ChannelSpec]
    detectors: dict[str, DetectorSpec]
    clocks: dict[str, ClockSpec]
    plan: PlanSpec = field(default_factory=PlanSpec)
    block_duration_s: float = 1.0
    duration_s: float = 60.0
    seed: int = 0
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    reference_period_us: float = 100.0
    pulse_period_s: float = 1.0

    def network(self) -> NetworkConfig:
        return NetworkConfig(
            rho1=self.sources["rho1"].build(),
            rho2=self.sources["rho2"].build(),
            channels={n: c.build() for n, c in self.channels.items()},
            detectors={n: d.build() for n, d in self.detectors.items()},
            clocks={s: c.build() for s, c in self.clocks.items()},
            plan=self.plan.build(),
            reference_period=self.reference_period_us * 1e-6,
            pulse_period=self.pulse_period_s,
        )

    def schedule(self) -> SettingsSchedule:
        return SettingsSchedule(block_duration=self.block_duration_s, order=SETTINGS)

    def visibilities(self) -> tuple[float, float]:
        return self.sources["rho1"].state.visibility(), self.sources["rho2"].state.visibility()

    def to_dict(self) -> dict:
        return {
            "sources": {k: s.to_dict() for k, s in self.sources.items()},
            "channels": {k: asdict(c) for k, c in self.channels.items()},
            "detectors": {k: asdict(d) for k, d in self.detectors.items()},
            "clocks": {k: asdict(c) for k, c in self.clocks.items()},
            "plan": self.plan.to_dict(),
            "schedule": {"block_duration_s": self.block_duration_s},
            "references": {"square_period_us": self.reference_period_us,
                           "pulse_period_s": self.pulse_period_s},
            "run": {"duration_s": self.duration_s, "seed": self.seed},
            "analysis": {**asdict(self.analysis),
                         "fourfold_windows_ns": list(self.analysis.fourfold_windows_ns)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict, text: str | None = None) -> ExperimentConfig:
        return _parse(_Node(data, "", _line_locator(text)))

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<json>", exc.msg, exc.lineno) from None
        return cls.from_dict(data, text)


def load_config(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.from_json(Path(path).read_text())


# -- parsing --

def _parse_state(n: _Node) -> StateSpec:
    keys = [k for k in ("singlet", "werner_visibility", "chsh") if n.has(k)]
    if len(keys) != 1:
        n.fail("give exactly one of singlet, werner_visibility, chsh")
    if keys[0] == "singlet":
        if n.get("singlet") is not True:
            n.fail("singlet must be true", "singlet")
        out = StateSpec()
    elif keys[0] == "werner_visibility":
        out = StateSpec(werner_visibility=n.num("werner_visibility", lo=0.0, hi=1.0))
    else:
        out = StateSpec(chsh=n.num("chsh", lo=0.0, hi=2 * np.sqrt(2)))
    n.done()
    return out


def _parse_source(n: _Node) -> SourceSpec:
    kind = n.choice("kind", ("pulsed", "cw"))
    rate = n.num("pair_rate_hz", lo=0.0)
    if kind == "pulsed" and not n.has("rep_rate_hz"):
        n.fail("required for pulsed sources", "rep_rate_hz")
    rep = n.num("rep_rate_hz", lo=0.0, lo_open=True) if n.has("rep_rate_hz") else None
    if rep is not None and rate > rep:
        n.fail("pair rate exceeds repetition rate", "pair_rate_hz")
    label = n.get("label", "")
    state = _parse_state(n.sub("state"))
    n.done()
    return SourceSpec(kind, rate, state, rep, str(label))


def _parse_setting(value: Any, n: _Node, key: str) -> Setting:
    if isinstance(value, str):
        if value not in NAMED_OBSERVABLES:
            n.fail(f"unknown observable {value!r}; known: {sorted(NAMED_OBSERVABLES)}", key)
        return value
    if isinstance(value, dict) and set(value) == {"hwp_deg"} and \
            isinstance(value["hwp_deg"], (int, float)) and not isinstance(value["hwp_deg"], bool):
        return float(value["hwp_deg"])
    n.fail("each setting is an observable name or {\"hwp_deg\": angle}", key)


def _parse_plan(n: _Node) -> PlanSpec:
    out = {}
    for key in PLAN_KEYS:
        val = n.get(key, getattr(PlanSpec(), key))
        if not isinstance(val, (list, tuple)) or len(val) != 2:
            n.fail("expected a list of two settings", key)
        out[key] = tuple(_parse_setting(v, n, key) for v in val)
    n.done()
    return PlanSpec(**out)


def _parse_table(n: _Node, names, parse, default=None) -> dict:
    """Per-name entries; a ``default`` entry fills names not listed."""
    base = n.sub("default", None) if n.has("default") else None
    out = {}
    for name in names:
        if n.has(name):
            out[name] = parse(n.sub(name))
        elif base is not None:
            out[name] = parse(_Node(base.data, base.path, base._locate))
        elif default is not None:
            out[name] = default
        else:
            n.fail("required field missing", name)
    n.done()
    return out


def _parse_channel(n: _Node) -> ChannelSpec:
    out = ChannelSpec(n.num("transmission_pct", lo=0.0, hi=100.0), n.num("delay_ns", lo=0.0),
                      str(n.get("label", "")))
    n.done()
    return out


def _parse_detector(n: _Node) -> DetectorSpec:
    d = DetectorSpec()
    out = DetectorSpec(n.num("efficiency_pct", d.efficiency_pct, lo=0.0, hi=100.0),
                       n.num("dark_rate_hz", d.dark_rate_hz, lo=0.0),
                       n.num("jitter_sigma_ps", d.jitter_sigma_ps, lo=0.0),
                       n.num("tick_ps", d.tick_ps, lo=0.0, lo_open=True))
    n.done()
    return out


def _parse_clock(n: _Node) -> ClockSpec:
    out = ClockSpec(n.num("offset_ns", 0.0), n.num("drift_ppm", 0.0, lo=-999.0, hi=999.0),
                    n.num("gps_sigma_ns", 0.0, lo=0.0))
    n.done()
    return out


def _parse_analysis(n: _Node) -> AnalysisSpec:
    d = AnalysisSpec()
    windows = n.get("fourfold_windows_ns", list(d.fourfold_windows_ns))
    if (not isinstance(windows, list) or not windows or
            not all(isinstance(w, (int, float)) and not isinstance(w, bool) and w > 0
                    for w in windows)):
        n.fail("expected a non-empty list of positive numbers", "fourfold_windows_ns")
    if any(b < a for a, b in zip(windows, windows[1:])):
        n.fail("windows must be sorted ascending", "fourfold_windows_ns")
    out = AnalysisSpec(n.num("twofold_window_ns", d.twofold_window_ns, lo=0.0, lo_open=True),
                       tuple(float(w) for w in windows),
                       n.integer("n_blocks", d.n_blocks, lo=2),
                       n.choice("convention", CONVENTIONS, d.convention))
    n.done()
    return out


def _parse(root: _Node) -> ExperimentConfig:
    src = root.sub("sources")
    sources = {k: _parse_source(src.sub(k)) for k in ("rho1", "rho2")}
    src.done()
    channels = _parse_table(root.sub("channels"), NODES, _parse_channel)
    detectors = _parse_table(root.sub("detectors", {}), NODES, _parse_detector, DetectorSpec())
    clocks = _parse_table(root.sub("clocks", {}), STATIONS, _parse_clock, ClockSpec())
    plan = _parse_plan(root.sub("plan", {}))
    sched = root.sub("schedule", {})
    block = sched.num("block_duration_s", 1.0, lo=0.0, lo_open=True)
    sched.done()
    refs = root.sub("references", {})
    period_us = refs.num("square_period_us", 100.0, lo=0.0, lo_open=True)
    pulse_s = refs.num("pulse_period_s", 1.0, lo=0.0, lo_open=True)
    refs.done()
    run = root.sub("run", {})
    duration = run.num("duration_s", 60.0, lo=0.0)
    seed = run.integer("seed", 0, lo=0)
    run.done()
    analysis = _parse_analysis(root.sub("analysis", {}))
    root.done()
    cfg = ExperimentConfig(sources, channels, detectors, clocks, plan, block, duration, seed,
                           analysis, period_us, pulse_s)
    try:
        cfg.network()
    except ValueError as exc:
        raise ConfigError("", str(exc)) from None
    return cfg


# -- stock configurations --

def field_config(v1: float = 0.8783, v2: float = 0.9543, duration_s: float = 1500.0,
                 seed: int = 0) -> ExperimentConfig:
    """Configuration matching the field experiment (1500 s by default)."""
    free_space_ns = 270.0 / SPEED_OF_LIGHT * 1e9
    fiber_ns = 25.0 * FIBER_INDEX / SPEED_OF_LIGHT * 1e9
    return ExperimentConfig(
        sources={"rho1": SourceSpec("pulsed", 13_700.0, StateSpec(werner_visibility=v1),
                                    320e6, "QD"),
                 "rho2": SourceSpec("cw", 3_000.0, StateSpec(werner_visibility=v2), None,
                                    "SPDC")},
        channels={"A": ChannelSpec(100.0, 0.0, "local"),
                  "B_armA": ChannelSpec(free_space_transmission() * 100, free_space_ns,
                                        "free-space 270 m"),
                  "B_armC": ChannelSpec(92.0, fiber_ns, "fiber 25 m"),
                  "C": ChannelSpec(100.0, 0.0, "local")},
        detectors={n: DetectorSpec() for n in NODES},
        clocks={"A": ClockSpec(13.0, 0.2, 5.0), "B": ClockSpec(0.0, -0.1),
                "C": ClockSpec(0.0, -0.1)},
        duration_s=duration_s,
        seed=seed,
    )


def ideal_config(duration_s: float = 60.0, seed: int = 0) -> ExperimentConfig:
    """Two singlet sources, lossless paths, noiseless detectors."""
    base = field_config(duration_s=duration_s, seed=seed)
    return ExperimentConfig(
        sources={k: SourceSpec(s.kind, s.pair_rate_hz, StateSpec(), s.rep_rate_hz, s.label)
                 for k, s in base.sources.items()},
        channels={n: ChannelSpec(100.0, c.delay_ns, c.label) for n, c in base.channels.items()},
        detectors={n: DetectorSpec(100.0, 0.0, 0.0) for n in NODES},
        clocks={s: ClockSpec() for s in STATIONS},
        duration_s=duration_s,
        seed=seed,
    )
