"""Glue between simulation, synchronization and coincidence analysis.

Also defines the on-disk dataset layout shared by the ``simulate`` and ``analyze``
subcommands::

    D/config.json              experiment configuration (canonical JSON)
    D/manifest.json            seed, config hash, per-file sha256, record counts
    D/streams/<node>.bin       packed detection records, one file per node
    D/refs/<station>_<kind>.bin  reference-signal edges (little-endian int64 ticks)
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coincidence import AnalysisResult, analyze_streams
from .config import ExperimentConfig
from .event_sim import SimulationRun, empty_run, simulate_run
from .quantum_core import biloc_functional, born_behavior, link_chsh
from .streams import (
    NODES,
    RECORD_DTYPE,
    STATIONS,
    ReferenceSignal,
    file_sha256,
    read_reference,
    read_stream,
    write_reference,
    write_stream,
)
from .sync import NetworkSync, align_network
from .units import TICK_S

REF_KINDS = ("square_10kHz", "pulse_1Hz")


def analytic_report(cfg: ExperimentConfig) -> dict:
    """Born-rule I1, I2, B in both conventions, plus per-link CHSH."""
    net = cfg.network()
    beh = born_behavior(net.rho1.state, net.rho2.state, net.plan)
    out = {}
    for conv in ("peripheral-sum", "literal"):
        r = biloc_functional(beh, conv)
        out[conv] = {"I1": r.I1, "I2": r.I2, "B": r.B}
    out["S_AB"] = link_chsh(net.rho1.state, net.plan, "AB")
    out["S_BC"] = link_chsh(net.rho2.state, net.plan, "BC")
    return out


def simulate(cfg: ExperimentConfig, seed: int | None = None,
             duration_s: float | None = None) -> SimulationRun:
    seed = cfg.seed if seed is None else seed
    duration = cfg.duration_s if duration_s is None else duration_s
    if duration == 0:
        return empty_run(cfg.network(), cfg.schedule(), seed)
    return simulate_run(cfg.network(), cfg.schedule(), duration, seed)


def run_references(run: SimulationRun) -> dict[str, dict[str, ReferenceSignal]]:
    if run.duration == 0:
        return {k: {s: ReferenceSignal(k, np.zeros(0, np.int64)) for s in STATIONS}
                for k in REF_KINDS}
    return {k: {s: run.reference(s, k) for s in STATIONS} for k in REF_KINDS}


def expected_delays_ticks(cfg: ExperimentConfig) -> dict[str, float]:
    net = cfg.network()
    return {link: net.expected_delay(link) / TICK_S for link in ("AB", "BC")}


def synchronize(cfg: ExperimentConfig, streams: dict[str, np.ndarray],
                refs: dict[str, dict[str, ReferenceSignal]]) -> NetworkSync:
    gps = max(c.gps_sigma_ns for c in cfg.clocks.values()) * 1e-9
    return align_network(streams, refs["square_10kHz"], refs["pulse_1Hz"],
                         expected_delays_ticks(cfg), period_s=cfg.reference_period_us * 1e-6,
                         gps_sigma_s=gps)


def analyze(cfg: ExperimentConfig, aligned: dict[str, np.ndarray], *,
            windows_ns=None, n_blocks: int | None = None,
            convention: str | None = None) -> AnalysisResult:
    a = cfg.analysis
    windows = np.asarray(a.fourfold_windows_ns if windows_ns is None else windows_ns) * 1e-9
    return analyze_streams(aligned, windows / TICK_S,
                           twofold_window=a.twofold_window_ns * 1e-9 / TICK_S,
                           n_blocks=a.n_blocks if n_blocks is None else n_blocks,
                           convention=a.convention if convention is None else convention)


# -- dataset directories --

@dataclass
class Dataset:
    config: ExperimentConfig
    streams: dict[str, np.ndarray]
    refs: dict[str, dict[str, ReferenceSignal]]
    manifest: dict


def write_dataset(out: Path, cfg: ExperimentConfig, run: SimulationRun) -> dict:
    out = Path(out)
    (out / "streams").mkdir(parents=True, exist_ok=True)
    (out / "refs").mkdir(exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    files = {}
    for node in NODES:
        rel = f"streams/{node}.bin"
        write_stream(out / rel, run.streams[node])
        files[rel] = {"sha256": file_sha256(out / rel), "records": int(run.streams[node].size)}
    for kind, by_station in run_references(run).items():
        for station, ref in by_station.items():
            rel = f"refs/{station}_{kind}.bin"
            write_reference(out / rel, ref)
            files[rel] = {"sha256": file_sha256(out / rel), "records": int(ref.edges.size)}
    manifest = {
        "config_sha256": cfg.digest(),
        "seed": int(run.seed),
        "duration_s": float(run.duration),
        "record_dtype": [[name, RECORD_DTYPE[name].str] for name in RECORD_DTYPE.names],
        "tick_ps": TICK_S * 1e12,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_dataset(root: Path, verify: bool = True) -> Dataset:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    cfg = ExperimentConfig.from_json((root / "config.json").read_text())
    if verify:
        if cfg.digest() != manifest["config_sha256"]:
            raise ValueError("config.json does not match the manifest hash")
        for rel, meta in manifest["files"].items():
            if file_sha256(root / rel) != meta["sha256"]:
                raise ValueError(f"{rel}: checksum mismatch")
    streams = {n: read_stream(root / f"streams/{n}.bin") for n in NODES}
    refs = {k: {s: read_reference(root / f"refs/{s}_{k}.bin", k) for s in STATIONS}
            for k in REF_KINDS}
    return Dataset(cfg, streams, refs, manifest)
