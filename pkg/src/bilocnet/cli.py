"""Command-line entry point: analytic, oracle, simulate, analyze, report.

Exit codes: 0 success, 2 configuration error, 3 analysis failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .classical_oracle import (
    MAX_EXHAUSTIVE_CARD,
    max_biloc_bilocal,
    max_I1_plus_I2_local,
    region_scan,
)
from .config import ConfigError, load_config
from .pipeline import analytic_report, analyze, read_dataset, simulate, synchronize, write_dataset
from .sync import SyncError
from .units import TICK_S

EXIT_OK, EXIT_CONFIG, EXIT_ANALYSIS = 0, 2, 3
CONVENTION_ALIASES = {"peripheral": "peripheral-sum", "peripheral-sum": "peripheral-sum",
                      "literal": "literal"}


class AnalysisFailure(RuntimeError):
    pass


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.6g}" if np.isfinite(x) else "nan"


def cmd_analytic(args) -> int:
    rep = analytic_report(load_config(args.config))
    if args.json:
        print(json.dumps(rep, indent=2))
        return EXIT_OK
    print(f"{'convention':<16}{'I1':>10}{'I2':>10}{'B':>10}")
    for conv in ("peripheral-sum", "literal"):
        r = rep[conv]
        print(f"{conv:<16}{r['I1']:>10.5f}{r['I2']:>10.5f}{r['B']:>10.5f}")
    print(f"S_AB = {rep['S_AB']:.5f}")
    print(f"S_BC = {rep['S_BC']:.5f}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.card > MAX_EXHAUSTIVE_CARD:
        print(f"cardinality {args.card} exceeds the exhaustive cap {MAX_EXHAUSTIVE_CARD}; "
              f"running at {MAX_EXHAUSTIVE_CARD} (partial result)", file=sys.stderr)
    card = min(args.card, MAX_EXHAUSTIVE_CARD)
    res = max_biloc_bilocal(card, card)
    local = max_I1_plus_I2_local(max(card, 1)).value
    partial = args.card > MAX_EXHAUSTIVE_CARD or not res.converged
    print(f"bilocal max B (card {card}): {res.value:.6f}"
          + ("  [partial]" if partial else ""))
    print(f"local max |I1|+|I2|: {local:.6f}")
    region = region_scan(args.resolution)
    out = Path(args.out)
    _write_csv(out, ("I1", "I2", "bilocal", "local"),
               ((f"{r['I1']:.6f}", f"{r['I2']:.6f}", int(r["bilocal"]), int(r["local"]))
                for r in region))
    print(f"region: {region.size} rows -> {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.duration is not None and args.duration < 0:
        raise ConfigError("run.duration_s", "must be >= 0")
    run = simulate(cfg, seed=args.seed, duration_s=args.duration)
    manifest = write_dataset(Path(args.out), cfg, run)
    for rel, meta in manifest["files"].items():
        if rel.startswith("streams/"):
            print(f"{rel}: {meta['records']} records")
    print(f"seed {manifest['seed']}, config {manifest['config_sha256'][:16]}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    root = Path(args.input)
    try:
        ds = read_dataset(root)
    except ConfigError:
        raise
    except (OSError, ValueError, KeyError) as exc:
        raise AnalysisFailure(f"cannot read dataset: {exc}") from exc
    convention = CONVENTION_ALIASES[args.convention] if args.convention else None
    windows = [float(w) for w in args.windows.split(",")] if args.windows else None
    try:
        net_sync = synchronize(ds.config, ds.streams, ds.refs)
    except SyncError as exc:
        raise AnalysisFailure(f"synchronization failed: {exc}") from exc
    sync_report = net_sync.summary()
    (root / "sync.json").write_text(json.dumps(sync_report, indent=2, sort_keys=True) + "\n")
    if net_sync.low_confidence:
        msg = ", ".join(f"{link}: peak ratio {sync_report[link]['peak_ratio']:.2f}"
                        for link in net_sync.low_confidence)
        if not args.force:
            raise AnalysisFailure(f"low-confidence synchronization ({msg}); use --force")
        print(f"warning: low-confidence synchronization ({msg})", file=sys.stderr)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            result = analyze(ds.config, net_sync.streams, windows_ns=windows,
                             n_blocks=args.blocks, convention=convention)
        except ValueError as exc:
            raise AnalysisFailure(str(exc)) from exc
    for w in {str(c.message) for c in caught}:
        print(f"warning: {w}", file=sys.stderr)

    _write_csv(root / "sweep.csv", ("window_ns", "B", "std_error", "sigma_distance",
                                    "n_fourfolds"),
               ((_fmt(p.window * TICK_S * 1e9), _fmt(p.estimate.value), _fmt(p.estimate.std_error),
                 _fmt(p.sigma_distance), p.n_fourfolds) for p in result.sweep))
    _write_csv(root / "chsh.csv", ("link", "S", "std_error"),
               ((link, _fmt(e.value), _fmt(e.std_error)) for link, e in result.chsh.items()))
    summary = result.summary()
    summary["convention"] = convention or ds.config.analysis.convention
    summary["sync"] = sync_report
    (root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"B = {summary['B']:.4f} +- {summary['B_std_error']:.4f} at "
          f"{summary['optimal_window_ns']:.1f} ns ({summary['sigma_distance']:.1f} sigma)")
    print(f"S_AB = {summary['S_AB']:.4f}, S_BC = {summary['S_BC']:.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    root = Path(args.input)
    try:
        summary = json.loads((root / "summary.json").read_text())
        with open(root / "sweep.csv", newline="") as fh:
            sweep = list(csv.DictReader(fh))
    except OSError as exc:
        raise AnalysisFailure(f"run 'analyze' first: {exc}") from exc
    rows = []
    for r in sweep:
        b, e = float(r["B"]), float(r["std_error"])
        rows.append((r["window_ns"], r["B"], _fmt(b - e), _fmt(b + e), 1, r["n_fourfolds"]))
    _write_csv(root / "plot_b_vs_window.csv",
               ("window_ns", "B", "B_low", "B_high", "classical_bound", "n_fourfolds"), rows)
    region = region_scan(args.resolution)
    _write_csv(root / "plot_region.csv", ("I1", "I2", "bilocal", "local"),
               ((f"{r['I1']:.6f}", f"{r['I2']:.6f}", int(r["bilocal"]), int(r["local"]))
                for r in region))
    _write_csv(root / "plot_point.csv", ("I1", "I2", "B"),
               [(_fmt(summary["I1"]), _fmt(summary["I2"]), _fmt(summary["B"]))])
    print(f"wrote plot_b_vs_window.csv, plot_region.csv, plot_point.csv in {root}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bilocnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analytic", help="Born-rule functionals and CHSH values")
    a.add_argument("--config", required=True)
    a.add_argument("--json", action="store_true")
    a.set_defaults(func=cmd_analytic)

    o = sub.add_parser("oracle", help="classical bounds and the (I1, I2) region grid")
    o.add_argument("--card", type=int, default=4)
    o.add_argument("--resolution", type=int, default=101)
    o.add_argument("--out", default="region.csv")
    o.set_defaults(func=cmd_oracle)

    s = sub.add_parser("simulate", help="write a simulated dataset directory")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float, help="override run.duration_s (seconds)")
    s.set_defaults(func=cmd_simulate)

    z = sub.add_parser("analyze", help="sync, match and estimate on a dataset directory")
    z.add_argument("--in", dest="input", required=True)
    z.add_argument("--windows", help="comma-separated four-fold windows in ns")
    z.add_argument("--blocks", type=int)
    z.add_argument("--convention", choices=sorted(CONVENTION_ALIASES))
    z.add_argument("--force", action="store_true", help="proceed on low-confidence sync")
    z.set_defaults(func=cmd_analyze)

    r = sub.add_parser("report", help="plot-ready CSVs from an analyzed dataset")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--resolution", type=int, default=101)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "blocks", None) is not None and args.blocks < 2:
        print("error: --blocks must be >= 2", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AnalysisFailure as exc:
        print(f"analysis failed: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
