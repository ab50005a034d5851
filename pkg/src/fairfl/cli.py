"""Command-line driver: run experiments, validate configs, summarise record files."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import engine
from .config import ConfigError, load_config

OUT_ENV = "FAIRFL_OUT"
EMIT_CHOICES = ("round-csv", "summary-json", "figure-data")

RECORD_COLUMNS = ("round", "device", "scheme", "loss", "deviation", "sigma", "e_compute_J",
                  "e_transmit_J", "e_total_J", "j", "p_W", "rate_bps", "phi", "utility",
                  "skipped")
DEVICE_COLUMNS = ("device", "distance_m", "normalized_path_loss")


def _fmt(x) -> str:
    # repr gives the shortest string that round-trips a float exactly
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def record_row(r: engine.RoundRecord) -> list[str]:
    return [_fmt(v) for v in (r.round, r.device, r.scheme, r.loss, r.deviation, r.sigma,
                              r.compute_energy, r.transmit_energy, r.total_energy, r.iterations,
                              r.power, r.rate, r.phi, r.utility, r.skipped)]


def write_records(path: Path, records: Sequence[engine.RoundRecord]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        w.writerows(record_row(r) for r in records)


def read_records(path: Path) -> list[engine.RoundRecord]:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RECORD_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        out = []
        for row in reader:
            out.append(engine.RoundRecord(
                int(row["round"]), int(row["device"]), row["scheme"], float(row["loss"]),
                float(row["deviation"]), float(row["sigma"]), float(row["e_compute_J"]),
                float(row["e_transmit_J"]), float(row["e_total_J"]), int(row["j"]),
                float(row["p_W"]), float(row["rate_bps"]), float(row["phi"]),
                float(row["utility"]), row["skipped"] == "1"))
    return out


def write_devices(path: Path, distances: Sequence[float], alpha: float) -> None:
    npl = engine.normalized_path_loss(distances, alpha)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DEVICE_COLUMNS)
        for k, (r, x) in enumerate(zip(distances, npl)):
            w.writerow([k, _fmt(float(r)), _fmt(x)])


def read_devices(path: Path) -> tuple[list[float], list[float]]:
    with path.open(newline="") as fh:
        rows = sorted(csv.DictReader(fh), key=lambda row: int(row["device"]))
    return [float(r["distance_m"]) for r in rows], [float(r["normalized_path_loss"]) for r in rows]


def write_figure_data(out: Path, summary: dict) -> list[Path]:
    """Loss-per-round and energy-per-device series, one pair of files per scheme."""
    written = []
    for scheme, s in summary["schemes"].items():
        p = out / f"fig1_loss_{scheme}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("round", "avg_loss", "loss_std"))
            for m, (a, sd) in enumerate(zip(s["loss_by_round"], s["loss_std_by_round"])):
                w.writerow((m, _fmt(a), _fmt(sd)))
        written.append(p)
        p = out / f"fig2_energy_{scheme}.csv"
        npl = s.get("normalized_path_loss") or [math.nan] * len(s["energy_by_device"])
        rows = sorted(zip(npl, range(len(npl)), s["energy_by_device"]))
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("normalized_path_loss", "device", "mean_total_energy_J"))
            for x, k, e in rows:
                w.writerow((_fmt(x), k, _fmt(e)))
        written.append(p)
    return written


def _json_safe(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def format_summary(summary: dict) -> str:
    schemes = list(summary["schemes"])
    rows = [("mean loss", "mean_loss", "{:.4f}"),
            ("final avg loss", "final_avg_loss", "{:.4f}"),
            ("loss std (devices)", "loss_std", "{:.3f}"),
            ("mean energy [J]", "energy_mean", "{:.4f}"),
            ("energy std [J]", "energy_std", "{:.4f}"),
            ("skipped rounds", "skipped", "{:d}")]
    width = max(len(r[0]) for r in rows) + 2
    lines = ["".ljust(width) + "".join(s.rjust(12) for s in schemes)]
    for label, key, fmt in rows:
        cells = "".join(fmt.format(summary["schemes"][s][key]).rjust(12) for s in schemes)
        lines.append(label.ljust(width) + cells)
    cmp_ = summary.get("comparison")
    if cmp_:
        lines.append("")
        lines.append(f"energy std reduction   {cmp_['energy_std_reduction_percent']:.2f} %")
        lines.append(f"mean energy reduction  {cmp_['mean_energy_reduction_percent']:.2f} %")
        lines.append(f"mean loss increase     {cmp_['mean_loss_increase_percent']:.2f} %")
        lines.append(f"final loss ratio       {cmp_['final_loss_ratio']:.4f}")
    return "\n".join(lines)


def print_summary(records: Sequence[engine.RoundRecord], distances=None, alpha: float = 4.0,
                  file=None) -> dict:
    summary = engine.summarize(records, distances, alpha)
    print(format_summary(summary), file=file or sys.stdout)
    return summary


def _parse_emit(text: str) -> set[str]:
    items = {t.strip() for t in text.split(",") if t.strip()}
    bad = items - set(EMIT_CHOICES)
    if not items or bad:
        raise argparse.ArgumentTypeError(
            f"--emit takes a comma list of {', '.join(EMIT_CHOICES)}")
    return items


def cmd_run(args) -> int:
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.scheme is not None:
        overrides["scheme"] = args.scheme
    if args.rounds is not None:
        overrides["num_rounds"] = args.rounds
    if overrides:
        try:
            config = replace(config, **overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    out_dir = args.out or os.environ.get(OUT_ENV)
    if not out_dir:
        raise ConfigError(f"no output directory: pass --out or set {OUT_ENV}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    setup = engine.build_setup(config)
    records = engine.run_simulation(config, setup)
    distances = [p.distance for p in setup.profiles]
    alpha = config.radio.path_loss_exponent
    write_devices(out / "devices.csv", distances, alpha)
    if "round-csv" in args.emit:
        write_records(out / "records.csv", records)
    if not records:
        print("no rounds run", file=sys.stderr)
        return 0
    summary = print_summary(records, distances, alpha)
    if "summary-json" in args.emit:
        (out / "summary.json").write_text(
            json.dumps(_json_safe(summary), indent=2, allow_nan=False) + "\n")
    if "figure-data" in args.emit:
        write_figure_data(out, summary)
    return 0


def cmd_validate(args) -> int:
    config = load_config(args.config)
    print(f"{args.config}: ok ({config.num_devices} devices, {config.num_rounds} rounds, "
          f"scheme {config.scheme}, T = {config.delay_bound} s)")
    return 0


def cmd_summarize(args) -> int:
    path = Path(args.records)
    records = read_records(path)
    dev_path = path.with_name("devices.csv")
    distances = read_devices(dev_path)[0] if dev_path.exists() else None
    print_summary(records, distances, args.alpha)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fairfl", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a simulation and write its outputs")
    run.add_argument("config")
    run.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    run.add_argument("--seed", type=int)
    run.add_argument("--scheme", choices=("proposed", "benchmark", "both"))
    run.add_argument("--rounds", type=int)
    run.add_argument("--emit", type=_parse_emit, default=set(EMIT_CHOICES),
                     help="comma list of round-csv, summary-json, figure-data (default: all)")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a config file")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)

    summ = sub.add_parser("summarize", help="summary table from a records.csv")
    summ.add_argument("records")
    summ.add_argument("--alpha", type=float, default=4.0,
                      help="path-loss exponent for the normalised axis")
    summ.set_defaults(func=cmd_summarize)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
