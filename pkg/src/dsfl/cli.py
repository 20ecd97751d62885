"""Command-line driver: ``run``, ``gen-data`` and ``report``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .core import ConfigError, SimConfig, derive_rng, dump_config, load_config, validate_config
from .data import gen_synthetic, save_dataset
from .federation import ALGORITHMS, RoundRecord, SimulationError, build_scenario, iter_rounds

log = logging.getLogger("dsfl")

CSV_COLUMNS = [f.name for f in dataclasses.fields(RoundRecord)]
OUT_ENV = "DSFL_OUT_DIR"


def format_value(value) -> str:
    """Shortest round-trip decimal for reals, ``inf`` for infinities."""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _default_out() -> str | None:
    return os.environ.get(OUT_ENV) or None


def _need_out(args) -> Path:
    if not args.out:
        raise SystemExit(f"error: --out not given and {OUT_ENV} is not set")
    return Path(args.out)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _write_manifest(out: Path, cfg: SimConfig, csv_paths: list[Path]) -> None:
    lines = [
        f"version = v{__version__}",
        f"started = {datetime.now(timezone.utc).isoformat(timespec='seconds')}",
        "outputs = " + ", ".join(p.name for p in csv_paths),
        "",
        "[config]",
        dump_config(cfg),
    ]
    (out / "manifest.txt").write_text("\n".join(lines), encoding="utf-8")


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config) if args.config else SimConfig()
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    problems = validate_config(cfg)
    if problems:
        print("invalid config:", file=sys.stderr)
        for p in problems:
            print(f"  violated: {p}", file=sys.stderr)
        return 2

    out = _need_out(args)
    algos = list(ALGORITHMS) if args.algo == "all" else [args.algo]
    try:
        out.mkdir(parents=True, exist_ok=True)
        scenario = build_scenario(cfg)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    paths = [out / f"{algo}.csv" for algo in algos]
    _write_manifest(out, cfg, paths)
    for algo, path in zip(algos, paths):
        log.info("running %s for %d rounds -> %s", algo, cfg.rounds, path)
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(CSV_COLUMNS)
                for rec in iter_rounds(cfg, algo, scenario):
                    writer.writerow([format_value(getattr(rec, c)) for c in CSV_COLUMNS])
        except SimulationError as exc:
            print(f"error: {algo} failed at round {exc.round_idx}: {exc.__cause__}", file=sys.stderr)
            return 1
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    return 0


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = _need_out(args)
    try:
        ds = gen_synthetic(args.n, args.size, derive_rng(args.seed, "data", 0, "generate"))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        save_dataset(ds, out)
    except OSError as exc:
        print(f"error: cannot write to {out}: {exc}", file=sys.stderr)
        return 1
    log.info("wrote %d images to %s", len(ds), out)
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

class ReportError(Exception):
    pass


def read_trace(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_COLUMNS:
            raise ReportError(f"{path}: unexpected header")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(CSV_COLUMNS):
                raise ReportError(f"{path}: line {lineno} has {len(row)} fields")
            rec = dict(zip(CSV_COLUMNS, row))
            try:
                for c in CSV_COLUMNS:
                    if c not in ("algo",):
                        rec[c] = int(rec[c]) if c in ("round", "seed") else float(rec[c])
            except ValueError:
                raise ReportError(f"{path}: line {lineno} is not numeric") from None
            rows.append(rec)
    return rows


def summarize(traces: dict[str, list[dict]]) -> tuple[list[str], str]:
    header = f"{'algo':<10} {'rounds':>6} {'accuracy':>9} {'psnr@1dB':>9} {'psnr@13dB':>10} {'energy_J':>12} {'J/round':>10}"
    lines = [header, "-" * len(header)]
    per_round = {}
    for algo, rows in sorted(traces.items()):
        if not rows:
            lines.append(f"{algo:<10} {0:>6} {'-':>9} {'-':>9} {'-':>10} {0.0:>12.6g} {'-':>10}")
            continue
        last = rows[-1]
        per_round[algo] = last["energy_cum_j"] / len(rows)
        lines.append(
            f"{algo:<10} {len(rows):>6} {last['accuracy']:>9.4f} {last['psnr_mean_1db']:>9.3f} "
            f"{last['psnr_mean_13db']:>10.3f} {last['energy_cum_j']:>12.6g} {per_round[algo]:>10.6g}"
        )
    order = [a for a in ("dsfl", "qdfedavg", "dfedavg") if a in per_round]
    if "dsfl" in per_round and len(order) >= 2:
        ok = all(per_round[a] < per_round[b] for a, b in zip(order, order[1:]))
        flag = f"energy ordering {' < '.join(order)}: {'PASS' if ok else 'FAIL'}"
    else:
        flag = "energy ordering: n/a (needs dsfl and at least one baseline)"
    return lines, flag


def cmd_report(args) -> int:
    src = Path(args.input)
    files = sorted(src.glob("*.csv")) if src.is_dir() else []
    if not files:
        print(f"error: no CSV traces in {src}", file=sys.stderr)
        return 1
    traces = {}
    try:
        for path in files:
            rows = read_trace(path)
            algo = rows[0]["algo"] if rows else path.stem
            traces[algo] = rows
    except (ReportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    lines, flag = summarize(traces)
    print("\n".join(lines))
    print(flag)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsfl", description="Two-layer federated semantic communication simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run experiments and write CSV traces")
    run.add_argument("config", nargs="?", help="key = value config file (defaults if omitted)")
    run.add_argument("--algo", choices=[*ALGORITHMS, "all"], default="dsfl")
    run.add_argument("--out", default=_default_out(), help=f"output directory (default ${OUT_ENV})")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.set_defaults(func=cmd_run)

    gen = sub.add_parser("gen-data", help="write a synthetic dataset as PGM files")
    gen.add_argument("--n", type=int, default=SimConfig.n_samples)
    gen.add_argument("--size", type=int, default=SimConfig.image_size)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", default=_default_out())
    gen.set_defaults(func=cmd_gen_data)

    rep = sub.add_parser("report", help="summarize CSV traces from a run directory")
    rep.add_argument("--in", dest="input", required=True)
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
