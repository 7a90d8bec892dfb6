"""Command-line entry point: synth, process, render, bench, inspect.

Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from datetime import date
from pathlib import Path

import numpy as np

from .config import PipelineConfig, load_config, write_sidecar
from .errors import CvlError

log = logging.getLogger("cvlattice")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _grid_arg(text: str):
    parts = text.split(",")
    if len(parts) != 6:
        raise argparse.ArgumentTypeError("expected lat_min,lat_max,lon_min,lon_max,lat_step,lon_step")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _non_negative_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _day_arg(text: str) -> str:
    try:
        date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {text!r}")
    return text


def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="key=value config file (flags override it)")
    g.add_argument("--grid", type=_grid_arg, help="lat_min,lat_max,lon_min,lon_max,lat_step,lon_step")
    g.add_argument("--min-step", type=_positive_int, help="minutes per temporal bin (default 5)")
    g.add_argument("--dxn-step", type=_positive_int, help="degrees per direction bin (default 90)")
    g.add_argument("--dxn-offset", type=float, help="heading rotation before binning, e.g. 45")
    g.add_argument("--speed-ceiling", type=float)
    g.add_argument("--day", type=_day_arg, help="keep only records dated YYYY-MM-DD")
    g.add_argument("--speed-max", type=float, help="speed normalization scale")
    g.add_argument("--volume-mode", choices=("per_frame_minmax", "fixed_cap", "log1p"))
    g.add_argument("--volume-cap", type=float)
    g.add_argument("--partitions", type=_positive_int)
    g.add_argument("--threads", type=_positive_int, help="worker processes (default $CVL_THREADS or 1)")


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    env_threads = os.environ.get("CVL_THREADS")
    if env_threads:
        try:
            cfg.threads = max(1, int(env_threads))
        except ValueError:
            raise UsageError(f"CVL_THREADS must be an integer, got {env_threads!r}")
    if getattr(args, "config", None):
        try:
            cfg = load_config(args.config, cfg)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}")
        except ValueError as exc:
            raise UsageError(str(exc))
    over = dict(
        min_step=args.min_step, dxn_step=args.dxn_step, dxn_offset=args.dxn_offset,
        speed_ceiling=args.speed_ceiling, day=args.day, speed_max=args.speed_max,
        volume_mode=args.volume_mode, volume_cap=args.volume_cap,
        n_partitions=args.partitions, threads=args.threads,
    )
    if args.grid:
        over.update(zip(("lat_min", "lat_max", "lon_min", "lon_max", "lat_step", "lon_step"), args.grid))
    cfg = cfg.updated(**over)
    try:
        return cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc))


def _digest(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(paths):
        h.update(Path(p).name.encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    from .synth import SynthConfig, count_rows, generate_day

    cfg = resolve_config(args)
    try:
        sc = SynthConfig(
            seed=args.seed, n_journeys=args.journeys,
            lat_min=cfg.lat_min, lat_max=cfg.lat_max, lon_min=cfg.lon_min, lon_max=cfg.lon_max,
            sample_period=args.sample_period, mean_duration=args.mean_duration,
            heading_sigma=args.heading_sigma, n_shards=args.shards,
            day=date.fromisoformat(cfg.day) if cfg.day else SynthConfig.day,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    manifest = generate_day(sc, args.out, threads=cfg.threads)
    rows = count_rows(manifest)
    print(f"shards: {len(manifest.shard_paths)}")
    print(f"journeys: {sc.n_journeys}")
    print(f"rows: {rows}")
    print(f"day: {sc.day.isoformat()}")
    print(f"digest: {_digest(manifest.shard_paths)}")
    return EXIT_OK


def cmd_process(args) -> int:
    from .aggregate import process_day
    from .ingest import discover_shards
    from .lattice_store import write_container

    cfg = resolve_config(args).updated(input=args.input, glob=args.glob, output=args.out)
    if not cfg.input or not cfg.output:
        raise UsageError("process needs an input directory and an output path")
    spec = cfg.grid()
    manifest = discover_shards(cfg.input, cfg.glob)
    run = process_day(manifest, spec, cfg.filter_rules(), cfg.n_partitions, cfg.threads)
    out = Path(cfg.output)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    size = write_container(run.frames, spec, run.day, out)
    notes = {
        "shards": len(manifest.shard_paths),
        "rows_total": manifest.total_rows,
        "rows_rejected": manifest.rejected_rows,
        "records_deduplicated": run.records_deduplicated,
        "records_aggregated": run.records_aggregated,
        "container_day": run.day.isoformat(),
        "container_bytes": size,
    }
    write_sidecar(str(out) + ".meta", cfg, notes)

    print(f"shards: {len(manifest.shard_paths)}")
    print(f"rows: {manifest.total_rows} accepted: {manifest.accepted_rows} rejected: {manifest.rejected_rows}")
    for reason, n in sorted(manifest.rejected.items()):
        print(f"  rejected {reason}: {n}")
    print(f"after dedup: {run.records_deduplicated}")
    for reason, n in sorted(run.dropped.items()):
        print(f"  filtered {reason}: {n}")
    print(f"aggregated: {run.records_aggregated}")
    print("stage timings (s):")
    for stage, secs in run.timings.items():
        print(f"  {stage}: {secs:.6f}")
    print(f"wrote {out} ({size} bytes)")
    return EXIT_OK


def cmd_render(args) -> int:
    from .lattice_store import channel_name, read_container, render_channel, render_composite

    cfg = resolve_config(args)
    norm = cfg.normalization()
    header, frames = read_container(args.container)
    if not (0 <= args.batch < header.n_batches):
        raise UsageError(f"--batch {args.batch} out of range (valid 0..{header.n_batches - 1})")
    frame = frames[args.batch]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_channels = 2 * header.n_directions
    channels = list(range(n_channels)) if args.all_channels else list(args.channel or [])
    for k in channels:
        if not (0 <= k < n_channels):
            raise UsageError(f"--channel {k} out of range (valid 0..{n_channels - 1})")
    want_composite = args.composite or not channels
    written = []
    for k in channels:
        p = out / f"batch{args.batch:03d}_{channel_name(k, header.n_directions)}.png"
        written.append(render_channel(frame, k, norm, p))
    if want_composite:
        written.append(render_composite(frame, norm, out / f"batch{args.batch:03d}_composite.png"))
    for p in written:
        print(p)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import BenchConfig, emit_report, run_benchmark
    from .synth import SynthConfig

    cfg = resolve_config(args)
    sc = SynthConfig(seed=args.seed, n_journeys=args.journeys, lat_min=cfg.lat_min, lat_max=cfg.lat_max,
                     lon_min=cfg.lon_min, lon_max=cfg.lon_max, mean_duration=args.mean_duration,
                     n_shards=args.shards)
    bc = BenchConfig(cfg.grid(), sc, cfg.filter_rules(), cfg.normalization(), n_runs=args.runs,
                     discard_warmup=args.warmup, n_partitions=cfg.n_partitions, threads=cfg.threads,
                     reread_inputs=not args.cached_inputs)
    report = run_benchmark(bc, progress=lambda s: print(f"timing {s}", file=sys.stderr))
    text = emit_report(report, args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .lattice_store import read_container

    header, frames = read_container(args.container)
    print(f"magic: CVL1")
    print(f"version: {header.version}")
    print(f"lat_min: {header.lat_min!r}")
    print(f"lat_step: {header.lat_step!r}")
    print(f"lon_min: {header.lon_min!r}")
    print(f"lon_step: {header.lon_step!r}")
    print(f"rows: {header.rows}")
    print(f"cols: {header.cols}")
    print(f"min_step: {header.min_step}")
    print(f"dxn_step: {header.dxn_step}")
    print(f"n_batches: {header.n_batches}")
    print(f"day: {header.day} ({header.date.isoformat()})")
    print(f"file_bytes: {header.file_size}")
    total_volume = 0
    max_speed = 0.0
    busy = 0
    print("batch nonzero_cells")
    for fr in frames:
        nz = int(np.count_nonzero(fr.volume))
        busy += nz > 0
        total_volume += int(fr.volume.sum(dtype=np.uint64))
        if nz:
            max_speed = max(max_speed, float(fr.speed.max()))
        print(f"{fr.t} {nz}")
    print(f"batches_with_data: {busy}")
    print(f"total_volume: {total_volume}")
    print(f"max_mean_speed: {max_speed!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvlattice", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic day of CSV shards")
    _common(p)
    p.add_argument("--seed", type=_non_negative_int, default=0)
    p.add_argument("--journeys", type=_non_negative_int, default=100)
    p.add_argument("--shards", type=_positive_int, default=4)
    p.add_argument("--sample-period", type=float, default=1.0)
    p.add_argument("--mean-duration", type=float, default=900.0)
    p.add_argument("--heading-sigma", type=float, default=5.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("process", help="CSV shards -> lattice container")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--glob", default="*.csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("render", help="container batch -> PNG")
    _common(p)
    p.add_argument("container")
    p.add_argument("--batch", type=int, required=True)
    p.add_argument("--composite", action="store_true")
    p.add_argument("--all-channels", action="store_true")
    p.add_argument("--channel", type=int, action="append")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("bench", help="naive vs parallel timing report")
    _common(p)
    p.add_argument("--runs", type=_positive_int, default=25)
    p.add_argument("--warmup", type=_non_negative_int, default=0)
    p.add_argument("--format", choices=("md", "csv"), default="md")
    p.add_argument("--seed", type=_non_negative_int, default=0)
    p.add_argument("--journeys", type=_non_negative_int, default=30)
    p.add_argument("--mean-duration", type=float, default=300.0)
    p.add_argument("--shards", type=_positive_int, default=4)
    p.add_argument("--cached-inputs", action="store_true", help="reuse parsed inputs across runs")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="print container header and per-batch stats")
    p.add_argument("container")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cvlattice {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CvlError, OSError) as exc:
        print(f"cvlattice {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
