"""Command-line front end.

Subcommands map one-to-one onto the pipeline stages plus scene synthesis,
evaluation, the strategy benchmark, and mask inspection. Every subcommand
accepts --config <file> and --seed <u64>; stage commands otherwise reuse the
config stored in the working directory by synth-scene.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical
failure.

The numerical core is single-worker with fixed reduction orders, so results
are bit-identical for any WGS_THREADS value; the env var is validated and
used to cap the BLAS thread pools (which must happen before numpy loads,
hence the deferred imports).
"""

from __future__ import annotations

import argparse
import datetime
import os
import sys
import time
from pathlib import Path

from . import __version__
from .errors import ConfigError, DataError, NumericalDivergenceError


def _setup_threads() -> int:
    raw = os.environ.get("WGS_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"WGS_THREADS must be a positive integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError(f"WGS_THREADS must be >= 1, got {cap}")
    # One worker satisfies any cap and keeps reductions bit-identical.
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")
    return cap


def _resolve_config(args, workdir: Path | None):
    """Config precedence: --config file, then stored workdir config, then defaults.

    A --seed flag overrides the seed either way. When a stage command gets
    explicit --config/--seed, the resolved config replaces the stored one so
    later stages stay consistent.
    """
    from .config import PipelineConfig, parse_config, save_config
    from .pipeline import load_config_from_workdir

    stored = workdir / "config.txt" if workdir is not None else None
    if args.config is not None:
        cfg = parse_config(args.config)
    elif stored is not None and stored.exists():
        cfg = load_config_from_workdir(workdir)
    else:
        cfg = PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    if stored is not None and (args.config is not None or args.seed is not None):
        workdir.mkdir(parents=True, exist_ok=True)
        save_config(cfg, stored)
    return cfg


def _write_manifest(workdir: Path, command: str, cfg, artifacts, started: float) -> None:
    """Atomically record what a run produced; paths listed must exist."""
    from .config import config_to_text

    lines = [
        f"command = {command}",
        f"tool_version = {__version__}",
        f"seed = {cfg.seed}",
        f"started = {datetime.datetime.fromtimestamp(started).isoformat()}",
        f"ended = {datetime.datetime.now().isoformat()}",
        "",
        "[config]",
        config_to_text(cfg).rstrip(),
        "",
        "[artifacts]",
    ]
    for p in artifacts:
        p = Path(p)
        if p.exists():
            lines.append(str(p))
    tmp = workdir / "run_manifest.txt.tmp"
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, workdir / "run_manifest.txt")


def _add_common(sub, workdir: bool = True):
    sub.add_argument("--config", type=Path, help="config file of key = value lines")
    sub.add_argument("--seed", type=int, help="override the RNG seed")
    if workdir:
        sub.add_argument("--workdir", type=Path, required=True,
                         help="working directory for stage artifacts")
    return sub


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wavesplat",
        description="Sparse-view Gaussian splatting with wavelet-domain repair.")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    _add_common(subs.add_parser("synth-scene", help="generate the synthetic scene"))
    _add_common(subs.add_parser("train-coarse", help="stage (a): coarse fit on sparse views"))
    _add_common(subs.add_parser("make-dataset", help="stage (b): corrupted/clean pair creation"))
    _add_common(subs.add_parser("fit-repair", help="stage (c): fit LL repairer and HF refiner"))
    _add_common(subs.add_parser("train-fine", help="stage (d): fine fit with pseudo targets"))

    ev = _add_common(subs.add_parser("evaluate", help="held-out PSNR/SSIM to CSV"))
    ev.add_argument("--checkpoint", choices=("fine", "coarse"), default="fine")

    _add_common(subs.add_parser("run-all", help="all stages end to end"))
    bench = _add_common(subs.add_parser("bench-strategies",
                                        help="time dataset creation per strategy"))
    bench.add_argument("--strategies", default="orm-online,loo",
                       help="comma-separated strategy list")

    mg = _add_common(subs.add_parser("mask-gen", help="emit drifting masks as PGM"),
                     workdir=False)
    mg.add_argument("--out", type=Path, required=True, help="output directory")
    mg.add_argument("--view-index", type=int, default=1)
    mg.add_argument("--iterations", default="0",
                    help="comma-separated training iterations to rasterize")
    mg.add_argument("--width", type=int, default=64)
    mg.add_argument("--height", type=int, default=64)
    mg.add_argument("--object", type=Path, default=None,
                    help="object mask PGM (default: full frame)")
    return parser


def _cmd_stage(args, runner_name: str):
    from . import pipeline

    workdir = args.workdir
    cfg = _resolve_config(args, workdir)
    started = time.time()
    if runner_name == "synth-scene":
        pipeline.run_synth(cfg, workdir)
        artifacts = [workdir / "scene", workdir / "config.txt"]
    elif runner_name == "train-coarse":
        pipeline.run_coarse(workdir)
        artifacts = [workdir / "coarse" / "cloud.wgsc"]
    elif runner_name == "make-dataset":
        pipeline.run_dataset(workdir)
        artifacts = [workdir / "dataset"]
    elif runner_name == "fit-repair":
        pipeline.run_repair_fit(workdir)
        artifacts = [workdir / "repair"]
    elif runner_name == "train-fine":
        pipeline.run_fine(workdir)
        artifacts = [workdir / "fine" / "cloud.wgsc"]
    else:
        raise ValueError(runner_name)
    _write_manifest(workdir, runner_name, cfg, artifacts, started)
    return 0


def _cmd_evaluate(args):
    from . import pipeline

    cfg = _resolve_config(args, args.workdir)
    started = time.time()
    report = pipeline.run_evaluate(args.workdir, args.checkpoint)
    print(f"{args.checkpoint}: psnr={report.psnr:.3f} dB ssim={report.ssim:.4f} "
          f"({len(report.per_view)} held-out views)")
    _write_manifest(args.workdir, "evaluate", cfg,
                    [args.workdir / "eval" / f"metrics_{args.checkpoint}.csv"], started)
    return 0


def _cmd_run_all(args):
    from . import pipeline

    cfg = _resolve_config(args, args.workdir)
    started = time.time()
    log = pipeline.run_all(cfg, args.workdir)
    for name, secs in log.stage_seconds.items():
        print(f"stage {name}: {secs:.2f} s")
    print(f"total: {log.total_seconds:.2f} s")
    print(f"held-out psnr={log.metrics.psnr:.3f} dB ssim={log.metrics.ssim:.4f} "
          f"(coarse psnr={log.coarse_metrics.psnr:.3f} dB)")
    _write_manifest(args.workdir, "run-all", cfg,
                    [args.workdir / "summary.txt", args.workdir / "eval"], started)
    return 0


def _cmd_bench(args):
    from . import pipeline

    cfg = _resolve_config(args, args.workdir)
    started = time.time()
    strategies = tuple(s.strip() for s in args.strategies.split(",") if s.strip())
    results = pipeline.bench_dataset_strategies(cfg, args.workdir, strategies)
    for strategy, row in results.items():
        print(f"{strategy}: {row['seconds']:.2f} s, {row['models_trained']} model(s) trained")
    _write_manifest(args.workdir, "bench-strategies", cfg,
                    [args.workdir / "bench.csv"], started)
    return 0


def _cmd_mask_gen(args):
    import numpy as np

    from .config import PipelineConfig, parse_config
    from .image import load_mask_pgm, save_mask_pgm
    from .masking import rasterize_mask, spec_for_view

    cfg = parse_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.object is not None:
        obj = load_mask_pgm(args.object)
    else:
        obj = np.ones((args.height, args.width), dtype=np.uint8)
    spec = spec_for_view(cfg.seed, args.view_index, cfg.n_m, cfg.coverage)
    args.out.mkdir(parents=True, exist_ok=True)
    written = []
    for tok in args.iterations.split(","):
        t = int(tok.strip())
        mask = rasterize_mask(spec, t, obj)
        path = args.out / f"mask_view{args.view_index:03d}_t{t:05d}.pgm"
        save_mask_pgm(mask, path)
        written.append(path)
    (args.out / "maskspec.txt").write_text(spec.to_kv())
    print(f"wrote {len(written)} mask(s) to {args.out}")
    return 0


def main(argv=None) -> int:
    try:
        _setup_threads()
        args = build_parser().parse_args(argv)
        import logging

        logging.basicConfig(level=logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        command = args.command
        if command in ("synth-scene", "train-coarse", "make-dataset",
                       "fit-repair", "train-fine"):
            return _cmd_stage(args, command)
        if command == "evaluate":
            return _cmd_evaluate(args)
        if command == "run-all":
            return _cmd_run_all(args)
        if command == "bench-strategies":
            return _cmd_bench(args)
        if command == "mask-gen":
            return _cmd_mask_gen(args)
        raise ValueError(f"unhandled command {command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalDivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
