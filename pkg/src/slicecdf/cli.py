"""Command-line entry point: ``slicecdf {distance,two-sample,steer,ergodic}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from ._rng import substream
from .core import load_samples
from .errors import (
    ConfigError,
    DimensionMismatchError,
    MalformedInputError,
    RolloutDivergenceError,
    SliceCdfError,
)
from .mixtures import load_mixture
from .sliced import SmoothingConfig, ThresholdRule, build_slice_plan, distance
from .tasks import ErgodicConfig, SteeringConfig, ergodic, steer
from .two_sample import TwoSampleConfig, run_two_sample

EXIT_MALFORMED = 2
EXIT_DIMENSION = 3
EXIT_DIVERGED = 4

log = logging.getLogger("slicecdf")


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_manifest(out_dir: Path, command: str, config: dict, seed: int, threads: int, started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "output_dir": str(out_dir),
        "threads": threads,
        "duration_seconds": time.time() - started,
    }
    write_atomic(out_dir / "manifest.json", json.dumps(manifest, indent=1))


def _load_config(path) -> dict:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedInputError(f"{path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise MalformedInputError(f"{path}: configuration must be a JSON object")
    return payload


def _parse_config(cls, path, seed):
    payload = _load_config(path)
    if seed is not None:
        payload["seed"] = seed
    try:
        return cls.from_dict(payload)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _output_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------- #
# subcommands
# --------------------------------------------------------------------------- #


def cmd_distance(args) -> int:
    started = time.time()
    samples = load_samples(args.samples)
    if args.target:
        target = load_mixture(args.target)
        target_path = args.target
    else:
        target = load_samples(args.samples2)
        target_path = args.samples2
    if samples.n != target.n:
        raise DimensionMismatchError(
            f"dimension mismatch: {args.samples} has n={samples.n} but {target_path} has n={target.n}")
    rule = args.threshold_rule or ("target-grid" if args.target else "sample-quantiles")
    context = samples if ThresholdRule(rule) is ThresholdRule.SAMPLE_QUANTILES else target
    plan = build_slice_plan(substream(args.seed, "directions"), args.h, args.n_values, rule, context)
    smoothing = SmoothingConfig(args.v, enabled=args.smooth)
    value = distance(samples, target, plan, smoothing, threads=args.threads)
    print(f"{value:.6f}")

    result = {"value": value, "H": args.h, "n_values": args.n_values, "seed": args.seed,
              "smooth": bool(args.smooth), "v": args.v}
    out_path = Path(args.output) if args.output else None
    if out_path is None and args.output_dir:
        out_path = _output_dir(args) / "distance.json"
    if out_path is not None:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_atomic(out_path, json.dumps(result, indent=1))
        if args.save_plan:
            plan.save(out_path.parent / "plan.json")
        config = {"samples": str(args.samples), "target": args.target, "samples2": args.samples2,
                  "threshold_rule": rule, **result}
        write_manifest(out_path.parent, "distance", config, args.seed, args.threads, started)
    return 0


def cmd_two_sample(args) -> int:
    started = time.time()
    config = _parse_config(TwoSampleConfig, args.config, args.seed)
    out = _output_dir(args)
    report = run_two_sample(config, threads=args.threads)
    report.write(out)
    print(f"null mean {report.null_mean:.6f} (std {report.null_std:.6f}); "
          f"alternative mean {report.alt_mean:.6f}; separation {report.separation:.2f} null std")
    write_manifest(out, "two-sample", config.to_dict(), config.seed, args.threads, started)
    return 0


def cmd_steer(args) -> int:
    started = time.time()
    config = _parse_config(SteeringConfig, args.config, args.seed)
    out = _output_dir(args)
    report = steer(config, threads=args.threads)
    report.write(out)
    d = report.distances
    print(f"eval distance {d[0]:.6f} -> {d[-1]:.6f} over {len(d) - 1} steps")
    write_manifest(out, "steer", config.to_dict(), config.seed, args.threads, started)
    return 0


def cmd_ergodic(args) -> int:
    started = time.time()
    config = _parse_config(ErgodicConfig, args.config, args.seed)
    out = _output_dir(args)
    report = ergodic(config, threads=args.threads)
    report.write(out)
    d = report.distances
    print(f"eval distance {d[0]:.6f} -> {d[-1]:.6f} over {len(d) - 1} iterations")
    write_manifest(out, "ergodic", config.to_dict(), config.seed, args.threads, started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the config file)")
    common.add_argument("--threads", type=int, default=1, help="maximum worker threads")
    common.add_argument("--output-dir", default=None, help="directory for output artifacts")

    parser = argparse.ArgumentParser(prog="slicecdf", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distance", parents=[common], help="distance between samples and a target")
    p.add_argument("samples", help="sample set (.csv or .json)")
    tgt = p.add_mutually_exclusive_group(required=True)
    tgt.add_argument("--target", help="Gaussian mixture JSON")
    tgt.add_argument("--samples2", help="second sample set (.csv or .json)")
    p.add_argument("--h", type=int, default=300, help="number of directions")
    p.add_argument("--n-values", type=int, default=100, help="thresholds per direction")
    p.add_argument("--threshold-rule", choices=["sample-quantiles", "target-grid"], default=None)
    p.add_argument("--smooth", action="store_true", help="use the sigmoid-smoothed estimate")
    p.add_argument("--v", type=float, default=100.0, help="sigmoid sharpness")
    p.add_argument("--output", default=None, help="result JSON path")
    p.add_argument("--save-plan", action="store_true", help="also write the slice plan next to the result")
    p.set_defaults(func=cmd_distance)

    for name, func, helptext in (
        ("two-sample", cmd_two_sample, "null/alternative distributions of the two-sample statistic"),
        ("steer", cmd_steer, "receding-horizon distribution steering"),
        ("ergodic", cmd_ergodic, "ergodic trajectory optimisation"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("config", help="experiment config JSON")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command != "distance" and not args.output_dir:
        parser.error(f"{args.command} requires --output-dir")
    if args.command == "distance" and args.seed is None:
        args.seed = 0
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (MalformedInputError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except DimensionMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except RolloutDivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except SliceCdfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
