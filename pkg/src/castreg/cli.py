"""Command-line front-end: register pairs, run benchmarks, inspect reports."""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import format_report, parse_report, run_dataset_suite, run_synth_suite, summarize
from .config import PipelineConfig, load_config, parse_config_text
from .pcio import ParseError, read_point_cloud, write_transform
from .pipeline import register_pair
from .pose import RigidTransform
from .synth import SceneSpec

__all__ = ["main"]


def _load_cfg(path):
    return load_config(path) if path else PipelineConfig()


def _cmd_register(args):
    cfg = _load_cfg(args.config)
    src = read_point_cloud(args.src)
    dst = read_point_cloud(args.dst)
    report, pose = register_pair(src, dst, cfg)
    if args.out:
        write_transform(args.out, pose)
    print(json.dumps(report, indent=2))
    return 0


def _parse_scene_spec(path):
    fields = {f.name: f for f in SceneSpec.__dataclass_fields__.values()}
    kwargs = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or key not in fields:
            raise ValueError(f"{path}:{lineno}: unknown or malformed entry {raw!r}")
        kind = fields[key].type
        kind = {"int": int, "float": float, "str": str}.get(kind, kind)
        kwargs[key] = kind(val)
    return SceneSpec(**kwargs)


def _cmd_bench_synth(args):
    cfg = _load_cfg(args.config)
    spec = _parse_scene_spec(args.spec) if args.spec else SceneSpec()
    report = run_synth_suite(spec, args.pairs, cfg)
    text = format_report(report, include_timings=cfg.include_timings)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _read_manifest(path, fmt):
    """Each line: src path, dst path, optional 12 row-major 3x4 gt numbers."""
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 14):
            raise ValueError(
                f"{path}:{lineno}: expected 2 paths (+ optional 12 transform "
                f"values), got {len(parts)} fields"
            )
        src = read_point_cloud(parts[0], fmt=fmt)
        dst = read_point_cloud(parts[1], fmt=fmt)
        gt = None
        if len(parts) == 14:
            mat = np.eye(4)
            mat[:3, :4] = np.array([float(v) for v in parts[2:]]).reshape(3, 4)
            gt = RigidTransform.from_matrix(mat)
        pairs.append((src, dst, gt))
    return pairs


def _cmd_bench_dataset(args):
    cfg = _load_cfg(args.config)
    pairs = _read_manifest(args.pairs, args.format)
    report = run_dataset_suite(pairs, cfg)
    text = format_report(report, include_timings=cfg.include_timings)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_metrics(args):
    report = parse_report(Path(args.report).read_text())
    print(json.dumps(summarize(report.rows), indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="castreg",
                                     description="Coarse-to-fine point cloud registration.")
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("register", help="register one pair of point cloud files")
    reg.add_argument("src")
    reg.add_argument("dst")
    reg.add_argument("--config", help="key = value config file")
    reg.add_argument("--out", help="write the 4x4 transform here")
    reg.set_defaults(func=_cmd_register)

    bench = sub.add_parser("bench", help="run a benchmark suite")
    bsub = bench.add_subparsers(dest="bench_command", required=True)

    synth = bsub.add_parser("synth", help="benchmark on generated scenes")
    synth.add_argument("--spec", help="scene spec file (key = value)")
    synth.add_argument("--pairs", type=int, default=10)
    synth.add_argument("--config")
    synth.add_argument("--out")
    synth.set_defaults(func=_cmd_bench_synth)

    ds = bsub.add_parser("dataset", help="benchmark on a pair manifest")
    ds.add_argument("--pairs", required=True, help="manifest file")
    ds.add_argument("--format", choices=["kitti-bin", "ply", "xyz"])
    ds.add_argument("--config")
    ds.add_argument("--out")
    ds.set_defaults(func=_cmd_bench_dataset)

    met = sub.add_parser("metrics", help="recompute aggregates from a report")
    met.add_argument("--report", required=True)
    met.set_defaults(func=_cmd_metrics)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
