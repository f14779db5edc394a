"""Command-line interface: synth, ground, cluster, track, stitch, eval.

Every subcommand accepts a flat key/value config file (``--config``) plus one
flag per parameter; flags override file values, unknown config keys are
errors. Progress goes to stderr, metric values to stdout, exit codes are
0 = success, 1 = validation error, 2 = I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import io
from .cluster4d import ClusterParams, cluster_sequence
from .config import RunConfig
from .core import CapacityError, MalformedFileError
from .ground import GroundParams, segment_ground
from .matching import ToyFeatureModel
from .metrics import EvalPair, evaluate
from .stitch import StitchParams, apply_remap, stitch_sequence, stitch_windows
from .synth import standard_scene, generate
from .tracker import (
    FileFeatureProvider,
    ToyFeatureProvider,
    TrackerParams,
    track_sequence,
)


@dataclass(frozen=True)
class SynthConfig:
    num_scans: int = 100
    hz: float = 10.0
    num_objects: int = 3
    moving: int = 1
    speed: float = 1.0
    spacing: float = 4.0
    points_per_object: int = 100
    ground_points: int = 2000
    noise_sigma: float = 0.02
    seed: int = 0


@dataclass(frozen=True)
class TrackConfig:
    feature_dim: int = 8
    seed: int = 0


@dataclass(frozen=True)
class StitchConfig:
    seed: int = 0


def _add_param_flags(parser: argparse.ArgumentParser, *param_types) -> None:
    seen = set()
    for ptype in param_types:
        for f in fields(ptype):
            if f.name in seen:
                continue
            seen.add(f.name)
            default = f.default
            parser.add_argument(
                "--" + f.name.replace("_", "-"),
                dest=f.name,
                type=type(default),
                default=None,
                help=f"{f.name} (default: {default})",
            )


def _flag_values(args, *param_types) -> dict:
    values = {}
    for ptype in param_types:
        for f in fields(ptype):
            value = getattr(args, f.name, None)
            if value is not None:
                values[f.name] = value
    return values


def _resolve(args, *param_types):
    """Config-file + flag resolution for each parameter dataclass."""
    run_config = RunConfig.from_sources(args.config, _flag_values(args, *param_types))
    consumed: set = set()
    resolved = [run_config.resolve(ptype(), consumed) for ptype in param_types]
    run_config.reject_unknown(consumed)
    return resolved, run_config


def _persist_run_config(out_dir, run_config: RunConfig, params_list) -> None:
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / "run_config.txt").write_text(
        run_config.dump(params_list), encoding="utf-8")


def _progress(message: str) -> None:
    print(message, file=sys.stderr)


def _cmd_synth(args) -> int:
    (cfg,), run_config = _resolve(args, SynthConfig)
    spec = standard_scene(cfg.num_objects, cfg.moving, cfg.speed, cfg.spacing,
                          cfg.points_per_object, cfg.ground_points,
                          cfg.noise_sigma, cfg.seed)
    sequence, labelings, poses = generate(spec, cfg.num_scans, cfg.hz)
    io.export_kitti(args.out, sequence, labelings, poses)
    _persist_run_config(args.out, run_config, [cfg])
    _progress(f"[synth] wrote {len(sequence)} scans to {args.out}")
    return 0


def _cmd_ground(args) -> int:
    (params,), run_config = _resolve(args, GroundParams)
    scans_path = Path(args.scans)
    paths = [scans_path] if scans_path.is_file() else io.scan_paths(scans_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t, path in enumerate(paths):
        scan = io.read_kitti_bin(path, timestep=t)
        mask = segment_ground(scan, params)
        io.write_ground_mask(mask, out / f"{path.stem}.mask")
    _persist_run_config(args.out, run_config, [params])
    _progress(f"[ground] wrote {len(paths)} masks to {args.out}")
    return 0


def _cmd_cluster(args) -> int:
    (cparams, gparams), run_config = _resolve(args, ClusterParams, GroundParams)
    sequence = io.load_sequence(args.sequence)
    threads = args.threads if args.threads else (os.cpu_count() or 1)
    _progress(f"[cluster] {len(sequence)} scans, "
              f"windows of {cparams.window_scans}, {threads} thread(s)")
    labelings = cluster_sequence(sequence, cparams, gparams, threads=threads)
    io.save_labels(labelings, args.out)
    _persist_run_config(args.out, run_config, [cparams, gparams])
    _progress(f"[cluster] wrote labels to {args.out}")
    return 0


def _cmd_track(args) -> int:
    (params, extra), run_config = _resolve(args, TrackerParams, TrackConfig)
    sequence = io.load_sequence(args.sequence)
    if args.provider == "toy":
        model = ToyFeatureModel.seeded(params.num_queries, extra.feature_dim, extra.seed)
        provider = ToyFeatureProvider(model)
    else:
        provider = FileFeatureProvider(args.provider)
    labelings = track_sequence(sequence, provider, params)
    io.save_labels(labelings, args.out)
    _persist_run_config(args.out, run_config, [params, extra])
    _progress(f"[track] wrote labels for {len(sequence)} scans to {args.out}")
    return 0


def _cmd_stitch(args) -> int:
    (params, extra), run_config = _resolve(args, StitchParams, StitchConfig)
    sequence = io.load_sequence(args.sequence)
    if args.labels is not None:
        if args.window_scans is None:
            raise ValueError("--window-scans is required with --labels")
        labelings = io.load_labels(args.labels)
        stitched = stitch_sequence(sequence, labelings, args.window_scans,
                                   params, seed=extra.seed)
    else:
        if args.prev_labels is None or args.next_labels is None:
            raise ValueError("provide --labels or both --prev-labels and --next-labels")
        prev = io.load_labels(args.prev_labels)
        nxt = io.load_labels(args.next_labels)
        boundary = len(prev)
        if boundary + len(nxt) > len(sequence):
            raise ValueError("label directories cover more scans than the sequence")
        remap = stitch_windows(prev[-1], sequence.scans[boundary - 1],
                               nxt[0], sequence.scans[boundary],
                               params, seed=extra.seed, window_index=1)
        stitched = apply_remap(nxt, remap)
    io.save_labels(stitched, args.out)
    _persist_run_config(args.out, run_config, [params, extra])
    _progress(f"[stitch] wrote {len(stitched)} labelings to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    gt = io.load_labels(args.gt)
    pred = io.load_labels(args.pred)
    pair = EvalPair.from_labelings(gt, pred)
    metrics = evaluate(pair, filter_points=args.filter, scanwise=args.scanwise)
    for name in sorted(metrics):
        print(f"{name} = {metrics[name]:.12g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(
            "".join(f"{k} = {metrics[k]:.17g}\n" for k in sorted(metrics)),
            encoding="utf-8")
        (out / "report.json").write_text(
            json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _progress(f"[eval] {len(pair.ground_truth)} GT objects, "
              f"{len(pair.predictions)} predicted segments")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lidar4d",
        description="Unsupervised 4D instance labeling toolkit for Lidar sequences")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic KITTI-format sequence")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--config", default=None)
    _add_param_flags(p_synth, SynthConfig)
    p_synth.set_defaults(func=_cmd_synth)

    p_ground = sub.add_parser("ground", help="per-scan ground masks")
    p_ground.add_argument("--scans", required=True, help="scan file or sequence dir")
    p_ground.add_argument("--out", required=True)
    p_ground.add_argument("--config", default=None)
    _add_param_flags(p_ground, GroundParams)
    p_ground.set_defaults(func=_cmd_ground)

    p_cluster = sub.add_parser("cluster", help="4D pseudo-labels for a sequence")
    p_cluster.add_argument("--sequence", required=True)
    p_cluster.add_argument("--out", required=True)
    p_cluster.add_argument("--config", default=None)
    p_cluster.add_argument("--threads", type=int, default=None,
                           help="window-level parallelism (default: all cores)")
    _add_param_flags(p_cluster, ClusterParams, GroundParams)
    p_cluster.set_defaults(func=_cmd_cluster)

    p_track = sub.add_parser("track", help="online query tracking")
    p_track.add_argument("--sequence", required=True)
    p_track.add_argument("--out", required=True)
    p_track.add_argument("--provider", default="toy",
                         help="'toy' or a directory of .feat files")
    p_track.add_argument("--config", default=None)
    _add_param_flags(p_track, TrackerParams, TrackConfig)
    p_track.set_defaults(func=_cmd_track)

    p_stitch = sub.add_parser("stitch", help="associate IDs across windows")
    p_stitch.add_argument("--sequence", required=True)
    p_stitch.add_argument("--out", required=True)
    p_stitch.add_argument("--labels", default=None,
                          help="label dir covering the whole sequence")
    p_stitch.add_argument("--window-scans", type=int, default=None)
    p_stitch.add_argument("--prev-labels", default=None)
    p_stitch.add_argument("--next-labels", default=None)
    p_stitch.add_argument("--config", default=None)
    _add_param_flags(p_stitch, StitchParams, StitchConfig)
    p_stitch.set_defaults(func=_cmd_stitch)

    p_eval = sub.add_parser("eval", help="association metrics")
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--filter", type=int, default=None,
                        help="drop per-scan GT fragments below this point count")
    p_eval.add_argument("--scanwise", action="store_true",
                        help="also compute the scan-wise association score")
    p_eval.add_argument("--out", default=None, help="write report.txt / report.json here")
    p_eval.set_defaults(func=_cmd_eval)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (MalformedFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
