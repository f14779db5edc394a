#!/usr/bin/env python3
"""Optional large-scale reproduction: 4D pseudo-labels on SemanticKITTI.

Runs the offline labeling pipeline with its shipped defaults over a
SemanticKITTI odometry sequence and scores it against the panoptic ground
truth on the usual eight object classes. Requires a local dataset copy laid
out as ``<root>/sequences/<seq>/{velodyne,labels,poses.txt,calib.txt}``.

This is CPU-hours scale on the full 4071-scan validation sequence; use
``--max-scans`` for a smoke run. Not part of the regular test suite.
"""

import argparse
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from lidar4d.cluster4d import ClusterParams, cluster_sequence
from lidar4d.core import Pose, Scan, Segment4D, Sequence, encode_members
from lidar4d.ground import GroundParams
from lidar4d.io import read_kitti_bin, read_poses
from lidar4d.metrics import EvalPair, evaluate

# car, bicycle, motorcycle, truck, other-vehicle, person, bicyclist, motorcyclist
THING_CLASSES = {10, 11, 15, 18, 20, 30, 31, 32}
# moving-class aliases collapse onto their parked counterparts
MOVING_TO_BASE = {252: 10, 253: 31, 254: 30, 255: 32, 257: 13, 258: 18, 259: 20}


def read_velodyne_calibration(calib_path: Path) -> np.ndarray:
    """4x4 velodyne-to-camera transform from a KITTI odometry calib.txt."""
    for line in calib_path.read_text().splitlines():
        if line.startswith("Tr:"):
            vals = np.array([float(v) for v in line.split()[1:]]).reshape(3, 4)
            tr = np.eye(4)
            tr[:3] = vals
            return tr
    raise ValueError(f"no 'Tr:' entry in {calib_path}")


def load_odometry_sequence(root: Path, sequence: str, max_scans=None) -> Sequence:
    """Scans with poses expressed in the velodyne frame of scan 0."""
    seq_dir = root / "sequences" / sequence
    cam_poses = read_poses(seq_dir / "poses.txt")
    calib = seq_dir / "calib.txt"
    tr = read_velodyne_calibration(calib) if calib.exists() else np.eye(4)
    tr_inv = np.linalg.inv(tr)
    paths = sorted((seq_dir / "velodyne").glob("*.bin"))
    if max_scans:
        paths = paths[:max_scans]
    scans = []
    for t, path in enumerate(paths):
        cam = np.eye(4)
        cam[:3, :3] = cam_poses[t].rotation
        cam[:3, 3] = cam_poses[t].translation
        velo = tr_inv @ cam @ tr
        pose = Pose.orthonormalized(velo[:3, :3], velo[:3, 3])
        scan = read_kitti_bin(path, timestep=t)
        scans.append(Scan(scan.points, timestep=t, pose=pose))
    return Sequence(scans, frequency_hz=10.0)


def ground_truth_segments(root: Path, sequence: str, num_scans: int):
    """4D thing-class segments from the panoptic labels."""
    seq_dir = root / "sequences" / sequence / "labels"
    members = defaultdict(list)
    for t, path in enumerate(sorted(seq_dir.glob("*.label"))[:num_scans]):
        raw = np.fromfile(path, dtype="<u4")
        semantic = raw & 0xFFFF
        semantic = np.array([MOVING_TO_BASE.get(int(s), int(s)) for s in semantic])
        instance = raw >> np.uint32(16)
        keep = np.isin(semantic, list(THING_CLASSES)) & (instance > 0)
        idx = np.flatnonzero(keep)
        identity = semantic[idx].astype(np.int64) * (1 << 16) + instance[idx]
        keys = encode_members(np.full(idx.size, t), idx)
        for ident in np.unique(identity):
            members[int(ident)].append(keys[identity == ident])
    return [Segment4D(ident, np.concatenate(parts))
            for ident, parts in sorted(members.items())]


def evaluate_sequence(root: Path, sequence: str = "08", max_scans=None,
                      filter_points=None) -> dict:
    root = Path(root)
    start = time.monotonic()
    seq = load_odometry_sequence(root, sequence, max_scans)
    print(f"loaded {len(seq)} scans in {time.monotonic() - start:.0f}s", file=sys.stderr)

    start = time.monotonic()
    predictions = cluster_sequence(seq, ClusterParams(), GroundParams())
    print(f"4D labeling finished in {time.monotonic() - start:.0f}s", file=sys.stderr)

    from lidar4d.metrics import segments_from_labelings
    pair = EvalPair(ground_truth_segments(root, sequence, len(seq)),
                    segments_from_labelings(predictions))
    return evaluate(pair, filter_points=filter_points, scanwise=True)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", required=True, help="SemanticKITTI root directory")
    parser.add_argument("--sequence", default="08")
    parser.add_argument("--max-scans", type=int, default=None)
    parser.add_argument("--filter", type=int, default=None)
    args = parser.parse_args()
    metrics = evaluate_sequence(Path(args.dataset), args.sequence,
                                args.max_scans, args.filter)
    for name in sorted(metrics):
        print(f"{name} = {metrics[name]:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
