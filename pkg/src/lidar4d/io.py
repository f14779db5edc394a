"""Bit-exact file I/O: KITTI velodyne bins, pose files, label files, features.

Formats:
  * ``.bin``: consecutive 16-byte records of four little-endian float32
    (x, y, z, intensity).
  * ``poses.txt``: one pose per line, 12 whitespace-separated decimals
    (row-major 3x4 matrix mapping sensor frame to the common frame).
  * ``.label``: one little-endian uint32 per point; instance ID in the upper
    16 bits, semantic class in the lower 16 (always written as 0 here).
    Instance code 65535 marks ground, 0 marks unknown/discarded points.
  * ``.feat``: header of three little-endian uint32 (num_points, dim,
    num_queries) followed by row-major little-endian float32 point-feature
    then query matrices.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .core import (
    GROUND_ID,
    UNKNOWN_ID,
    CapacityError,
    InstanceLabeling,
    MalformedFileError,
    Pose,
    Scan,
    Sequence,
)

_RECORD_BYTES = 16
_GROUND_CODE = 0xFFFF
_MAX_FILE_ID = 0xFFFE  # 65534 real instances; 0 and 65535 are reserved


def read_kitti_bin(path, timestep: int = 0) -> Scan:
    """Decode a velodyne .bin file into a Scan."""
    size = os.path.getsize(path)
    if size % _RECORD_BYTES != 0:
        raise MalformedFileError(f"{path}: size {size} is not a multiple of {_RECORD_BYTES}")
    raw = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    return Scan(raw.astype(np.float64), timestep=timestep)


def write_kitti_bin(scan: Scan, path) -> None:
    scan.points.astype("<f4").tofile(path)


def read_poses(path) -> list[Pose]:
    """Parse a poses.txt file; rotations are re-orthonormalized if drifted."""
    poses = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 12:
                raise MalformedFileError(
                    f"{path}:{lineno}: expected 12 values per pose, got {len(tokens)}")
            try:
                mat = np.array([float(t) for t in tokens], dtype=np.float64).reshape(3, 4)
            except ValueError as exc:
                raise MalformedFileError(f"{path}:{lineno}: {exc}") from exc
            poses.append(Pose.orthonormalized(mat[:, :3], mat[:, 3]))
    return poses


def write_poses(poses, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for pose in poses:
            mat = np.column_stack([pose.rotation, pose.translation])
            fh.write(" ".join(f"{v:.17g}" for v in mat.reshape(-1)) + "\n")


def sequence_id_map(labelings) -> dict[int, int]:
    """Map in-memory instance IDs to 16-bit file codes, shared for a sequence.

    IDs already in 1..65534 keep their value; larger IDs take the smallest
    free codes in ascending order so file round-trips are bit-exact whenever
    the in-memory IDs are already in range.
    """
    distinct: set[int] = set()
    for lab in labelings:
        distinct.update(int(v) for v in lab.instance_ids())
    if len(distinct) > _MAX_FILE_ID:
        raise CapacityError(
            f"{len(distinct)} distinct instance IDs exceed the 16-bit label capacity")
    in_range = sorted(v for v in distinct if 1 <= v <= _MAX_FILE_ID)
    overflow = sorted(v for v in distinct if v > _MAX_FILE_ID)
    mapping = {v: v for v in in_range}
    taken = set(in_range)
    free = (code for code in range(1, _MAX_FILE_ID + 1) if code not in taken)
    for v in overflow:
        mapping[v] = next(free)
    return mapping


def write_labels(labeling: InstanceLabeling, path, id_map: dict[int, int] | None = None) -> dict[int, int]:
    """Write one .label file; returns the ID map used (pass it to later scans)."""
    if id_map is None:
        id_map = sequence_id_map([labeling])
    ids = labeling.ids
    codes = np.empty(ids.shape, dtype=np.uint32)
    ground = ids == GROUND_ID
    unknown = ids == UNKNOWN_ID
    codes[ground] = _GROUND_CODE
    codes[unknown] = 0
    rest = ~(ground | unknown)
    if np.any(rest):
        values = ids[rest]
        distinct = np.unique(values)
        try:
            lookup = np.array([id_map[int(v)] for v in distinct], dtype=np.uint32)
        except KeyError as exc:
            raise ValueError(f"instance ID {exc.args[0]} missing from id_map") from exc
        codes[rest] = lookup[np.searchsorted(distinct, values)]
    (codes.astype("<u4") << np.uint32(16)).tofile(path)
    return id_map


def read_labels(path) -> InstanceLabeling:
    size = os.path.getsize(path)
    if size % 4 != 0:
        raise MalformedFileError(f"{path}: size {size} is not a multiple of 4")
    raw = np.fromfile(path, dtype="<u4")
    inst = raw >> np.uint32(16)
    ids = np.where(inst == _GROUND_CODE, np.uint32(GROUND_ID), inst.astype(np.uint32))
    return InstanceLabeling(ids)


def write_feature_file(path, features: np.ndarray, queries: np.ndarray) -> None:
    features = np.asarray(features, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if features.ndim != 2 or queries.ndim != 2 or features.shape[1] != queries.shape[1]:
        raise ValueError("features and queries must be 2-D with matching dim")
    with open(path, "wb") as fh:
        np.array([features.shape[0], features.shape[1], queries.shape[0]],
                 dtype="<u4").tofile(fh)
        features.astype("<f4").tofile(fh)
        queries.astype("<f4").tofile(fh)


def read_feature_file(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        header = np.fromfile(fh, dtype="<u4", count=3)
        if header.size != 3:
            raise MalformedFileError(f"{path}: truncated feature header")
        num_points, dim, num_queries = (int(v) for v in header)
        feats = np.fromfile(fh, dtype="<f4", count=num_points * dim)
        queries = np.fromfile(fh, dtype="<f4", count=num_queries * dim)
    if feats.size != num_points * dim or queries.size != num_queries * dim:
        raise MalformedFileError(f"{path}: truncated feature payload")
    return (feats.astype(np.float64).reshape(num_points, dim),
            queries.astype(np.float64).reshape(num_queries, dim))


def write_ground_mask(mask: np.ndarray, path) -> None:
    np.asarray(mask, dtype=bool).astype(np.uint8).tofile(path)


def read_ground_mask(path) -> np.ndarray:
    return np.fromfile(path, dtype=np.uint8).astype(bool)


# -- directory layout helpers (KITTI-style sequence trees) --------------------

def scan_paths(sequence_dir) -> list[Path]:
    velo = Path(sequence_dir) / "velodyne"
    root = velo if velo.is_dir() else Path(sequence_dir)
    paths = sorted(root.glob("*.bin"))
    if not paths:
        raise FileNotFoundError(f"no .bin scans found under {sequence_dir}")
    return paths


def load_sequence(sequence_dir, frequency_hz: float = 10.0) -> Sequence:
    """Load velodyne/*.bin (sorted) and poses.txt (if present) as a Sequence."""
    paths = scan_paths(sequence_dir)
    poses_file = Path(sequence_dir) / "poses.txt"
    poses = read_poses(poses_file) if poses_file.exists() else [None] * len(paths)
    if len(poses) < len(paths):
        raise MalformedFileError(
            f"{poses_file}: {len(poses)} poses for {len(paths)} scans")
    scans = []
    for t, path in enumerate(paths):
        scan = read_kitti_bin(path, timestep=t)
        scans.append(Scan(scan.points, timestep=t, pose=poses[t]))
    return Sequence(scans, frequency_hz=frequency_hz)


def load_labels(labels_dir) -> list[InstanceLabeling]:
    paths = sorted(Path(labels_dir).glob("*.label"))
    if not paths:
        raise FileNotFoundError(f"no .label files found under {labels_dir}")
    return [read_labels(p) for p in paths]


def save_labels(labelings, out_dir, stems=None) -> None:
    """Write one .label per scan, renumbering IDs consistently for the set."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    id_map = sequence_id_map(labelings)
    if stems is None:
        stems = [f"{i:06d}" for i in range(len(labelings))]
    for stem, lab in zip(stems, labelings):
        write_labels(lab, out / f"{stem}.label", id_map)


def export_kitti(out_dir, sequence: Sequence, labelings=None, poses=None) -> None:
    """Emit a KITTI-style tree: velodyne/*.bin, labels/*.label, poses.txt."""
    out = Path(out_dir)
    (out / "velodyne").mkdir(parents=True, exist_ok=True)
    for i, scan in enumerate(sequence.scans):
        write_kitti_bin(scan, out / "velodyne" / f"{i:06d}.bin")
    if labelings is not None:
        save_labels(labelings, out / "labels")
    if poses is not None:
        write_poses(poses, out / "poses.txt")
