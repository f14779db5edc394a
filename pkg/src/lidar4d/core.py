"""Core domain types: points, poses, scans, sequences and instance labelings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

# Reserved instance IDs. Ground points and points that could not be attached
# to any instance carry these codes in every labeling; real instances use any
# other 32-bit value (file storage narrows them to 16 bits, see lidar4d.io).
GROUND_ID = 0xFFFFFFFF
UNKNOWN_ID = 0

_POSE_TOL = 1e-6
_PAIR_SHIFT = 32


class MalformedFileError(RuntimeError):
    """A file does not match its expected binary or text layout."""


class CapacityError(ValueError):
    """A labeling holds more distinct instance IDs than the on-disk format."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Point:
    """A single Lidar return in the sensor frame, meters, intensity in [0, 1]."""

    x: float
    y: float
    z: float
    intensity: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite(v) for v in (self.x, self.y, self.z, self.intensity)):
            raise ValueError("point coordinates and intensity must be finite")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError("intensity must lie in [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.intensity], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform mapping sensor-frame coordinates into a common frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64, copy=True).reshape(3, 3)
        tra = np.array(self.translation, dtype=np.float64, copy=True).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(tra))):
            raise ValueError("pose entries must be finite")
        drift = np.abs(rot @ rot.T - np.eye(3)).max()
        if drift > _POSE_TOL or abs(np.linalg.det(rot) - 1.0) > _POSE_TOL:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", _frozen(rot))
        object.__setattr__(self, "translation", _frozen(tra))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def orthonormalized(cls, rotation, translation) -> "Pose":
        """Build a Pose, projecting the rotation onto SO(3) if it has drifted."""
        rot = np.array(rotation, dtype=np.float64).reshape(3, 3)
        drift = np.abs(rot @ rot.T - np.eye(3)).max()
        if drift > _POSE_TOL or abs(np.linalg.det(rot) - 1.0) > _POSE_TOL:
            u, _, vt = np.linalg.svd(rot)
            rot = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
        return cls(rot, translation)

    def apply(self, xyz: np.ndarray) -> np.ndarray:
        return np.asarray(xyz, dtype=np.float64) @ self.rotation.T + self.translation

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -(self.rotation.T @ self.translation))


@dataclass(frozen=True, eq=False)
class Scan:
    """One Lidar scan: an (N, 4) float array of x, y, z, intensity plus metadata."""

    points: np.ndarray
    timestep: int = 0
    pose: Pose | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 4)
        if pts.size and not np.all(np.isfinite(pts[:, :3])):
            raise ValueError("scan coordinates must be finite")
        if self.timestep < 0:
            raise ValueError("timestep must be >= 0")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def point(self, i: int) -> Point:
        x, y, z, w = self.points[i]
        return Point(x, y, z, min(max(w, 0.0), 1.0))


@dataclass(frozen=True, eq=False)
class Sequence:
    """An ordered list of scans sharing one sensor, with its scan frequency."""

    scans: list
    frequency_hz: float = 10.0

    def __post_init__(self):
        steps = [s.timestep for s in self.scans]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("scan timesteps must be strictly increasing")
        if self.frequency_hz <= 0:
            raise ValueError("frequency must be positive")

    def __len__(self) -> int:
        return len(self.scans)


@dataclass(frozen=True, eq=False)
class InstanceLabeling:
    """Per-point instance IDs for one scan (uint32, reserved codes above)."""

    ids: np.ndarray

    def __post_init__(self):
        ids = np.array(self.ids, dtype=np.uint32, copy=True).reshape(-1)
        object.__setattr__(self, "ids", _frozen(ids))

    def __len__(self) -> int:
        return self.ids.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, InstanceLabeling) and np.array_equal(self.ids, other.ids)

    def instance_ids(self) -> np.ndarray:
        """Distinct non-reserved IDs, ascending."""
        distinct = np.unique(self.ids)
        return distinct[(distinct != GROUND_ID) & (distinct != UNKNOWN_ID)]


def encode_members(scan_indices, point_indices) -> np.ndarray:
    """Pack (scan, point) index pairs into sortable int64 keys."""
    scan_idx = np.asarray(scan_indices, dtype=np.int64)
    point_idx = np.asarray(point_indices, dtype=np.int64)
    if scan_idx.size and (scan_idx.min() < 0 or point_idx.min() < 0):
        raise ValueError("indices must be non-negative")
    if scan_idx.size and (scan_idx.max() >= 2 ** 31 or point_idx.max() >= 2 ** _PAIR_SHIFT):
        raise ValueError("index exceeds packed key range")
    return (scan_idx << _PAIR_SHIFT) | point_idx


def decode_members(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    keys = np.asarray(keys, dtype=np.int64)
    return keys >> _PAIR_SHIFT, keys & ((1 << _PAIR_SHIFT) - 1)


@dataclass(frozen=True, eq=False)
class Segment4D:
    """One object identity: a set of (scan, point) memberships across time.

    Members are stored as sorted packed int64 keys for exact, fast set algebra.
    """

    id: int
    members: np.ndarray

    def __post_init__(self):
        keys = np.array(self.members, dtype=np.int64, copy=True).reshape(-1)
        keys.sort()
        if keys.size == 0:
            raise ValueError("segment must have at least one member")
        if np.any(keys[1:] == keys[:-1]):
            raise ValueError("segment members must be unique")
        object.__setattr__(self, "members", _frozen(keys))

    @classmethod
    def from_pairs(cls, seg_id: int, pairs) -> "Segment4D":
        pairs = list(pairs)
        scans = [p[0] for p in pairs]
        points = [p[1] for p in pairs]
        return cls(seg_id, encode_members(scans, points))

    def __len__(self) -> int:
        return self.members.shape[0]

    def pairs(self) -> Iterator[tuple[int, int]]:
        scans, points = decode_members(self.members)
        return zip(scans.tolist(), points.tolist())

    def scan_indices(self) -> np.ndarray:
        scans, _ = decode_members(self.members)
        return scans


def transform_scan(scan: Scan, pose: Pose) -> Scan:
    """Apply a rigid transform to every point; intensity is untouched."""
    moved = pose.apply(scan.xyz)
    pts = np.column_stack([moved, scan.intensity]) if len(scan) else scan.points
    return Scan(pts, timestep=scan.timestep, pose=None)
