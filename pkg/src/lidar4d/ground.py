"""Per-scan unsupervised ground segmentation by patch-wise plane fitting.

The scan is split into a polar grid of concentric rings and azimuthal sectors
around the sensor. Each patch seeds a plane from its lowest plausible points,
refits it a few times against the in-patch inliers, and finally flags every
patch point within ``distance_threshold`` of the plane as ground. Patches too
sparse to fit inherit the plane of the nearest inner-ring patch in the same
sector. Points closer than ``min_range`` to the sensor are never ground.

The estimator is deterministic: no random sampling is involved anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Scan


@dataclass(frozen=True)
class GroundParams:
    sensor_height: float = 1.840
    seed_threshold: float = 0.5
    distance_threshold: float = 0.25
    min_range: float = 2.0
    num_rings: int = 4
    num_sectors: int = 32
    iterations: int = 3

    def __post_init__(self):
        if min(self.seed_threshold, self.distance_threshold, self.sensor_height) <= 0:
            raise ValueError("thresholds and sensor height must be positive")
        if self.min_range < 0:
            raise ValueError("min_range must be non-negative")
        if self.num_rings * self.num_sectors < 1 or self.iterations < 0:
            raise ValueError("grid must have at least one patch")


def _fit_plane(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares plane through points; returns (unit normal, centroid)."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, vectors = np.linalg.eigh(centered.T @ centered)
    normal = vectors[:, 0]
    # deterministic sign: largest-magnitude component positive
    pivot = int(np.argmax(np.abs(normal)))
    if normal[pivot] < 0:
        normal = -normal
    return normal, centroid


def _plane_distance(points: np.ndarray, plane) -> np.ndarray:
    normal, centroid = plane
    return np.abs((points - centroid) @ normal)


def _fit_patch(points: np.ndarray, params: GroundParams):
    # seed candidates sit plausibly near ground level; this keeps patches made
    # only of elevated structure (walls, vehicle roofs) from seeding a plane
    candidates = points[points[:, 2] < -params.sensor_height + params.seed_threshold]
    if candidates.shape[0] == 0:
        return None
    lowest = candidates[:, 2].min()
    seeds = candidates[candidates[:, 2] < lowest + params.seed_threshold]
    if seeds.shape[0] < 3:
        return None
    plane = _fit_plane(seeds)
    for _ in range(params.iterations):
        inliers = points[_plane_distance(points, plane) <= params.distance_threshold]
        if inliers.shape[0] >= 3:
            plane = _fit_plane(inliers)
    return plane


def segment_ground(scan: Scan, params: GroundParams | None = None) -> np.ndarray:
    """Boolean per-point ground mask for one scan."""
    if params is None:
        params = GroundParams()
    if len(scan) == 0:
        raise ValueError("cannot segment an empty scan")

    xyz = scan.xyz
    planar = np.hypot(xyz[:, 0], xyz[:, 1])
    mask = np.zeros(len(scan), dtype=bool)

    eligible = planar >= params.min_range
    if not np.any(eligible):
        return mask

    max_range = planar[eligible].max()
    if max_range <= params.min_range:
        edges = np.array([params.min_range, params.min_range + 1.0])
        num_rings = 1
    else:
        num_rings = params.num_rings
        edges = np.linspace(params.min_range, max_range, num_rings + 1)
    ring = np.clip(np.searchsorted(edges, planar, side="right") - 1, 0, num_rings - 1)

    sector_width = 2.0 * np.pi / params.num_sectors
    azimuth = np.arctan2(xyz[:, 1], xyz[:, 0])
    sector = np.clip(((azimuth + np.pi) / sector_width).astype(np.int64),
                     0, params.num_sectors - 1)

    indices = np.flatnonzero(eligible)
    patch_of = ring[indices] * params.num_sectors + sector[indices]
    order = np.argsort(patch_of, kind="stable")
    indices = indices[order]
    patch_of = patch_of[order]
    bounds = np.searchsorted(patch_of, np.arange(num_rings * params.num_sectors + 1))

    planes: dict[int, tuple] = {}

    def _inherited(ring_idx: int, sector_idx: int):
        # nearest inner-ring patch with a plane: walk inward ring by ring,
        # preferring the angularly closest sector
        for inner in range(ring_idx - 1, -1, -1):
            best = None
            for s2 in range(params.num_sectors):
                plane = planes.get(inner * params.num_sectors + s2)
                if plane is None:
                    continue
                gap = abs(s2 - sector_idx)
                gap = min(gap, params.num_sectors - gap)
                if best is None or gap < best[0]:
                    best = (gap, plane)
            if best is not None:
                return best[1]
        return None

    for r in range(num_rings):
        for s in range(params.num_sectors):
            patch_id = r * params.num_sectors + s
            lo, hi = bounds[patch_id], bounds[patch_id + 1]
            if lo == hi:
                continue
            members = indices[lo:hi]
            plane = _fit_patch(xyz[members], params)
            if plane is None:
                plane = _inherited(r, s)
            else:
                planes[patch_id] = plane
            if plane is None:
                continue
            close = _plane_distance(xyz[members], plane) <= params.distance_threshold
            mask[members[close]] = True

    mask[planar < params.min_range] = False
    return mask
