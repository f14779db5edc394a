"""Offline 4D pseudo-label generation.

A window of scans is registered into the frame of its first scan, each point
tagged with its integer timestep. The aggregate is thinned by a voxel-time
grid (one representative per occupied spatial voxel and time bucket), the
representatives are clustered by density in scaled (x, y, z, t) coordinates,
and every culled point inherits the cluster of its voxel representative.
Ground points map to GROUND_ID, noise and ego-radius points to UNKNOWN_ID.

Grid sampling operates on raw coordinates and raw timesteps; the z and time
scale factors only shape the clustering metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GROUND_ID, UNKNOWN_ID, InstanceLabeling, Scan, Sequence
from .density import hdbscan
from .ground import GroundParams, segment_ground


@dataclass(frozen=True)
class ClusterParams:
    window_scans: int = 40
    voxel_size: float = 0.05
    time_bucket: int = 5
    time_scale: float = 0.03
    z_scale: float = 1.0
    min_samples: int = 1
    min_cluster_size: int = 300
    ego_exclusion_radius: float = 2.5

    def __post_init__(self):
        if self.window_scans < 1 or self.time_bucket < 1:
            raise ValueError("window_scans and time_bucket must be >= 1")
        if self.voxel_size <= 0 or self.time_scale <= 0 or self.z_scale <= 0:
            raise ValueError("voxel size and scale factors must be positive")
        if self.min_samples < 1 or self.min_cluster_size < 2:
            raise ValueError("min_samples must be >= 1 and min_cluster_size >= 2")
        if self.ego_exclusion_radius < 0:
            raise ValueError("ego_exclusion_radius must be non-negative")


@dataclass(frozen=True, eq=False)
class AggregatedCloud:
    """Registered (x, y, z, t) points plus their (scan, point) origins."""

    points: np.ndarray  # (N, 4) float64
    origin: np.ndarray  # (N, 2) int64, scan index within window + point index

    def __len__(self) -> int:
        return self.points.shape[0]


def aggregate(window: list[Scan], masks, params: ClusterParams) -> AggregatedCloud:
    """Collect non-ground, non-ego points of a window in the first-scan frame."""
    if len(window) != len(masks):
        raise ValueError("one ground mask per scan is required")
    for scan in window:
        if scan.pose is None:
            raise ValueError("every scan in a clustering window needs a pose")
    to_first = window[0].pose.inverse()
    chunks, origins = [], []
    for i, (scan, mask) in enumerate(zip(window, masks)):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[0] != len(scan):
            raise ValueError("ground mask length must equal scan point count")
        planar = np.hypot(scan.xyz[:, 0], scan.xyz[:, 1])
        keep = ~mask & (planar >= params.ego_exclusion_radius)
        idx = np.flatnonzero(keep)
        if idx.size == 0:
            continue
        registered = to_first.apply(scan.pose.apply(scan.xyz[idx]))
        t = np.full(idx.size, float(scan.timestep))
        chunks.append(np.column_stack([registered, t]))
        origins.append(np.column_stack([np.full(idx.size, i, dtype=np.int64), idx]))
    if not chunks:
        return AggregatedCloud(np.empty((0, 4)), np.empty((0, 2), dtype=np.int64))
    return AggregatedCloud(np.vstack(chunks), np.vstack(origins))


def voxel_keys(cloud: AggregatedCloud, params: ClusterParams) -> np.ndarray:
    """Integer (x, y, z, t-bucket) cell key of every aggregated point."""
    keys = np.empty((len(cloud), 4), dtype=np.int64)
    keys[:, :3] = np.floor(cloud.points[:, :3] / params.voxel_size).astype(np.int64)
    keys[:, 3] = np.floor(cloud.points[:, 3] / params.time_bucket).astype(np.int64)
    return keys


def voxel_time_sample(cloud: AggregatedCloud, params: ClusterParams
                      ) -> tuple[AggregatedCloud, np.ndarray]:
    """One representative per occupied voxel-time cell.

    The representative is the cell's first point in scan order. Returns the
    thinned cloud and ``voxel_of``, mapping every original point to the index
    of its representative in the thinned cloud.
    """
    if len(cloud) == 0:
        raise ValueError("cannot sample an empty aggregated cloud")
    _, inverse = np.unique(voxel_keys(cloud, params), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    first = np.full(inverse.max() + 1, len(cloud), dtype=np.int64)
    np.minimum.at(first, inverse, np.arange(len(cloud), dtype=np.int64))
    order = np.argsort(first, kind="stable")  # representatives in scan order
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    reps = first[order]
    sampled = AggregatedCloud(cloud.points[reps], cloud.origin[reps])
    return sampled, rank[inverse]


def clustering_coordinates(cloud: AggregatedCloud, params: ClusterParams) -> np.ndarray:
    coords = cloud.points.copy()
    coords[:, 2] *= params.z_scale
    coords[:, 3] *= params.time_scale
    return coords


def cluster_window(window: list[Scan], masks, params: ClusterParams
                   ) -> list[InstanceLabeling]:
    """Label every point of a window: instances, GROUND_ID, or UNKNOWN_ID."""
    labels = [np.full(len(scan), UNKNOWN_ID, dtype=np.uint32) for scan in window]
    for arr, mask in zip(labels, masks):
        arr[np.asarray(mask, dtype=bool)] = np.uint32(GROUND_ID)

    cloud = aggregate(window, masks, params)
    if len(cloud):
        sampled, voxel_of = voxel_time_sample(cloud, params)
        rep_clusters = hdbscan(clustering_coordinates(sampled, params),
                               params.min_samples, params.min_cluster_size)
        point_clusters = rep_clusters[voxel_of]
        ids = np.where(point_clusters >= 0,
                       (point_clusters + 1).astype(np.uint32),
                       np.uint32(UNKNOWN_ID))
        scan_idx, point_idx = cloud.origin[:, 0], cloud.origin[:, 1]
        for i in range(len(window)):
            sel = scan_idx == i
            labels[i][point_idx[sel]] = ids[sel]
    return [InstanceLabeling(arr) for arr in labels]


def _offset_ids(labelings: list[InstanceLabeling], offset: int) -> list[InstanceLabeling]:
    if offset == 0:
        return labelings
    out = []
    for lab in labelings:
        ids = lab.ids.copy()
        real = (ids != GROUND_ID) & (ids != UNKNOWN_ID)
        ids[real] += np.uint32(offset)
        out.append(InstanceLabeling(ids))
    return out


def cluster_sequence(sequence: Sequence, params: ClusterParams,
                     ground_params: GroundParams | None = None,
                     masks=None, threads: int = 1) -> list[InstanceLabeling]:
    """Cluster a sequence in non-overlapping windows of ``window_scans``.

    A tail window shorter than ``window_scans`` is clustered as-is. Instance
    IDs are offset per window so they never collide across windows.
    """
    if masks is None:
        masks = [segment_ground(scan, ground_params) for scan in sequence.scans]
    starts = list(range(0, len(sequence), params.window_scans))
    jobs = [(sequence.scans[s:s + params.window_scans], masks[s:s + params.window_scans])
            for s in starts]
    if threads > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            window_labels = list(pool.map(lambda j: cluster_window(*j, params), jobs))
    else:
        window_labels = [cluster_window(scans, m, params) for scans, m in jobs]

    out: list[InstanceLabeling] = []
    offset = 0
    for labs in window_labels:
        shifted = _offset_ids(labs, offset)
        top = max((int(l.instance_ids().max()) for l in shifted if l.instance_ids().size),
                  default=offset)
        offset = max(offset, top)
        out.extend(shifted)
    return out
