"""Cross-window instance association via convex-hull Monte-Carlo IoU.

For every instance of the first scan of the next window, instances of the
last scan of the previous window are tried in ascending ID order; the first
hull pair whose estimated IoU exceeds the threshold donates its ID. Instances
are decimated to a point budget before hull construction, the IoU estimate
draws a fixed number of uniform samples in the joint bounding box, and both
scans must be registered into a common frame through their poses.

Monte-Carlo seeds derive deterministically from (seed, window index, both
instance IDs), so stitched outputs replay bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .core import InstanceLabeling, Scan, Sequence, transform_scan


class DegenerateGeometryError(ValueError):
    """Not enough non-coplanar points to form a 3-D hull."""


@dataclass(frozen=True)
class StitchParams:
    iou_threshold: float = 0.5
    mc_samples: int = 1000
    decimation_limit: int = 200

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must lie in (0, 1]")
        if self.mc_samples < 1 or self.decimation_limit < 4:
            raise ValueError("need at least 1 sample and a limit of >= 4 points")


@dataclass(frozen=True, eq=False)
class Hull3D:
    """Convex hull: vertices (subset of the input), outward triangles."""

    vertices: np.ndarray   # (V, 3)
    faces: np.ndarray      # (F, 3) indices into vertices, outward winding
    equations: np.ndarray  # (F, 4) outward normals and offsets: n.x + d <= 0 inside
    volume: float

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        slack = points @ self.equations[:, :3].T + self.equations[:, 3]
        return np.all(slack <= tol, axis=1)


def convex_hull(points) -> Hull3D:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] < 4:
        raise DegenerateGeometryError("need at least 4 points for a 3-D hull")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise DegenerateGeometryError(str(exc)) from exc

    vertex_ids = hull.vertices
    remap = np.full(pts.shape[0], -1, dtype=np.int64)
    remap[vertex_ids] = np.arange(vertex_ids.size)
    faces = remap[hull.simplices]
    # orient triangle winding to agree with qhull's outward facet normals
    verts = pts[vertex_ids]
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    normals = np.cross(b - a, c - a)
    flip = np.einsum("ij,ij->i", normals, hull.equations[:, :3]) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return Hull3D(verts, faces, hull.equations.copy(), float(hull.volume))


def decimate(points: np.ndarray, limit: int) -> np.ndarray:
    """Uniform stride subsampling down to at most ``limit`` points."""
    n = points.shape[0]
    if n <= limit:
        return points
    stride = math.ceil(n / limit)
    return points[::stride]


def mc_iou(a: Hull3D, b: Hull3D, samples: int, seed=0) -> float:
    """Monte-Carlo IoU of two hulls from uniform box samples.

    Samples landing in neither hull are discarded from numerator and
    denominator; if nothing hits either hull the estimate is 0.
    """
    lo = np.minimum(a.vertices.min(axis=0), b.vertices.min(axis=0))
    hi = np.maximum(a.vertices.max(axis=0), b.vertices.max(axis=0))
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, (samples, 3))
    in_a = a.contains(pts)
    in_b = b.contains(pts)
    union = int(np.sum(in_a | in_b))
    if union == 0:
        return 0.0
    return float(np.sum(in_a & in_b)) / union


def _instance_hulls(scan_world: Scan, labeling: InstanceLabeling,
                    params: StitchParams) -> dict[int, Hull3D]:
    hulls: dict[int, Hull3D] = {}
    for inst in labeling.instance_ids():
        pts = scan_world.xyz[labeling.ids == inst]
        try:
            hulls[int(inst)] = convex_hull(decimate(pts, params.decimation_limit))
        except DegenerateGeometryError:
            continue
    return hulls


def stitch_windows(labels_last: InstanceLabeling, scan_last: Scan,
                   labels_first: InstanceLabeling, scan_first: Scan,
                   params: StitchParams | None = None,
                   seed: int = 0, window_index: int = 0) -> dict[int, int]:
    """ID remapping for the next window from its boundary-scan hull overlaps.

    Returns only the matched instances; everything absent from the mapping
    keeps its own (window-fresh) ID.
    """
    if params is None:
        params = StitchParams()
    for scan in (scan_last, scan_first):
        if scan.pose is None:
            raise ValueError("stitching requires posed boundary scans")
    shared = set(int(v) for v in labels_last.instance_ids()) \
        & set(int(v) for v in labels_first.instance_ids())
    if shared:
        raise ValueError(f"windows share instance IDs {sorted(shared)[:5]}; "
                         "renumber one side before stitching")
    world_last = transform_scan(scan_last, scan_last.pose)
    world_first = transform_scan(scan_first, scan_first.pose)
    hulls_last = _instance_hulls(world_last, labels_last, params)
    hulls_first = _instance_hulls(world_first, labels_first, params)

    remap: dict[int, int] = {}
    for id_f in sorted(hulls_first):
        hull_f = hulls_first[id_f]
        for id_l in sorted(hulls_last):
            key = np.random.SeedSequence((seed, window_index, id_f, id_l))
            if mc_iou(hull_f, hulls_last[id_l], params.mc_samples, key) > params.iou_threshold:
                remap[id_f] = id_l
                break
    return remap


def apply_remap(labelings: list[InstanceLabeling], remap: dict[int, int]
                ) -> list[InstanceLabeling]:
    if not remap:
        return list(labelings)
    out = []
    for lab in labelings:
        ids = lab.ids.copy()
        for src, dst in remap.items():
            ids[lab.ids == np.uint32(src)] = np.uint32(dst)
        out.append(InstanceLabeling(ids))
    return out


def stitch_sequence(sequence: Sequence, labelings: list[InstanceLabeling],
                    window_scans: int, params: StitchParams | None = None,
                    seed: int = 0) -> list[InstanceLabeling]:
    """Sequentially stitch every pair of adjacent fixed-length windows."""
    if len(labelings) != len(sequence):
        raise ValueError("one labeling per scan is required")
    starts = list(range(0, len(sequence), window_scans))
    out = list(labelings[:window_scans])
    for w, start in enumerate(starts[1:], start=1):
        stop = min(start + window_scans, len(sequence))
        window = list(labelings[start:stop])
        remap = stitch_windows(out[start - 1], sequence.scans[start - 1],
                               window[0], sequence.scans[start],
                               params, seed=seed, window_index=w)
        out.extend(apply_remap(window, remap))
    return out
