"""Temporal association metrics and instance ground-truth construction.

All metrics operate on 4D segments: point memberships keyed by (scan, point)
pairs across the sequence. Intersections are exact (sorted-key merges), and
per-object terms accumulate through compensated summation so results do not
depend on iteration order.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    GROUND_ID,
    UNKNOWN_ID,
    InstanceLabeling,
    Segment4D,
    decode_members,
    encode_members,
)


class UndefinedMetricError(ValueError):
    """Metric requested over an empty ground-truth set."""


@dataclass(frozen=True, eq=False)
class EvalPair:
    """Ground-truth and predicted 4D segments under evaluation."""

    ground_truth: list
    predictions: list
    scans: frozenset | None = None

    @classmethod
    def from_labelings(cls, gt_labelings, pred_labelings) -> "EvalPair":
        if len(gt_labelings) != len(pred_labelings):
            raise ValueError("ground truth and predictions must cover the same scans")
        return cls(segments_from_labelings(gt_labelings),
                   segments_from_labelings(pred_labelings))


def segments_from_labelings(labelings) -> list[Segment4D]:
    """Group per-scan instance labels into 4D segments (reserved IDs dropped)."""
    members: dict[int, list] = defaultdict(list)
    for s, lab in enumerate(labelings):
        ids = lab.ids if isinstance(lab, InstanceLabeling) else np.asarray(lab)
        real = (ids != GROUND_ID) & (ids != UNKNOWN_ID)
        idx = np.flatnonzero(real)
        keys = encode_members(np.full(idx.size, s), idx)
        for inst in np.unique(ids[idx]):
            members[int(inst)].append(keys[ids[idx] == inst])
    return [Segment4D(inst, np.concatenate(parts))
            for inst, parts in sorted(members.items())]


def _intersection(a: Segment4D, b: Segment4D) -> int:
    return int(np.intersect1d(a.members, b.members, assume_unique=True).size)


def _iou(a: Segment4D, b: Segment4D, inter: int) -> float:
    return inter / (len(a) + len(b) - inter)


def s_assoc_temporal(pair: EvalPair) -> float:
    """Association score over full 4D segments.

    Mean over ground-truth objects g of (1/|g|) * sum over overlapping
    predictions s of |s intersect g| * IoU(s, g).
    """
    if not pair.ground_truth:
        raise UndefinedMetricError("association score needs ground-truth objects")
    per_object = []
    for g in pair.ground_truth:
        terms = []
        for s in pair.predictions:
            inter = _intersection(s, g)
            if inter:
                terms.append(inter * _iou(s, g, inter))
        per_object.append(math.fsum(terms) / len(g))
    return math.fsum(per_object) / len(pair.ground_truth)


def split_per_scan(segments) -> list[Segment4D]:
    """Break each 4D segment into one segment per scan it appears in."""
    out = []
    for seg in segments:
        scans, _ = decode_members(seg.members)
        for value in np.unique(scans):
            out.append(Segment4D(seg.id, seg.members[scans == value]))
    return out


def s_assoc_scanwise(pair: EvalPair) -> float:
    """Association score treating every scan's objects as separate instances."""
    return s_assoc_temporal(EvalPair(split_per_scan(pair.ground_truth),
                                     split_per_scan(pair.predictions),
                                     pair.scans))


def best_iou(pair: EvalPair) -> float:
    """Mean over ground truth of the best single-segment IoU (IoU*)."""
    if not pair.ground_truth:
        raise UndefinedMetricError("best IoU needs ground-truth objects")
    if not pair.predictions:
        return 0.0
    per_object = []
    for g in pair.ground_truth:
        best = 0.0
        for s in pair.predictions:
            inter = _intersection(s, g)
            if inter:
                best = max(best, _iou(s, g, inter))
        per_object.append(best)
    return math.fsum(per_object) / len(pair.ground_truth)


def filter_small(pair: EvalPair, min_points: int = 50) -> EvalPair:
    """Drop per-scan ground-truth fragments below a point count.

    Every scan where a ground-truth object shows fewer than ``min_points``
    points loses those points from evaluation; predictions are untouched.
    """
    if min_points < 0:
        raise ValueError("min_points must be non-negative")
    kept = []
    for g in pair.ground_truth:
        scans, _ = decode_members(g.members)
        values, counts = np.unique(scans, return_counts=True)
        good = values[counts >= min_points]
        mask = np.isin(scans, good)
        if np.any(mask):
            kept.append(Segment4D(g.id, g.members[mask]))
    return EvalPair(kept, list(pair.predictions), pair.scans)


@dataclass(frozen=True)
class BoxAnnotation:
    """A 7-DoF semantically-labeled box with a dataset-provided track identity."""

    center: tuple
    size: tuple
    yaw: float
    semantic_class: int
    track_id: int
    scan_index: int

    def __post_init__(self):
        if min(self.size) <= 0:
            raise ValueError("box sizes must be positive")


def _points_in_box(xyz: np.ndarray, box: BoxAnnotation) -> np.ndarray:
    local = xyz - np.asarray(box.center, dtype=np.float64)
    c, s = math.cos(-box.yaw), math.sin(-box.yaw)
    lx = c * local[:, 0] - s * local[:, 1]
    ly = s * local[:, 0] + c * local[:, 1]
    half = np.asarray(box.size, dtype=np.float64) / 2.0
    return (np.abs(lx) <= half[0]) & (np.abs(ly) <= half[1]) & (np.abs(local[:, 2]) <= half[2])


def build_instance_gt(scans, semantics, boxes, relax_radius: float = 1.0
                      ) -> list[Segment4D]:
    """Instance ground truth from boxes plus per-point semantic labels.

    Points inside a box of their own class join that box's track. Remaining
    points of the same class closer than ``relax_radius`` to an instance's
    points join the nearest such instance.
    """
    boxes_by_scan: dict[int, list[BoxAnnotation]] = defaultdict(list)
    class_of_track: dict[int, int] = {}
    for box in boxes:
        boxes_by_scan[box.scan_index].append(box)
        class_of_track[box.track_id] = box.semantic_class

    members: dict[int, list] = defaultdict(list)
    for s, scan in enumerate(scans):
        sem = np.asarray(semantics[s])
        xyz = scan.xyz
        assigned = np.full(len(scan), -1, dtype=np.int64)
        center_dist = np.full(len(scan), np.inf)
        for box in boxes_by_scan.get(s, ()):
            inside = _points_in_box(xyz, box) & (sem == box.semantic_class)
            dist = np.linalg.norm(xyz - np.asarray(box.center), axis=1)
            take = inside & (dist < center_dist)
            assigned[take] = box.track_id
            center_dist[take] = dist[take]

        # relaxation: nearest instance of the same class within relax_radius
        best_dist = np.full(len(scan), np.inf)
        best_track = np.full(len(scan), -1, dtype=np.int64)
        for track in sorted(set(assigned[assigned >= 0].tolist())):
            core = xyz[assigned == track]
            candidates = (assigned < 0) & (sem == class_of_track[track])
            if not np.any(candidates):
                continue
            dist, _ = cKDTree(core).query(xyz[candidates])
            idx = np.flatnonzero(candidates)
            closer = dist < best_dist[idx]
            best_dist[idx[closer]] = dist[closer]
            best_track[idx[closer]] = track
        relax = best_dist < relax_radius
        assigned[relax] = best_track[relax]

        for track in np.unique(assigned[assigned >= 0]):
            idx = np.flatnonzero(assigned == track)
            members[int(track)].extend(
                encode_members(np.full(idx.size, s), idx).tolist())

    return [Segment4D(track, np.asarray(keys, dtype=np.int64))
            for track, keys in sorted(members.items())]


def evaluate(pair: EvalPair, filter_points: int | None = None,
             scanwise: bool = True) -> dict[str, float]:
    """All association metrics for one pair, optionally with the small filter."""
    metrics = {
        "s_assoc_temporal": s_assoc_temporal(pair),
        "iou_star": best_iou(pair),
    }
    if scanwise:
        metrics["s_assoc_scanwise"] = s_assoc_scanwise(pair)
    if filter_points is not None:
        filtered = filter_small(pair, filter_points)
        if filtered.ground_truth:
            metrics["s_assoc_temporal_filtered"] = s_assoc_temporal(filtered)
            metrics["iou_star_filtered"] = best_iou(filtered)
            if scanwise:
                metrics["s_assoc_scanwise_filtered"] = s_assoc_scanwise(filtered)
    return metrics
