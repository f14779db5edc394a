import numpy as np
import pytest

from lidar4d.core import InstanceLabeling, Pose, Scan
from lidar4d.stitch import (
    DegenerateGeometryError,
    apply_remap,
    convex_hull,
    decimate,
    mc_iou,
    stitch_sequence,
    stitch_windows,
)
from lidar4d.synth import ObjectSpec, SceneSpec, generate
from lidar4d.cluster4d import ClusterParams, cluster_sequence
from lidar4d.metrics import EvalPair, s_assoc_temporal

from oracles import box_overlap_volume

CUBE = np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])


def shifted_cube(dx=0.0, dy=0.0, dz=0.0):
    return CUBE + np.array([dx, dy, dz])


def test_hull_of_cube_corners():
    hull = convex_hull(CUBE)
    assert hull.vertices.shape[0] == 8
    assert abs(hull.volume - 1.0) < 1e-12
    assert sorted(map(tuple, hull.vertices)) == sorted(map(tuple, CUBE))


def test_hull_ignores_interior_points():
    rng = np.random.default_rng(0)
    interior = rng.uniform(0.2, 0.8, (50, 3))
    hull = convex_hull(np.vstack([CUBE, interior]))
    assert hull.vertices.shape[0] == 8
    assert abs(hull.volume - 1.0) < 1e-12


def test_hull_contains_all_inputs():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(50, 3))
    pts /= np.maximum(np.linalg.norm(pts, axis=1, keepdims=True), 1.0)
    hull = convex_hull(pts)
    assert hull.contains(pts, tol=1e-9).all()


def test_hull_faces_point_outward():
    hull = convex_hull(CUBE)
    centroid = hull.vertices.mean(axis=0)
    a = hull.vertices[hull.faces[:, 0]]
    b = hull.vertices[hull.faces[:, 1]]
    c = hull.vertices[hull.faces[:, 2]]
    normals = np.cross(b - a, c - a)
    outward = np.einsum("ij,ij->i", normals, a - centroid)
    assert np.all(outward > 0)


def test_hull_degenerate_inputs():
    with pytest.raises(DegenerateGeometryError):
        convex_hull(CUBE[:3])
    coplanar = np.column_stack([np.random.default_rng(2).random((10, 2)), np.zeros(10)])
    with pytest.raises(DegenerateGeometryError):
        convex_hull(coplanar)


def test_hull_volume_rigid_invariance():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(30, 3))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    moved = pts @ q.T + np.array([4.0, -2.0, 9.0])
    v1, v2 = convex_hull(pts).volume, convex_hull(moved).volume
    assert abs(v1 - v2) / v1 < 1e-9


def test_decimate_stride():
    pts = np.arange(450 * 3, dtype=float).reshape(450, 3)
    out = decimate(pts, 200)
    assert out.shape[0] <= 200
    assert np.array_equal(out[0], pts[0])
    assert np.array_equal(decimate(pts[:100], 200), pts[:100])


def test_mc_iou_identical_hulls_exactly_one():
    a = convex_hull(CUBE)
    b = convex_hull(CUBE.copy())
    for samples in (1, 10, 1000):
        assert mc_iou(a, b, samples, seed=0) == 1.0


def test_mc_iou_disjoint_exactly_zero():
    a = convex_hull(CUBE)
    b = convex_hull(shifted_cube(dx=5.0))
    assert mc_iou(a, b, 1000, seed=0) == 0.0


def test_mc_iou_half_overlap_slab():
    a = convex_hull(CUBE)
    b = convex_hull(shifted_cube(dz=0.5))
    inter = box_overlap_volume([0, 0, 0], [1, 1, 1], [0, 0, 0.5], [1, 1, 1.5])
    truth = inter / (2.0 - inter)
    assert abs(truth - 1.0 / 3.0) < 1e-12
    estimate = mc_iou(a, b, 10_000, seed=0)
    assert abs(estimate - truth) <= 0.05


def test_mc_iou_symmetric_and_deterministic():
    a = convex_hull(CUBE)
    b = convex_hull(shifted_cube(dx=0.3, dy=0.2))
    e1 = mc_iou(a, b, 500, seed=42)
    e2 = mc_iou(b, a, 500, seed=42)
    e3 = mc_iou(a, b, 500, seed=42)
    assert e1 == e2 == e3


def boundary_scans(offset=(0.0, 0.0, 0.0)):
    rng = np.random.default_rng(4)

    def box_points(center, n=80):
        pts = rng.uniform(-0.6, 0.6, (n, 3)) + np.asarray(center)
        return pts

    last_xyz = np.vstack([box_points((0.0, 0.0, 0.0)), box_points((6.0, 0.0, 0.0))])
    first_xyz = np.vstack([box_points((0.0, 0.0, 0.0)) + offset,
                           box_points((6.0, 0.0, 0.0)) + offset])
    ids_last = np.repeat(np.array([1, 2], dtype=np.uint32), 80)
    ids_first = np.repeat(np.array([11, 12], dtype=np.uint32), 80)
    make = lambda xyz, t: Scan(np.column_stack([xyz, np.zeros(len(xyz))]),
                               timestep=t, pose=Pose.identity())
    return (InstanceLabeling(ids_last), make(last_xyz, 0),
            InstanceLabeling(ids_first), make(first_xyz, 1))


def test_stitch_identical_scene_keeps_predecessor_ids():
    labels_l, scan_l, labels_f, scan_f = boundary_scans()
    remap = stitch_windows(labels_l, scan_l, labels_f, scan_f)
    assert remap == {11: 1, 12: 2}


def test_stitch_displaced_object_keeps_fresh_id():
    labels_l, scan_l, labels_f, scan_f = boundary_scans(offset=(30.0, 0.0, 0.0))
    remap = stitch_windows(labels_l, scan_l, labels_f, scan_f)
    assert remap == {}


def test_stitch_degenerate_instance_keeps_own_id():
    labels_l, scan_l, _, _ = boundary_scans()
    pts = np.column_stack([np.zeros((3, 3)), np.zeros(3)])
    scan_f = Scan(pts, timestep=1, pose=Pose.identity())
    labels_f = InstanceLabeling(np.full(3, 9, dtype=np.uint32))
    remap = stitch_windows(labels_l, scan_l, labels_f, scan_f)
    assert 9 not in remap


def test_stitch_rejects_colliding_id_spaces():
    labels_l, scan_l, _, scan_f = boundary_scans()
    with pytest.raises(ValueError):
        stitch_windows(labels_l, scan_l, labels_l, scan_f)


def test_stitch_deterministic_replay():
    labels_l, scan_l, labels_f, scan_f = boundary_scans(offset=(0.4, 0.0, 0.0))
    r1 = stitch_windows(labels_l, scan_l, labels_f, scan_f, seed=5)
    r2 = stitch_windows(labels_l, scan_l, labels_f, scan_f, seed=5)
    assert r1 == r2


def test_apply_remap():
    lab = InstanceLabeling(np.array([4, 5, 4], dtype=np.uint32))
    out = apply_remap([lab], {4: 1})
    assert out[0].ids.tolist() == [1, 5, 1]


def test_stitch_sequence_restores_temporal_score():
    spec = SceneSpec(objects=(ObjectSpec((1.2, 1.2, 1.0), (-3.0, 5.0, 0.0)),
                              ObjectSpec((1.2, 1.2, 1.0), (3.0, 5.0, 0.0))),
                     ground_points=0, points_per_object=60,
                     noise_sigma=0.01, seed=5)
    seq, gt, _ = generate(spec, 30, 10.0)
    masks = [np.zeros(len(s), bool) for s in seq.scans]
    params = ClusterParams(window_scans=10, min_cluster_size=100)
    windows = cluster_sequence(seq, params, masks=masks)
    stitched = stitch_sequence(seq, windows, 10)
    before = s_assoc_temporal(EvalPair.from_labelings(gt, windows))
    after = s_assoc_temporal(EvalPair.from_labelings(gt, stitched))
    assert after > before
    assert after > 0.95
