import numpy as np
import pytest

from lidar4d.density import (
    condense_tree,
    core_distances,
    hdbscan,
    mutual_reachability_linkage,
)

from oracles import brute_single_linkage_heights


def two_blobs(seed, n=400, spread=0.5, gap_factor=10.0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, spread, (n, 3))
    b = rng.normal(0.0, spread, (n, 3))
    b[:, 0] += gap_factor * spread * 2  # inter-blob gap ~10x the intra spread
    return np.vstack([a, b])


def blob_purity(labels, n):
    first, second = labels[:n], labels[n:]
    ok = 0
    for half in (first, second):
        assigned = half[half >= 0]
        if assigned.size:
            ok += np.max(np.bincount(assigned))
    return ok / labels.size


def test_two_blobs_recovered():
    pts = two_blobs(0)
    labels = hdbscan(pts, min_samples=1, min_cluster_size=300)
    assert set(labels.tolist()) == {0, 1}
    assert blob_purity(labels, 400) >= 0.99


def test_below_min_cluster_size_all_noise():
    rng = np.random.default_rng(1)
    labels = hdbscan(rng.normal(size=(50, 3)), min_samples=1, min_cluster_size=300)
    assert set(labels.tolist()) == {-1}


def test_merge_heights_match_brute_force():
    rng = np.random.default_rng(2)
    for trial in range(10):
        pts = rng.normal(size=(rng.integers(5, 40), rng.integers(2, 5)))
        mine = np.sort(mutual_reachability_linkage(pts, min_samples=1)[:, 2])
        oracle = brute_single_linkage_heights(pts)
        assert np.abs(mine - oracle).max() < 1e-9


def test_min_samples_one_reduces_to_raw_distance():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(30, 3))
    core = core_distances(pts, 1)
    dist = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
    np.fill_diagonal(dist, np.inf)
    assert np.allclose(core, dist.min(axis=1))


def test_permutation_equivariant_up_to_relabeling():
    pts = two_blobs(4, n=350)
    rng = np.random.default_rng(5)
    perm = rng.permutation(len(pts))
    base = hdbscan(pts, 1, 300)
    shuffled = hdbscan(pts[perm], 1, 300)
    # identical partitions: co-membership must agree for every pair
    back = np.empty_like(shuffled)
    back[perm] = shuffled
    for label in np.unique(base):
        members = base == label
        mapped = back[members]
        assert np.all(mapped == mapped[0])


def test_min_cluster_size_monotonicity():
    pts = two_blobs(6)
    assert set(hdbscan(pts, 1, 300).tolist()) == {0, 1}
    # lifting the threshold above both blob sizes removes both clusters
    assert set(hdbscan(pts, 1, 450).tolist()) == {-1}


def test_min_samples_raises_density_requirement():
    pts = two_blobs(7)
    labels = hdbscan(pts, min_samples=5, min_cluster_size=300)
    assert set(labels.tolist()) == {0, 1}


def test_tiny_inputs():
    assert hdbscan(np.empty((0, 3)), 1, 2).size == 0
    assert hdbscan(np.zeros((1, 3)), 1, 2).tolist() == [-1]
    with pytest.raises(ValueError):
        hdbscan(np.zeros((4, 3)), 0, 2)


def test_condensed_tree_sizes_consistent():
    pts = two_blobs(8, n=320)
    merges = mutual_reachability_linkage(pts, 1)
    tree = condense_tree(merges, len(pts), 300)
    # each point leaves exactly one cluster
    point_rows = tree.children < tree.num_points
    assert np.sort(tree.children[point_rows]).tolist() == list(range(len(pts)))
