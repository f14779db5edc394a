"""Hierarchical density clustering on point sets.

The pipeline is the classic one:

1. core distance of each point = distance to its ``min_samples``-th nearest
   other point (exact, via a k-d tree);
2. mutual reachability distance between a and b =
   ``max(core(a), core(b), d(a, b))``; with ``min_samples = 1`` this reduces
   to the raw Euclidean distance;
3. minimum spanning tree of the complete mutual-reachability graph (Prim's
   algorithm with on-the-fly distances, O(n^2) time and O(n) memory);
4. single-linkage hierarchy from the sorted MST edges;
5. condensation of the hierarchy by ``min_cluster_size``;
6. excess-of-mass cluster selection on the condensed tree.

The root cluster (the full data set) is never selected, so input whose only
stable cluster is the whole set comes back as all noise. Noise points are
labeled -1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


def core_distances(points: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance from each point to its min_samples-th nearest other point."""
    n = points.shape[0]
    k = min(min_samples, n - 1)
    if k < 1:
        return np.zeros(n)
    dist, _ = cKDTree(points).query(points, k=k + 1)
    return dist[:, k]


def mutual_reachability_mst(points: np.ndarray, core: np.ndarray) -> np.ndarray:
    """Prim's MST over mutual reachability; rows are (a, b, weight)."""
    n = points.shape[0]
    edges = np.empty((max(n - 1, 0), 3))
    if n < 2:
        return edges
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    best_src = np.zeros(n, dtype=np.int64)
    current = 0
    in_tree[0] = True
    for k in range(n - 1):
        delta = points - points[current]
        dist = np.sqrt(np.einsum("ij,ij->i", delta, delta))
        reach = np.maximum(dist, np.maximum(core, core[current]))
        improved = (reach < best) & ~in_tree
        best[improved] = reach[improved]
        best_src[improved] = current
        candidate = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(candidate))
        edges[k, 0] = best_src[nxt]
        edges[k, 1] = nxt
        edges[k, 2] = candidate[nxt]
        in_tree[nxt] = True
        current = nxt
    return edges


def single_linkage(edges: np.ndarray, n: int) -> np.ndarray:
    """Union-find agglomeration of sorted MST edges.

    Returns an (n-1, 4) merge table: child node a, child node b, merge height,
    merged size. Leaves are 0..n-1; merge k creates node n+k.
    """
    order = np.argsort(edges[:, 2], kind="stable")
    parent = list(range(n))
    label = list(range(n))
    size = [1] * n

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    merges = np.empty((max(n - 1, 0), 4))
    for k, e in enumerate(order):
        a, b, w = int(edges[e, 0]), int(edges[e, 1]), edges[e, 2]
        ra, rb = find(a), find(b)
        merges[k] = (label[ra], label[rb], w, size[ra] + size[rb])
        parent[rb] = ra
        label[ra] = n + k
        size[ra] = int(merges[k, 3])
    return merges


def mutual_reachability_linkage(points, min_samples: int = 1) -> np.ndarray:
    """Convenience: merge table of the mutual-reachability single linkage."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array")
    core = core_distances(pts, min_samples)
    return single_linkage(mutual_reachability_mst(pts, core), pts.shape[0])


@dataclass(frozen=True)
class CondensedTree:
    """Flattened condensed hierarchy; cluster IDs start at num_points."""

    parents: np.ndarray
    children: np.ndarray
    lambdas: np.ndarray
    sizes: np.ndarray
    num_points: int


def condense_tree(merges: np.ndarray, n: int, min_cluster_size: int) -> CondensedTree:
    """Prune the single-linkage hierarchy by minimum cluster size.

    Splits where both sides reach ``min_cluster_size`` create new cluster
    nodes; smaller sides fall out of their parent point by point at the split
    density. When both sides are too small the parent's remaining points all
    leave at that density.
    """
    total = 2 * n - 1
    left = np.full(total, -1, dtype=np.int64)
    right = np.full(total, -1, dtype=np.int64)
    count = np.ones(total, dtype=np.int64)
    height = np.zeros(total)
    for k in range(n - 1):
        node = n + k
        left[node] = int(merges[k, 0])
        right[node] = int(merges[k, 1])
        height[node] = merges[k, 2]
        count[node] = int(merges[k, 3])

    def leaves_under(start: int) -> list[int]:
        out, stack = [], [start]
        while stack:
            node = stack.pop()
            if node < n:
                out.append(node)
            else:
                stack.append(left[node])
                stack.append(right[node])
        return out

    parents: list[int] = []
    children: list[int] = []
    lambdas: list[float] = []
    sizes: list[int] = []

    def emit(parent: int, child: int, lam: float, sz: int) -> None:
        parents.append(parent)
        children.append(child)
        lambdas.append(lam)
        sizes.append(sz)

    root = total - 1
    relabel = {root: n}
    next_label = n + 1
    stack = [root]
    while stack:
        node = stack.pop()
        if node < n:
            continue
        lam = np.inf if height[node] <= 0 else 1.0 / height[node]
        kids = (left[node], right[node])
        big = [count[c] >= min_cluster_size for c in kids]
        if all(big):
            for child in kids:
                relabel[child] = next_label
                emit(relabel[node], next_label, lam, int(count[child]))
                next_label += 1
                stack.append(child)
        elif not any(big):
            for child in kids:
                for leaf in leaves_under(child):
                    emit(relabel[node], leaf, lam, 1)
        else:
            survivor, casualty = (kids[0], kids[1]) if big[0] else (kids[1], kids[0])
            relabel[survivor] = relabel[node]
            for leaf in leaves_under(casualty):
                emit(relabel[node], leaf, lam, 1)
            stack.append(survivor)

    return CondensedTree(np.array(parents, dtype=np.int64),
                         np.array(children, dtype=np.int64),
                         np.array(lambdas),
                         np.array(sizes, dtype=np.int64),
                         n)


def _stabilities(tree: CondensedTree) -> dict[int, float]:
    births: dict[int, float] = {tree.num_points: 0.0}
    cluster_rows = tree.children >= tree.num_points
    for child, lam in zip(tree.children[cluster_rows], tree.lambdas[cluster_rows]):
        births[int(child)] = float(lam)
    stability = {c: 0.0 for c in births}
    for parent, lam, sz in zip(tree.parents, tree.lambdas, tree.sizes):
        stability[int(parent)] += (float(lam) - births[int(parent)]) * int(sz)
    return stability


def extract_clusters(tree: CondensedTree) -> np.ndarray:
    """Excess-of-mass selection; returns per-point labels, noise = -1."""
    n = tree.num_points
    labels = np.full(n, -1, dtype=np.int64)
    if tree.parents.size == 0:
        return labels
    stability = _stabilities(tree)
    cluster_rows = tree.children >= n
    cluster_parent = {int(c): int(p)
                      for c, p in zip(tree.children[cluster_rows], tree.parents[cluster_rows])}
    children_of: dict[int, list[int]] = {}
    for child, parent in cluster_parent.items():
        children_of.setdefault(parent, []).append(child)

    root = n
    selected = {c: True for c in stability if c != root}
    running = dict(stability)
    for node in sorted(selected, reverse=True):
        subtree = sum(running[c] for c in children_of.get(node, ()))
        if children_of.get(node) and subtree > running[node]:
            selected[node] = False
            running[node] = subtree
        else:
            stack = list(children_of.get(node, ()))
            while stack:
                below = stack.pop()
                selected[below] = False
                stack.extend(children_of.get(below, ()))

    chosen = sorted(c for c, keep in selected.items() if keep)
    if not chosen:
        return labels
    label_of = {c: i for i, c in enumerate(chosen)}

    point_rows = tree.children < n
    for point, parent in zip(tree.children[point_rows], tree.parents[point_rows]):
        node = int(parent)
        while node != root and node not in label_of:
            node = cluster_parent[node]
        if node in label_of:
            labels[int(point)] = label_of[node]
    return labels


def hdbscan(points, min_samples: int = 1, min_cluster_size: int = 2) -> np.ndarray:
    """Cluster points; returns per-point cluster IDs with noise as -1."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if min_samples < 1 or min_cluster_size < 2:
        raise ValueError("min_samples must be >= 1 and min_cluster_size >= 2")
    n = pts.shape[0]
    if n < 2:
        return np.full(n, -1, dtype=np.int64)
    core = core_distances(pts, min_samples)
    merges = single_linkage(mutual_reachability_mst(pts, core), n)
    tree = condense_tree(merges, n, min_cluster_size)
    return extract_clusters(tree)
