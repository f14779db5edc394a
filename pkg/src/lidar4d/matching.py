"""Query-object matching: affinities, cost matrices, assignment and losses.

Conventions. The affinity A is sigmoid(point feature . query embedding), an
(N_p, N_q) matrix. The assignment matrix G is (N_p, N_o) binary, one column
per pseudo-label object. Cost matrices are (N_q, N_o) and in *loss* form so
that a cost-minimizing assignment is coherent: the Dice term is one minus the
Dice coefficient, the BCE term is the per-point mean negative log-likelihood.
The raw Dice coefficient is exposed separately.

Losses are differentiated analytically through the linear toy feature model;
the assignment and, in temporal mode, the target distributions H_t are held
constant (stop-gradient), so finite differences of the loss with those inputs
frozen must reproduce the returned gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Scan

AFFINITY_EPS = 1e-7

DEFAULT_LAMBDA_DICE = 2.0
DEFAULT_LAMBDA_BCE = 5.0
DEFAULT_LAMBDA_CONS = 1.0


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray) -> np.ndarray:
    shifted = np.exp(x - np.max(x))
    return shifted / shifted.sum()


def affinity(features: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """sigmoid(features @ queries.T), clamped into the open unit interval."""
    features = np.asarray(features, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if features.ndim != 2 or queries.ndim != 2 or features.shape[1] != queries.shape[1]:
        raise ValueError("features and queries must be 2-D with a shared dim")
    return np.clip(sigmoid(features @ queries.T), AFFINITY_EPS, 1.0 - AFFINITY_EPS)


def _check_affinity_assignment(a: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if a.ndim != 2 or g.ndim != 2 or a.shape[0] != g.shape[0]:
        raise ValueError("affinity and assignment matrices must share the point axis")
    return a, g


def dice_coefficient(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """(N_q, N_o) soft Dice overlap: 2 sum(A G) / (sum A^2 + sum G^2)."""
    a, g = _check_affinity_assignment(a, g)
    if np.any(g.sum(axis=0) == 0):
        raise ValueError("assignment matrix has an object with zero points")
    num = 2.0 * (a.T @ g)
    den = (a ** 2).sum(axis=0)[:, None] + (g ** 2).sum(axis=0)[None, :]
    return num / den


def dice_loss(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    return 1.0 - dice_coefficient(a, g)


def bce_loss(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """(N_q, N_o) per-point mean negative log-likelihood of G under A."""
    a, g = _check_affinity_assignment(a, g)
    a = np.clip(a, AFFINITY_EPS, 1.0 - AFFINITY_EPS)
    log_a = np.log(a)
    log_na = np.log1p(-a)
    return -(log_a.T @ g + log_na.T @ (1.0 - g)) / a.shape[0]


@dataclass(frozen=True, eq=False)
class CostMatrices:
    c_dice: np.ndarray
    c_bce: np.ndarray
    c: np.ndarray
    lambda_dice: float
    lambda_bce: float


def cost_matrices(a: np.ndarray, g: np.ndarray,
                  lambda_dice: float = DEFAULT_LAMBDA_DICE,
                  lambda_bce: float = DEFAULT_LAMBDA_BCE) -> CostMatrices:
    c_dice = dice_loss(a, g)
    c_bce = bce_loss(a, g)
    return CostMatrices(c_dice, c_bce, lambda_dice * c_dice + lambda_bce * c_bce,
                        lambda_dice, lambda_bce)


@dataclass(frozen=True)
class MatchResult:
    """Injective object -> query assignment and its total cost."""

    pairs: dict[int, int]
    total_cost: float

    def __len__(self) -> int:
        return len(self.pairs)


def _solve_square_assignment(cost: np.ndarray) -> np.ndarray:
    """Shortest augmenting path assignment; returns column of each row."""
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            reduced = cost[i0 - 1, :] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidate = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidate)) + 1
            delta = candidate[j1 - 1]
            u[row_of_col[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row


def hungarian(cost: np.ndarray) -> MatchResult:
    """Minimum-cost injective assignment of min(N_q, N_o) object-query pairs.

    Rectangular inputs are padded to square with a constant exceeding every
    real cost, which forces all pairs on the short side to be matched.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    num_queries, num_objects = c.shape
    if num_queries == 0 or num_objects == 0:
        return MatchResult({}, 0.0)
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix entries must be finite")
    n = max(num_queries, num_objects)
    padded = np.full((n, n), c.max() + 1.0)
    padded[:num_queries, :num_objects] = c
    col_of_row = _solve_square_assignment(padded)
    pairs = {int(o): j for j, o in enumerate(col_of_row)
             if j < num_queries and o < num_objects}
    total = sum(float(c[pairs[o], o]) for o in sorted(pairs))
    return MatchResult(pairs, total)


def object_score_logits(scores: np.ndarray, g: np.ndarray) -> np.ndarray:
    """(N_o, N_q) per-object mean of pre-sigmoid scores over member points."""
    scores, g = _check_affinity_assignment(scores, g)
    counts = g.sum(axis=0)
    if np.any(counts == 0):
        raise ValueError("object has no points in this scan")
    return (g.T @ scores) / counts[:, None]


@dataclass(frozen=True, eq=False)
class ConsistencyDistributions:
    """Per-object assignment probabilities over queries at t and t+1."""

    h_t: np.ndarray
    h_t1: np.ndarray

    def __post_init__(self):
        for h in (self.h_t, self.h_t1):
            if np.any(h < 0) or abs(h.sum() - 1.0) > 1e-9:
                raise ValueError("distributions must be non-negative and sum to 1")


def consistency_distributions(scores_t: np.ndarray, scores_t1: np.ndarray,
                              g_t: np.ndarray, g_t1: np.ndarray,
                              obj: int) -> ConsistencyDistributions:
    """Softmax over queries of the object's mean pre-sigmoid scores, per scan.

    ``scores_*`` are the raw (N_p, N_q) scalar-product matrices, not
    affinities; the sigmoid is deliberately absent from this path.
    """
    g_t = np.asarray(g_t, dtype=np.float64)
    g_t1 = np.asarray(g_t1, dtype=np.float64)
    if g_t[:, obj].sum() == 0 or g_t1[:, obj].sum() == 0:
        raise ValueError(f"object {obj} is absent from one of the scans")
    h_t = softmax(object_score_logits(scores_t, g_t[:, [obj]])[0])
    h_t1 = softmax(object_score_logits(scores_t1, g_t1[:, [obj]])[0])
    return ConsistencyDistributions(h_t, h_t1)


def consistency_loss(dists: ConsistencyDistributions) -> float:
    """KL divergence from the t+1 distribution to the (frozen) t distribution."""
    p, q = dists.h_t, dists.h_t1
    active = p > 0
    return float(np.sum(p[active] * (np.log(p[active]) - np.log(q[active]))))


def consistency_loss_grad_logits(h_t: np.ndarray, logits_t1: np.ndarray) -> np.ndarray:
    """d KL(h_t || softmax(l)) / d l with h_t under stop-gradient."""
    return softmax(logits_t1) - h_t


def cross_entropy_grad_logits(h_t: np.ndarray, logits_t1: np.ndarray) -> np.ndarray:
    """Gradient of -sum(h_t * log softmax(l)) via the explicit softmax Jacobian."""
    q = softmax(logits_t1)
    d_loss_dq = -h_t / q
    jac = np.diag(q) - np.outer(q, q)
    return jac.T @ d_loss_dq


@dataclass(frozen=True, eq=False)
class ToyFeatureModel:
    """Linear stand-in for a point-feature backbone.

    Maps raw point attributes (x, y, z, range-to-sensor, intensity) through a
    weight matrix to D-dimensional features; carries the query embeddings as a
    second parameter block. Only used to verify the loss machinery end to end.
    """

    weights: np.ndarray  # (5, D)
    queries: np.ndarray  # (N_q, D)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        q = np.asarray(self.queries, dtype=np.float64)
        if w.shape[0] != 5 or w.ndim != 2 or q.ndim != 2 or q.shape[1] != w.shape[1]:
            raise ValueError("weights must be (5, D) and queries (N_q, D)")
        if w.shape[1] < 2:
            raise ValueError("feature dimension must be >= 2")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(q))):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "queries", q)

    @classmethod
    def seeded(cls, num_queries: int, dim: int, seed: int = 0,
               scale: float = 0.5) -> "ToyFeatureModel":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, scale, (5, dim)),
                   rng.normal(0.0, scale, (num_queries, dim)))

    @staticmethod
    def point_attributes(scan: Scan) -> np.ndarray:
        xyz = scan.xyz
        rng = np.linalg.norm(xyz, axis=1)
        return np.column_stack([xyz, rng, scan.intensity])

    def features(self, scan: Scan) -> np.ndarray:
        return self.point_attributes(scan) @ self.weights

    def scores(self, scan: Scan) -> np.ndarray:
        return self.features(scan) @ self.queries.T


@dataclass(frozen=True, eq=False)
class GlobalLossResult:
    loss: float
    grad_weights: np.ndarray
    grad_queries: np.ndarray
    match: MatchResult
    h_targets: Optional[np.ndarray] = None  # (N_o, N_q) frozen t distributions


def _matched_cost_gradient(a: np.ndarray, g: np.ndarray, match: MatchResult,
                           lambda_dice: float, lambda_bce: float
                           ) -> tuple[float, np.ndarray]:
    """Loss over matched pairs and its gradient w.r.t. the affinity matrix."""
    num_points = a.shape[0]
    scale = 1.0 / len(match)
    c_dice = dice_loss(a, g)
    c_bce = bce_loss(a, g)
    loss = 0.0
    grad_a = np.zeros_like(a)
    for o in sorted(match.pairs):
        j = match.pairs[o]
        loss += scale * (lambda_dice * c_dice[j, o] + lambda_bce * c_bce[j, o])
        col_a = a[:, j]
        col_g = g[:, o]
        num = 2.0 * float(col_a @ col_g)
        den = float((col_a ** 2).sum() + (col_g ** 2).sum())
        d_dice = (2.0 * col_a * num - 2.0 * col_g * den) / den ** 2
        d_bce = -(col_g / col_a - (1.0 - col_g) / (1.0 - col_a)) / num_points
        grad_a[:, j] += scale * (lambda_dice * d_dice + lambda_bce * d_bce)
    return loss, grad_a


def _backprop_scores(model: ToyFeatureModel, attrs: np.ndarray,
                     grad_scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    feats = attrs @ model.weights
    grad_feats = grad_scores @ model.queries
    grad_weights = attrs.T @ grad_feats
    grad_queries = grad_scores.T @ feats
    return grad_weights, grad_queries


def global_loss(model: ToyFeatureModel, scans, assignments, mode: str = "scanwise",
                lambda_dice: float = DEFAULT_LAMBDA_DICE,
                lambda_bce: float = DEFAULT_LAMBDA_BCE,
                lambda_cons: float = DEFAULT_LAMBDA_CONS,
                match: MatchResult | None = None,
                h_targets: np.ndarray | None = None) -> GlobalLossResult:
    """Matched-pair training loss and its gradients w.r.t. the toy model.

    ``mode="scanwise"``: ``scans`` is one Scan and ``assignments`` one
    (N_p, N_o) matrix. ``mode="temporal"``: both are (t, t+1) pairs sharing
    object columns; costs and the assignment come from the second scan only,
    and each object additionally pays the KL consistency term.

    The Hungarian match and the t distributions are treated as constants; pass
    ``match``/``h_targets`` from a previous call to evaluate the same frozen
    objective at perturbed parameters.
    """
    if mode == "scanwise":
        scan, g = scans, np.asarray(assignments, dtype=np.float64)
        attrs = model.point_attributes(scan)
        scores = (attrs @ model.weights) @ model.queries.T
        a = np.clip(sigmoid(scores), AFFINITY_EPS, 1.0 - AFFINITY_EPS)
        if match is None:
            match = hungarian(cost_matrices(a, g, lambda_dice, lambda_bce).c)
        if len(match) == 0:
            raise ValueError("nothing to match: empty query or object set")
        loss, grad_a = _matched_cost_gradient(a, g, match, lambda_dice, lambda_bce)
        grad_scores = grad_a * _sigmoid_grad(scores)
        gw, gq = _backprop_scores(model, attrs, grad_scores)
        return GlobalLossResult(loss, gw, gq, match)

    if mode != "temporal":
        raise ValueError(f"unknown mode: {mode!r}")

    (scan_t, scan_t1) = scans
    g_t = np.asarray(assignments[0], dtype=np.float64)
    g_t1 = np.asarray(assignments[1], dtype=np.float64)
    if g_t.shape[1] != g_t1.shape[1]:
        raise ValueError("temporal mode needs matching object columns")
    if np.any(g_t.sum(axis=0) == 0) or np.any(g_t1.sum(axis=0) == 0):
        raise ValueError("every object must have points in both scans")

    attrs_t1 = model.point_attributes(scan_t1)
    scores_t1 = (attrs_t1 @ model.weights) @ model.queries.T
    a_t1 = np.clip(sigmoid(scores_t1), AFFINITY_EPS, 1.0 - AFFINITY_EPS)
    if match is None:
        match = hungarian(cost_matrices(a_t1, g_t1, lambda_dice, lambda_bce).c)
    if len(match) == 0:
        raise ValueError("nothing to match: empty query or object set")
    if h_targets is None:
        scores_t = model.scores(scan_t)
        h_targets = np.stack([softmax(row)
                              for row in object_score_logits(scores_t, g_t)])

    loss, grad_a = _matched_cost_gradient(a_t1, g_t1, match, lambda_dice, lambda_bce)
    grad_scores = grad_a * _sigmoid_grad(scores_t1)

    scale = 1.0 / len(match)
    logits_t1 = object_score_logits(scores_t1, g_t1)
    for o in sorted(match.pairs):
        h_t = h_targets[o]
        h_t1 = softmax(logits_t1[o])
        loss += scale * lambda_cons * consistency_loss(
            ConsistencyDistributions(h_t, h_t1))
        member = g_t1[:, o] > 0
        per_point = scale * lambda_cons * (h_t1 - h_t) / member.sum()
        grad_scores[member] += per_point

    gw, gq = _backprop_scores(model, attrs_t1, grad_scores)
    return GlobalLossResult(loss, gw, gq, match, h_targets=h_targets)


def _sigmoid_grad(scores: np.ndarray) -> np.ndarray:
    raw = sigmoid(scores)
    grad = raw * (1.0 - raw)
    grad[(raw < AFFINITY_EPS) | (raw > 1.0 - AFFINITY_EPS)] = 0.0
    return grad
