import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidar4d.core import Scan
from lidar4d.matching import (
    ConsistencyDistributions,
    ToyFeatureModel,
    affinity,
    bce_loss,
    consistency_distributions,
    consistency_loss,
    consistency_loss_grad_logits,
    cost_matrices,
    cross_entropy_grad_logits,
    dice_coefficient,
    dice_loss,
    global_loss,
    hungarian,
    softmax,
)

from oracles import brute_assignment, central_difference


# -- affinity ------------------------------------------------------------------

def test_affinity_zero_features_is_half():
    a = affinity(np.zeros((3, 4)), np.ones((5, 4)))
    assert np.all(a == 0.5)


def test_affinity_unit_vectors():
    e = np.array([[1.0, 0.0]])
    a = affinity(e, e)
    assert abs(a[0, 0] - 1.0 / (1.0 + math.exp(-1.0))) < 1e-12


def test_affinity_matches_entrywise_formula():
    rng = np.random.default_rng(0)
    feats, queries = rng.normal(size=(4, 3)), rng.normal(size=(2, 3))
    a = affinity(feats, queries)
    for i in range(4):
        for j in range(2):
            expected = 1.0 / (1.0 + math.exp(-float(np.dot(feats[i], queries[j]))))
            assert abs(a[i, j] - expected) < 1e-12


def test_affinity_shape_mismatch():
    with pytest.raises(ValueError):
        affinity(np.zeros((2, 3)), np.zeros((2, 4)))


# -- dice / bce ------------------------------------------------------------------

def test_dice_perfect_overlap():
    g = np.array([[1.0], [0.0], [1.0]])
    assert abs(dice_coefficient(g, g)[0, 0] - 1.0) < 1e-12


def test_dice_hand_evaluated():
    a = np.full((2, 1), 0.5)
    g = np.array([[1.0], [0.0]])
    # 2 * 0.5 / (0.25 + 0.25 + 1)
    assert abs(dice_coefficient(a, g)[0, 0] - 2.0 / 3.0) < 1e-12


def test_dice_disjoint_supports_near_zero():
    a = np.array([[1e-9], [1e-9], [0.999]])
    g = np.array([[1.0], [1.0], [0.0]])
    assert dice_coefficient(a, g)[0, 0] < 1e-6


def test_dice_degenerate_object_error():
    with pytest.raises(ValueError):
        dice_coefficient(np.full((2, 1), 0.5), np.zeros((2, 1)))


def test_bce_uniform_prediction_is_ln2():
    a = np.full((4, 2), 0.5)
    g = np.array([[1.0, 0], [0, 1], [1, 0], [0, 0]])
    assert np.allclose(bce_loss(a, g), math.log(2.0), atol=1e-12)


def test_bce_sharp_match():
    g = np.array([[1.0], [0.0], [1.0]])
    a = np.where(g == 1.0, 0.99, 0.01)
    assert np.allclose(bce_loss(a, g)[0, 0], -math.log(0.99), atol=1e-12)


def test_bce_matches_direct_formula():
    rng = np.random.default_rng(1)
    a = rng.uniform(0.05, 0.95, (5, 2))
    g = (rng.random((5, 2)) < 0.5).astype(float)
    got = bce_loss(a, g)
    for j in range(2):
        for o in range(2):
            acc = 0.0
            for i in range(5):
                acc += g[i, o] * math.log(a[i, j]) + (1 - g[i, o]) * math.log(1 - a[i, j])
            assert abs(got[j, o] - (-acc / 5)) < 1e-12


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1))
def test_dice_bce_point_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.05, 0.95, (6, 3))
    owner = rng.integers(0, 2, 6)
    owner[:2] = (0, 1)  # keep both object columns populated
    g = np.zeros((6, 2))
    g[np.arange(6), owner] = 1.0
    perm = rng.permutation(6)
    assert np.allclose(dice_loss(a, g), dice_loss(a[perm], g[perm]), atol=1e-12)
    assert np.allclose(bce_loss(a, g), bce_loss(a[perm], g[perm]), atol=1e-12)


def test_cost_matrices_combination():
    rng = np.random.default_rng(2)
    a = rng.uniform(0.1, 0.9, (5, 3))
    g = np.eye(5)[:, :2]
    cm = cost_matrices(a, g, lambda_dice=2.0, lambda_bce=5.0)
    assert np.allclose(cm.c, 2.0 * cm.c_dice + 5.0 * cm.c_bce)


# -- hungarian -------------------------------------------------------------------

def test_hungarian_identity_matrix():
    c = 1.0 - np.eye(4)
    res = hungarian(c)
    assert res.pairs == {0: 0, 1: 1, 2: 2, 3: 3}
    assert res.total_cost == 0.0


def test_hungarian_empty():
    res = hungarian(np.zeros((0, 3)))
    assert res.pairs == {} and res.total_cost == 0.0


def test_hungarian_matches_brute_force_small():
    rng = np.random.default_rng(3)
    for _ in range(100):
        shape = rng.integers(1, 6, 2)
        c = rng.random(tuple(shape))
        got = hungarian(c)
        cost, _ = brute_assignment(c)
        assert got.total_cost == cost
        assert len(got) == min(shape)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-5, 5, allow_nan=False))
def test_hungarian_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    c = rng.random((4, 4))
    base = hungarian(c)
    shifted = hungarian(c + shift)
    assert shifted.pairs == base.pairs
    assert abs(shifted.total_cost - (base.total_cost + 4 * shift)) < 1e-9


def test_hungarian_injective_rectangular():
    rng = np.random.default_rng(4)
    res = hungarian(rng.random((3, 7)))
    assert len(res.pairs) == 3
    assert len(set(res.pairs.values())) == 3


# -- consistency -----------------------------------------------------------------

def test_consistency_distribution_single_point_closed_form():
    scores = np.array([[1.0, 0.0, 0.0]])
    g = np.array([[1.0]])
    dists = consistency_distributions(scores, scores, g, g, 0)
    assert np.allclose(dists.h_t, [0.5761, 0.2119, 0.2119], atol=1e-4)


def test_consistency_distribution_equal_scores_uniform():
    scores = np.array([[2.0, 2.0, 2.0, 2.0]])
    g = np.array([[1.0]])
    dists = consistency_distributions(scores, scores, g, g, 0)
    assert np.allclose(dists.h_t, 0.25, atol=1e-12)


def test_consistency_distribution_averages_scores():
    scores = np.array([[1.0, 0.0], [3.0, 2.0]])
    g = np.array([[1.0], [1.0]])
    dists = consistency_distributions(scores, scores, g, g, 0)
    mean = np.array([2.0, 1.0])
    expected = np.exp(mean - mean.max())
    expected /= expected.sum()
    assert np.allclose(dists.h_t, expected, atol=1e-12)


def test_consistency_absent_object_error():
    scores = np.zeros((2, 3))
    with pytest.raises(ValueError):
        consistency_distributions(scores, scores,
                                  np.zeros((2, 1)), np.ones((2, 1)), 0)


def test_consistency_loss_identity_and_closed_form():
    h = softmax(np.array([0.3, -1.0, 2.0]))
    assert consistency_loss(ConsistencyDistributions(h, h)) == 0.0
    dists = ConsistencyDistributions(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
    assert abs(consistency_loss(dists) - math.log(2.0)) < 1e-12


def test_consistency_loss_non_negative():
    rng = np.random.default_rng(5)
    for _ in range(50):
        p = softmax(rng.normal(size=4))
        q = softmax(rng.normal(size=4))
        assert consistency_loss(ConsistencyDistributions(p, q)) >= 0.0


def test_consistency_loss_matches_direct_summation():
    rng = np.random.default_rng(6)
    p = softmax(rng.normal(size=3))
    q = softmax(rng.normal(size=3))
    direct = sum(p[i] * (math.log(p[i]) - math.log(q[i])) for i in range(3))
    assert abs(consistency_loss(ConsistencyDistributions(p, q)) - direct) < 1e-12


def test_kl_and_cross_entropy_gradients_agree():
    rng = np.random.default_rng(7)
    for _ in range(25):
        n = int(rng.integers(2, 9))
        h_t = softmax(rng.normal(size=n))
        logits = rng.normal(size=n)
        g_kl = consistency_loss_grad_logits(h_t, logits)
        g_ce = cross_entropy_grad_logits(h_t, logits)
        assert np.abs(g_kl - g_ce).max() < 1e-10


def test_consistency_grad_matches_finite_differences():
    rng = np.random.default_rng(8)
    h_t = softmax(rng.normal(size=4))
    logits = rng.normal(size=4)

    def loss_fn(l):
        return consistency_loss(ConsistencyDistributions(h_t, softmax(l)))

    fd = central_difference(loss_fn, logits)
    assert np.abs(consistency_loss_grad_logits(h_t, logits) - fd).max() < 1e-8


# -- global loss -----------------------------------------------------------------

def random_instance(seed, temporal):
    rng = np.random.default_rng(seed)
    num_points = int(rng.integers(8, 18))
    num_queries = int(rng.integers(3, 6))
    num_objects = int(rng.integers(2, 4))
    dim = int(rng.integers(3, 6))
    model = ToyFeatureModel(rng.normal(0, 0.5, (5, dim)),
                            rng.normal(0, 0.5, (num_queries, dim)))

    def scan():
        return Scan(np.column_stack([rng.normal(0, 2, (num_points, 3)),
                                     rng.random(num_points)]))

    def assignment():
        owner = rng.integers(0, num_objects, num_points)
        owner[:num_objects] = np.arange(num_objects)
        g = np.zeros((num_points, num_objects))
        g[np.arange(num_points), owner] = 1.0
        return g

    if temporal:
        return model, (scan(), scan()), (assignment(), assignment())
    return model, scan(), assignment()


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("mode", ["scanwise", "temporal"])
def test_global_loss_gradients_match_finite_differences(mode):
    for seed in range(5):
        model, scans, gs = random_instance(seed, mode == "temporal")
        res = global_loss(model, scans, gs, mode=mode)

        def loss_w(w):
            m = ToyFeatureModel(w, model.queries)
            return global_loss(m, scans, gs, mode=mode,
                               match=res.match, h_targets=res.h_targets).loss

        def loss_q(q):
            m = ToyFeatureModel(model.weights, q)
            return global_loss(m, scans, gs, mode=mode,
                               match=res.match, h_targets=res.h_targets).loss

        assert relative_error(res.grad_weights,
                              central_difference(loss_w, model.weights)) < 1e-4
        assert relative_error(res.grad_queries,
                              central_difference(loss_q, model.queries)) < 1e-4


def test_global_loss_near_optimum_is_near_zero():
    # a saturated affinity equal to the assignment gives ~zero dice and bce
    g = np.array([[1.0, 0], [0, 1], [1, 0]])
    a = np.clip(g, 1e-7, 1 - 1e-7)
    cm = cost_matrices(a, g)
    match = hungarian(cm.c)
    matched = sum(2.0 * cm.c_dice[match.pairs[o], o] + 5.0 * cm.c_bce[match.pairs[o], o]
                  for o in match.pairs) / len(match)
    assert matched == pytest.approx(0.0, abs=1e-4)


def test_global_loss_unknown_mode():
    model, scan, g = random_instance(0, False)
    with pytest.raises(ValueError):
        global_loss(model, scan, g, mode="bogus")
