import numpy as np
import pytest

from pgcidl.exceptions import DimensionError, InvalidInputError
from pgcidl.metric_grouping import MetricParams
from pgcidl.model import LossConfig, ModelParams, encode, forward, init_params, loss_and_grads, \
    loss_given_grouping, mean_pool_forward, mean_pool_loss_and_grads, pooling_coefficients, \
    reweighted_embedding, separation_regularizer
from pgcidl.numerics import softmax

from .oracles import max_gradient_error, random_gradient_case


def identity_params(d, C=2, head=None):
    head = np.zeros((C, d)) if head is None else head
    return ModelParams(np.eye(d), np.zeros(d), head, np.zeros(C), MetricParams(np.eye(d)))


def signal_bag(a=6.0, b=9.0, m=5, jitter=0.05, seed=0):
    """Three tight non-negative blobs; only the first lies along the class axis."""
    rng = np.random.default_rng(seed)
    X = np.zeros((3 * m, 3))
    X[:m, 0] = a
    X[m:2 * m, 1] = b
    X[2 * m:, 2] = b
    X += np.abs(rng.normal(scale=jitter, size=X.shape))
    return X, np.repeat([0, 1, 2], m)


class TestEncode:
    def test_identity(self, rng):
        X = np.abs(rng.normal(size=(5, 4)))
        np.testing.assert_array_equal(encode(identity_params(4), X), X)

    def test_zero(self, rng):
        p = identity_params(4)
        p.encoder[:] = 0
        assert not encode(p, rng.normal(size=(5, 4))).any()

    def test_row_locality(self, small_params, rng):
        X = rng.normal(size=(6, 16))
        Z = encode(small_params, X)
        X2 = X.copy()
        X2[3] += 10
        Z2 = encode(small_params, X2)
        np.testing.assert_array_equal(np.delete(Z, 3, 0), np.delete(Z2, 3, 0))

    def test_dimension_error(self, small_params):
        with pytest.raises(DimensionError):
            encode(small_params, np.zeros((4, 5)))


class TestReweighting:
    def test_uniform_equals_mean(self, rng):
        Z = rng.normal(size=(9, 3))
        asg = np.repeat([0, 1, 2], 3)
        np.testing.assert_allclose(reweighted_embedding(Z, asg, np.full(3, 1 / 3)), Z.mean(axis=0))

    def test_single_weight(self, rng):
        Z = rng.normal(size=(7, 3))
        asg = np.array([0, 1, 0, 2, 0, 1, 2])
        np.testing.assert_allclose(reweighted_embedding(Z, asg, [1.0, 0.0, 0.0]), Z[asg == 0].mean(axis=0))

    def test_known_means(self):
        Z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0], [5.0, 5.0]])
        asg = np.array([0, 0, 1, 1, 1, 2])
        np.testing.assert_allclose(reweighted_embedding(Z, asg, [0.75, 0.25, 0.0]), [0.75, 0.25])

    def test_empty_group_mass_is_renormalized(self, rng):
        Z = rng.normal(size=(4, 2))
        asg = np.array([0, 0, 1, 1])
        out = reweighted_embedding(Z, asg, [0.25, 0.25, 0.5])
        np.testing.assert_allclose(out, 0.5 * Z[:2].mean(0) + 0.5 * Z[2:].mean(0))

    def test_convex_combination_of_centroids(self, rng):
        for _ in range(20):
            Z = rng.normal(size=(12, 4))
            asg = np.concatenate([[0, 1, 2], rng.integers(0, 3, 9)])
            w = rng.dirichlet(np.ones(3))
            cents = np.array([Z[asg == k].mean(0) for k in range(3)])
            np.testing.assert_allclose(reweighted_embedding(Z, asg, w), w @ cents, atol=1e-12)
            c = pooling_coefficients(asg, w)
            assert abs(c.sum() - 1) < 1e-12

    def test_instance_weighted(self, rng):
        Z = rng.normal(size=(6, 2))
        asg = np.array([0, 0, 1, 1, 2, 2])
        w = np.array([0.5, 0.3, 0.2])
        np.testing.assert_allclose(reweighted_embedding(Z, asg, w, "instance_weighted"),
                                   (w[asg][:, None] * Z).sum(0) / 6)


class TestRegularizer:
    def test_identical(self):
        d, degenerate = separation_regularizer(MetricParams(np.eye(2)), np.ones((4, 2)), [0, 1, 1, 2], 0)
        assert d == 0.0 and not degenerate

    def test_unit_gap(self):
        Z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
        d, _ = separation_regularizer(MetricParams(np.eye(2)), Z, [0, 0, 1, 2, 2], 0)
        assert d == pytest.approx(1.0)

    def test_homogeneous(self, rng):
        A = rng.normal(size=(2, 4))
        Z = rng.normal(size=(8, 4))
        asg = np.array([0, 1, 2, 0, 1, 2, 0, 1])
        base, _ = separation_regularizer(MetricParams(A), Z, asg, 1)
        scaled, _ = separation_regularizer(MetricParams(3.5 * A), Z, asg, 1)
        assert scaled == pytest.approx(3.5 * base, rel=1e-12)

    def test_whole_bag_is_degenerate(self):
        assert separation_regularizer(MetricParams(np.eye(2)), np.ones((3, 2)), [0, 0, 0], 0) == (0.0, True)


class TestForward:
    def test_permutation_invariance(self, small_params, rng):
        X = rng.normal(size=(20, 16))
        ref = forward(small_params, X)
        for _ in range(5):
            perm = rng.permutation(20)
            t = forward(small_params, X[perm])
            np.testing.assert_array_equal(t.probs, ref.probs)
            np.testing.assert_array_equal(t.weights, ref.weights)
            assert t.factors == ref.factors
            np.testing.assert_array_equal(t.assignments, ref.assignments[perm])

    def test_identical_instances(self, small_params, rng):
        x = rng.normal(size=16)
        t = forward(small_params, np.tile(x, (6, 1)))
        expected = softmax(small_params.head @ encode(small_params, x[None])[0] + small_params.head_bias)
        np.testing.assert_allclose(t.probs, expected, atol=1e-12)
        assert t.degenerate

    def test_signal_group_is_tc(self):
        X, truth = signal_bag()
        head = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        t = forward(identity_params(3, head=head), X)
        assert np.all(t.instance_factors()[truth == 0] == 0)
        assert np.all(t.instance_factors()[truth != 0] != 0)

    def test_accepts_bag_objects(self, small_params, small_dataset):
        bag = small_dataset.bags[0]
        np.testing.assert_array_equal(forward(small_params, bag).probs, forward(small_params, bag.features).probs)


class TestLoss:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("agg_mode", ["centroid_weighted", "instance_weighted"])
    def test_finite_differences(self, seed, agg_mode):
        assert max_gradient_error(*random_gradient_case(seed, agg_mode)) < 1e-4

    def test_gamma_zero_is_cross_entropy(self, small_params, rng):
        X = rng.normal(size=(10, 16))
        loss, grads, trace = loss_and_grads(small_params, X, 1, LossConfig(gamma=0.0))
        assert loss == pytest.approx(-np.log(trace.probs[1]), rel=1e-12)
        assert not grads["metric"].any()

    def test_decomposition(self, small_params, rng):
        for label in range(3):
            X = rng.normal(size=(12, 16))
            loss, _, trace = loss_and_grads(small_params, X, label, LossConfig(gamma=0.3))
            assert loss + 0.3 * trace.d_reg == pytest.approx(-np.log(trace.probs[label]), abs=1e-12)

    def test_perfect_prediction(self):
        head = np.array([[50.0, 0.0], [-50.0, 0.0]])
        p = identity_params(2, head=head)
        X = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
        loss, _, info = loss_given_grouping(p, X, 0, np.array([0, 1, 2]), np.full(3, 1 / 3), 0,
                                            LossConfig(gamma=0.0))
        assert info["ce"] <= 1e-9 and loss <= 1e-9

    def test_grads_match_frozen_forward(self, small_params, rng):
        X = rng.normal(size=(15, 16))
        loss, grads, trace = loss_and_grads(small_params, X, 2)
        loss2, grads2, _ = loss_given_grouping(small_params, X, 2, trace.assignments, trace.weights,
                                               trace.factors.tc)
        assert loss == pytest.approx(loss2, rel=1e-12)
        for k in grads:
            np.testing.assert_allclose(grads[k], grads2[k], rtol=1e-9, atol=1e-12)

    def test_bad_label(self, small_params, rng):
        with pytest.raises(InvalidInputError):
            loss_and_grads(small_params, rng.normal(size=(5, 16)), 7)


class TestMeanPool:
    def test_matches_plain_mean(self, small_params, rng):
        X = rng.normal(size=(8, 16))
        Z = encode(small_params, X)
        expected = softmax(small_params.head @ Z.mean(0) + small_params.head_bias)
        np.testing.assert_allclose(mean_pool_forward(small_params, X), expected, atol=1e-12)

    def test_no_metric_gradient(self, small_params, rng):
        loss, grads, probs = mean_pool_loss_and_grads(small_params, rng.normal(size=(8, 16)), 0)
        assert not grads["metric"].any()
        assert loss == pytest.approx(-np.log(probs[0]))


def test_init_params_shapes():
    p = init_params(16, 8, 3, seed=0)
    assert p.encoder.shape == (8, 16) and p.head.shape == (3, 8)
    assert p.metric.rank == 7
    assert np.linalg.norm(p.metric.A) == pytest.approx(np.sqrt(7))
    q = init_params(16, 8, 3, seed=0)
    np.testing.assert_array_equal(p.encoder, q.encoder)
