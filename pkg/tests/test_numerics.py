import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pgcidl.exceptions import DimensionError, InvalidInputError
from pgcidl.numerics import RmspropState, SeededStream, kl_divergence, mix_seed, rmsprop_step, softmax

finite = st.floats(-50, 50, allow_nan=False)
logit_vectors = arrays(np.float64, st.integers(1, 8), elements=finite)


def _prob_vector(k):
    return arrays(np.float64, k, elements=st.floats(0.01, 1.0)).map(lambda a: a / a.sum())


class TestSoftmax:
    def test_symmetric_pair(self):
        np.testing.assert_array_equal(softmax([0.0, 0.0]), [0.5, 0.5])

    def test_hand_values(self):
        # e^{-2}, e^{-1}, 1 normalized by their sum 1.5032147
        np.testing.assert_allclose(softmax([1.0, 2.0, 3.0]), [0.09003, 0.24473, 0.66524], atol=1e-5)

    def test_large_logits_stay_finite(self):
        p = softmax([1000.0, 0.0])
        assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("bad", [[np.nan, 1.0], [np.inf, 0.0], []])
    def test_rejects_bad_input(self, bad):
        with pytest.raises(InvalidInputError):
            softmax(bad)

    @given(logit_vectors, finite)
    def test_valid_distribution_and_shift_invariance(self, v, c):
        p = softmax(v)
        assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
        np.testing.assert_allclose(softmax(v + c), p, atol=1e-12)


class TestKL:
    def test_identity(self):
        assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_hand_value(self):
        # 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1)
        assert kl_divergence([0.5, 0.5], [0.9, 0.1]) == pytest.approx(0.51083, abs=1e-4)

    def test_floor_keeps_zero_q_finite(self):
        v = kl_divergence([0.5, 0.5], [1.0, 0.0])
        assert np.isfinite(v) and v > 5

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            kl_divergence([0.5, 0.5], [1.0])

    @given(st.integers(2, 6).flatmap(lambda k: st.tuples(_prob_vector(k), _prob_vector(k))))
    def test_gibbs(self, pq):
        p, q = pq
        assert kl_divergence(p, q) >= -1e-9
        assert kl_divergence(p, p) == 0.0


class TestRmsprop:
    def test_one_step_by_hand(self):
        params, state = rmsprop_step({"p": np.array(1.0)}, {"p": np.array(1.0)}, RmspropState(0.9, 1e-8), 0.1)
        assert float(state.accumulators["p"]) == pytest.approx(0.1)
        assert float(params["p"]) == pytest.approx(1 - 0.1 / (np.sqrt(0.1) + 1e-8), abs=1e-12)
        assert float(params["p"]) == pytest.approx(0.68377, abs=1e-5)

    def test_zero_gradient_leaves_params(self):
        p = {"a": np.arange(6.0).reshape(2, 3)}
        new, _ = rmsprop_step(p, {"a": np.zeros((2, 3))}, RmspropState(), 0.5)
        np.testing.assert_array_equal(new["a"], p["a"])

    def test_pure_and_deterministic(self):
        p = {"a": np.array([1.0, -2.0])}
        g = {"a": np.array([0.3, 0.1])}
        s = RmspropState()
        first = rmsprop_step(p, g, s, 0.01)
        second = rmsprop_step(p, g, s, 0.01)
        np.testing.assert_array_equal(first[0]["a"], second[0]["a"])
        np.testing.assert_array_equal(p["a"], [1.0, -2.0])
        assert s.accumulators == {}


class TestSeededStream:
    def test_same_seed_same_draws(self):
        np.testing.assert_array_equal(SeededStream(0).draw_uniform(1000), SeededStream(0).draw_uniform(1000))

    def test_seeds_differ(self):
        assert not np.array_equal(SeededStream(0).draw_uniform(100), SeededStream(1).draw_uniform(100))

    def test_uniform_range(self):
        u = SeededStream(7).draw_uniform(10000)
        assert u.min() >= 0.0 and u.max() < 1.0

    def test_gaussian_moments(self):
        g = SeededStream(0).draw_gaussian(100_000)
        assert abs(g.mean()) < 0.02
        assert abs(g.var() - 1.0) < 0.05

    def test_permutation_and_choice(self):
        s = SeededStream(3)
        perm = s.permutation(50)
        assert sorted(perm.tolist()) == list(range(50))
        c = s.draw_choice(10, size=10, replace=False)
        assert sorted(c.tolist()) == list(range(10))
        assert np.all((s.draw_choice(4, size=100) >= 0) & (s.draw_choice(4, size=100) < 4))

    def test_spawn_and_mix_are_deterministic(self):
        assert mix_seed(0, 1) == mix_seed(0, 1) != mix_seed(1, 0)
        a = SeededStream(5).spawn(2).draw_uniform(5)
        b = SeededStream(5).spawn(2).draw_uniform(5)
        np.testing.assert_array_equal(a, b)
