import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmip.milp import DimensionMismatch
from hmip.mlp import Mlp, finite_difference_grads


def relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(1.0, float(np.abs(n).max()))
        worst = max(worst, float(np.abs(a - n).max()) / scale)
    return worst


class TestConstruction:
    def test_needs_two_dims(self):
        with pytest.raises(ValueError):
            Mlp([4])

    def test_shape_chain_checked(self):
        with pytest.raises(DimensionMismatch):
            Mlp([2, 3], weights=[np.zeros((2, 2))], biases=[np.zeros(2)])

    def test_he_init_scale(self):
        mlp = Mlp([200, 300], seed=0)
        std = mlp.weights[0].std()
        assert std == pytest.approx(np.sqrt(2.0 / 200), rel=0.1)

    def test_seed_determinism(self):
        a = Mlp([3, 5, 2], seed=9)
        b = Mlp([3, 5, 2], seed=9)
        assert all(np.array_equal(x, y)
                   for x, y in zip(a.weights, b.weights))


class TestForward:
    def test_single_and_batch_agree(self, rng):
        mlp = Mlp([4, 6, 3], seed=1)
        xs = rng.standard_normal((5, 4))
        batch = mlp.forward(xs)
        for i in range(5):
            assert np.allclose(batch[i], mlp.forward(xs[i]))

    def test_relu_hidden_identity_output(self):
        mlp = Mlp([1, 1, 1], weights=[np.array([[1.0]]), np.array([[1.0]])],
                  biases=[np.zeros(1), np.zeros(1)])
        assert mlp.forward(np.array([-3.0]))[0] == 0.0
        assert mlp.forward(np.array([2.0]))[0] == 2.0

    def test_dimension_check(self):
        with pytest.raises(DimensionMismatch):
            Mlp([4, 2]).forward(np.zeros(3))


class TestBackward:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_finite_differences(self, seed):
        r = np.random.default_rng(seed)
        dims = [int(r.integers(2, 6)) for _ in range(3)]
        mlp = Mlp(dims, seed=seed)
        x = r.standard_normal(dims[0])
        upstream = r.standard_normal(dims[-1])
        cache = []
        mlp.forward(x, cache=cache)
        gw, gb = mlp.backward(cache, upstream)
        fw, fb = finite_difference_grads(mlp, x, upstream)
        assert relative_error(gw + gb, fw + fb) <= 1e-4

    def test_batch_gradient_is_sum(self, rng):
        mlp = Mlp([3, 4, 2], seed=2)
        xs = rng.standard_normal((4, 3))
        ups = rng.standard_normal((4, 2))
        cache = []
        mlp.forward(xs, cache=cache)
        gw, gb = mlp.backward(cache, ups)
        sw = [np.zeros_like(w) for w in mlp.weights]
        sb = [np.zeros_like(b) for b in mlp.biases]
        for i in range(4):
            c = []
            mlp.forward(xs[i], cache=c)
            a, b = mlp.backward(c, ups[i])
            for t, g in zip(sw, a):
                t += g
            for t, g in zip(sb, b):
                t += g
        assert all(np.allclose(x, y) for x, y in zip(gw, sw))
        assert all(np.allclose(x, y) for x, y in zip(gb, sb))

    def test_stale_cache_rejected(self):
        mlp = Mlp([2, 2])
        with pytest.raises(ValueError):
            mlp.backward([np.zeros((1, 2))], np.zeros(2))


class TestUpdateAndCopy:
    def test_apply_update_direction(self):
        mlp = Mlp([2, 1], seed=0)
        before = mlp.weights[0].copy()
        grad = np.ones_like(before)
        mlp.apply_update([grad], [np.zeros(1)], 0.5)
        assert np.allclose(mlp.weights[0], before - 0.5)

    def test_copy_is_independent(self):
        mlp = Mlp([2, 2], seed=0)
        clone = mlp.copy()
        clone.weights[0][:] = 0.0
        assert not np.allclose(mlp.weights[0], 0.0)


class TestSerialization:
    def test_round_trip_exact(self):
        mlp = Mlp([3, 7, 2], seed=4)
        again = Mlp.from_text(mlp.to_text())
        assert mlp.layer_dims == again.layer_dims
        assert all(np.array_equal(a, b)
                   for a, b in zip(mlp.weights, again.weights))
        assert all(np.array_equal(a, b)
                   for a, b in zip(mlp.biases, again.biases))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_forward_is_piecewise_linear_in_scale(seed):
    """Scaling a nonnegative-activation input scales hidden output linearly
    once no ReLU changes sign (positive homogeneity on a fixed pattern)."""
    r = np.random.default_rng(seed)
    mlp = Mlp([3, 4, 2], seed=seed)
    for b in mlp.biases:
        b[:] = 0.0
    x = r.standard_normal(3)
    assert np.allclose(mlp.forward(2.0 * x), 2.0 * mlp.forward(x), atol=1e-9)
