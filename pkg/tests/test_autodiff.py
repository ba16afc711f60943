import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from groupmatch import autodiff as ad
from groupmatch.autodiff import EmptySupportError, ShapeError, Tape
from groupmatch.gradcheck import grad_check

from oracles import triple_loop_matmul


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ad.matmul(np.eye(2), m).value, m)

    def test_unit_column(self):
        out = ad.matmul([[1.0, 2.0], [3.0, 4.0]], [[0.0], [1.0]]).value
        np.testing.assert_array_equal(out, [[2.0], [4.0]])

    def test_triple_loop(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(ad.matmul(a, b).value, triple_loop_matmul(a, b), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


class TestLinear:
    def test_identity_and_zero(self):
        x = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(ad.linear(np.eye(3), x).value, x)
        np.testing.assert_array_equal(ad.linear(np.zeros((4, 3)), x).value, np.zeros((4, 2)))

    def test_matches_matmul(self):
        rng = np.random.default_rng(0)
        w, x = rng.normal(size=(5, 3)), rng.normal(size=(3, 2))
        np.testing.assert_array_equal(ad.linear(w, x).value, ad.matmul(w, x).value)

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            ad.linear(np.ones((2, 2)), np.ones((3, 1)))


class TestMaskedSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ad.masked_softmax([2.0, 2.0, 2.0]).value, [1 / 3] * 3)

    def test_single_support(self):
        out = ad.masked_softmax([5.0, -1.0], [True, False]).value
        assert out[0] == 1.0 and out[1] == 0.0

    def test_direct_oracle(self):
        e = np.exp([1.0, 2.0, 3.0])
        np.testing.assert_allclose(ad.masked_softmax([1.0, 2.0, 3.0]).value, e / e.sum(), rtol=1e-14)

    def test_empty_support(self):
        with pytest.raises(EmptySupportError):
            ad.masked_softmax([1.0, 2.0], [False, False])

    def test_large_logits_stay_finite(self):
        out = ad.masked_softmax([1000.0, 999.0, -1000.0]).value
        assert np.all(np.isfinite(out))

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, 6, elements=st.floats(-50, 50)),
           arrays(bool, 6), st.floats(-100, 100))
    def test_properties(self, logits, mask, c):
        mask = mask.copy()
        mask[0] = True
        y = ad.masked_softmax(logits, mask).value
        assert np.all(y >= 0)
        assert np.all(y[~mask] == 0.0)
        assert abs(y[mask].sum() - 1) < 1e-6
        np.testing.assert_allclose(ad.masked_softmax(logits + c, mask).value, y, atol=1e-9)


class TestConcat:
    def test_singleton(self):
        v = np.array([1.0, 2.0])
        np.testing.assert_array_equal(ad.concat([v]).value, v)

    def test_layout(self):
        out = ad.concat([np.array([1.0, 2.0]), np.array([3.0, 4.0, 5.0])]).value
        np.testing.assert_array_equal(out, [1, 2, 3, 4, 5])

    def test_backward_splits(self):
        with Tape() as tape:
            a = tape.watch("a", np.zeros(2))
            b = tape.watch("b", np.zeros(3))
            g = tape.backward(ad.vsum(ad.concat([a, b])))
        np.testing.assert_array_equal(g["a"], np.ones(2))
        np.testing.assert_array_equal(g["b"], np.ones(3))

    def test_disagreement(self):
        with pytest.raises(ShapeError):
            ad.concat([np.ones((2, 2)), np.ones((3, 3))], axis=0)


class TestBackward:
    def test_quadratic(self):
        with Tape() as tape:
            x = tape.watch("x", [1.0, 2.0])
            g = tape.backward(ad.vsum(x * x))
        np.testing.assert_array_equal(g["x"], [2.0, 4.0])

    def test_disconnected(self):
        with Tape() as tape:
            x = tape.watch("x", [1.0, 2.0])
            p = tape.watch("p", [[3.0]])
            g = tape.backward(ad.vsum(ad.square(x)))
        np.testing.assert_array_equal(g["p"], [[0.0]])

    def test_non_scalar_root(self):
        with Tape() as tape:
            x = tape.watch("x", [1.0, 2.0])
            with pytest.raises(ValueError):
                tape.backward(x * 2.0)

    def test_fan_out_accumulates(self):
        with Tape() as tape:
            x = tape.watch("x", 3.0)
            g = tape.backward(x * x + x)
        assert g["x"] == 7.0

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        w0 = rng.normal(size=(4, 3))
        with Tape() as tape:
            w = tape.watch("w", w0)
            loss = ad.vsum(ad.exp(ad.matmul(w, np.ones((3, 2))) * 0.1))
            g1 = tape.backward(loss)
            g2 = tape.backward(loss)
        assert np.array_equal(g1["w"], g2["w"])


OPS = {
    "matmul": lambda p: ad.vsum(ad.matmul(p["a"], p["b"])),
    "einsum": lambda p: ad.vsum(ad.square(ad.einsum("ij,jk->ik", p["a"], p["b"]))),
    "mul_div": lambda p: ad.vsum(p["a"] * 2.0 / (ad.square(p["a"]) + 1.0)),
    "exp_log": lambda p: ad.vsum(ad.log(ad.exp(p["a"]) + 2.0)),
    "sqrt": lambda p: ad.vsum(ad.sqrt(ad.square(p["a"]) + 1.0)),
    "softmax": lambda p: ad.vsum(ad.masked_softmax(p["a"], [[True, False, True]] * 3, axis=1)
                                 * np.arange(9.0).reshape(3, 3)),
    "concat": lambda p: ad.vsum(ad.square(ad.concat([p["a"], ad.transpose(p["b"])], axis=0))),
    "layout": lambda p: ad.vsum(ad.reshape(ad.getitem(p["a"], (slice(0, 2),)), (6,)) * np.arange(6.0)),
    "broadcast": lambda p: ad.vsum(ad.square(ad.broadcast_to(ad.reshape(p["a"][0], (1, 3)), (4, 3)) - 0.3)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_primitive_gradients(name):
    rng = np.random.default_rng(7)
    params = {"a": rng.uniform(-1, 1, (3, 3)), "b": rng.uniform(-1, 1, (3, 3))}
    rep = grad_check(OPS[name], params, tol=1e-4)
    assert rep.passed, rep.lines()
