import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchorrank import autodiff as ad
from anchorrank.autodiff import AdamState, AutodiffError, Tensor


def finite_difference(f, arrays, h=1e-6):
    """Central finite differences of scalar f() w.r.t. every array entry."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            gf[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def check_gradients(build_loss, params, rtol=1e-6, atol=1e-9):
    """Compare tape gradients of build_loss() against finite differences."""
    ad.reset_tape()
    for p in params:
        p.zero_grad()
    loss = build_loss()
    ad.backward(loss)
    analytic = [p.grad.copy() for p in params]

    def value():
        with ad.no_grad():
            return build_loss().item()

    numeric = finite_difference(value, [p.data for p in params])
    for a, n in zip(analytic, numeric):
        assert np.allclose(a, n, rtol=rtol, atol=atol), f"\nanalytic={a}\nnumeric={n}"


class TestForwardValues:
    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(5, 7)))
        out = ad.softmax(x, axis=-1)
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-9)

    def test_matmul_identity(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.normal(size=(4, 4)))
        out = ad.matmul(a, Tensor(np.eye(4)))
        assert np.allclose(out.data, a.data)

    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(Tensor(np.zeros((2, 2)))).data.tolist() == [[0.5, 0.5], [0.5, 0.5]]

    def test_layer_norm_moments(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(3.0, 2.0, size=(6, 32)))
        y = ad.layer_norm(x).data
        assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-6)
        assert np.allclose(y.var(axis=-1), 1.0, atol=1e-3)

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(AutodiffError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_non_finite_result_rejected(self):
        big = Tensor(np.full((2, 2), 1e308))
        with np.errstate(over="ignore"), pytest.raises(AutodiffError, match="non-finite"):
            ad.mul(big, big)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000))
    def test_softmax_rows_property(self, n, m, seed):
        x = Tensor(np.random.default_rng(seed).normal(size=(n, m)) * 10)
        assert np.allclose(ad.softmax(x, axis=-1).data.sum(axis=-1), 1.0, atol=1e-9)


class TestAttention:
    def test_single_key_returns_value_row(self):
        rng = np.random.default_rng(3)
        q = Tensor(rng.normal(size=(4, 3)))
        k = Tensor(rng.normal(size=(1, 3)))
        v = Tensor(rng.normal(size=(1, 3)))
        out = ad.attention(q, k, v)
        assert np.allclose(out.data, np.repeat(v.data, 4, axis=0), atol=1e-12)

    def test_identical_keys_give_mean_field(self):
        rng = np.random.default_rng(4)
        q = Tensor(rng.normal(size=(3, 5)))
        k = Tensor(np.tile(rng.normal(size=(1, 5)), (6, 1)))
        v = Tensor(rng.normal(size=(6, 5)))
        out = ad.attention(q, k, v)
        assert np.allclose(out.data, np.tile(v.data.mean(axis=0), (3, 1)), atol=1e-12)

    def test_matches_double_loop_oracle(self):
        # Brute-force per-query softmax over keys, written independently.
        rng = np.random.default_rng(5)
        q, k, v = rng.normal(size=(3, 4)), rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        expected = np.zeros((3, 4))
        for i in range(3):
            weights = np.array([math.exp(float(q[i] @ k[j]) / math.sqrt(4)) for j in range(6)])
            weights /= weights.sum()
            for j in range(6):
                expected[i] += weights[j] * v[j]
        out = ad.attention(Tensor(q), Tensor(k), Tensor(v))
        assert np.allclose(out.data, expected, atol=1e-9)

    def test_gradients(self):
        rng = np.random.default_rng(6)
        q = ad.parameter(rng.normal(size=(3, 4)))
        k = ad.parameter(rng.normal(size=(5, 4)))
        v = ad.parameter(rng.normal(size=(5, 4)))
        check_gradients(lambda: ad.tsum(ad.mul(ad.attention(q, k, v), ad.attention(q, k, v))), [q, k, v])


class TestBce:
    def test_half_everywhere_is_ln2(self):
        p = Tensor(np.full((3, 1), 0.5))
        assert ad.bce(p, np.full((3, 1), 0.5)).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_exact_prediction_hits_clamp_floor(self):
        p = Tensor(np.array([[1.0], [0.0]]))
        t = np.array([[1.0], [0.0]])
        assert ad.bce(p, t).item() <= -math.log1p(-1e-7) + 1e-12

    def test_hand_case(self):
        p = Tensor(np.array([[0.9], [0.1]]))
        t = np.array([[1.0], [0.0]])
        expected = -(math.log(0.9) + math.log(0.9)) / 2
        assert ad.bce(p, t).item() == pytest.approx(expected, abs=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(7)
        p = ad.parameter(rng.uniform(0.1, 0.9, size=(4, 1)))
        t = rng.uniform(0, 1, size=(4, 1))
        check_gradients(lambda: ad.bce(p, t), [p])

    def test_shape_mismatch(self):
        with pytest.raises(AutodiffError, match="shape"):
            ad.bce(Tensor(np.full((2, 1), 0.5)), np.full((3, 1), 0.5))


class TestBackward:
    def test_sum_gives_ones(self):
        x = ad.parameter(np.arange(6.0).reshape(2, 3))
        ad.backward(ad.tsum(x))
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_quadratic_gives_two_x(self):
        x = ad.parameter(np.arange(1.0, 7.0).reshape(2, 3))
        ad.backward(ad.tsum(ad.mul(x, x)))
        assert np.allclose(x.grad, 2 * x.data)

    def test_non_scalar_rejected(self):
        x = ad.parameter(np.ones((2, 2)))
        with pytest.raises(AutodiffError, match="scalar"):
            ad.backward(ad.mul(x, x))

    def test_tape_cleared_after_backward(self):
        x = ad.parameter(np.ones((2, 2)))
        ad.backward(ad.tsum(x))
        assert len(ad.get_tape()) == 0

    def test_no_grad_skips_recording(self):
        x = ad.parameter(np.ones((2, 2)))
        with ad.no_grad():
            y = ad.tsum(ad.mul(x, x))
        assert len(ad.get_tape()) == 0
        assert not y.requires_grad

    def test_reused_tensor_accumulates(self):
        x = ad.parameter(np.array([[2.0]]))
        y = ad.add(ad.mul(x, x), ad.mul(x, x))  # 2x^2 -> dy/dx = 4x
        ad.backward(ad.tsum(y))
        assert np.allclose(x.grad, [[8.0]])

    def test_every_op_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        w = ad.parameter(rng.normal(size=(4, 5)))
        u = ad.parameter(rng.normal(size=(5, 3)))
        b = ad.parameter(rng.normal(size=(1, 3)))

        def build():
            h = ad.matmul(w, u)
            h = ad.add(h, b)
            h = ad.relu(h)
            h = ad.layer_norm(h)
            h = ad.softmax(h, axis=-1)
            h = ad.sigmoid(ad.sub(h, 0.3))
            h = ad.concat([h, ad.scalar_mul(h, 2.0)], axis=1)
            h = ad.narrow(h, 1, 1, 6)
            h = ad.reshape(h, (2, 2, 5))
            h = ad.mean(h, axis=2)
            h = ad.reshape(h, (2, 2))
            h = ad.matmul(ad.transpose(h), h)
            return ad.mean(h)

        check_gradients(build, [w, u, b], rtol=1e-5, atol=1e-8)


class TestAdam:
    def test_zero_grads_keep_params(self):
        p = {"w": ad.parameter(np.array([[1.0, 2.0]]))}
        p["w"].grad = np.zeros((1, 2))
        state = AdamState()
        adam_before = p["w"].data.copy()
        ad.adam_step(p, state)
        assert np.array_equal(p["w"].data, adam_before)
        assert state.step == 1

    def test_first_step_is_minus_lr(self):
        # Bias correction makes the first update exactly lr-sized (up to eps).
        p = {"w": ad.parameter(np.array([[0.0]]))}
        p["w"].grad = np.array([[1.0]])
        state = AdamState(lr=5e-3)
        ad.adam_step(p, state)
        assert p["w"].data[0, 0] == pytest.approx(-5e-3, abs=1e-9)

    def test_missing_grads_rejected(self):
        p = {"w": ad.parameter(np.zeros((1, 1)))}
        with pytest.raises(AutodiffError, match="missing"):
            ad.adam_step(p, AdamState())

    def test_quadratic_descent_windows(self):
        # 100 steps on (w-3)^2 from 0: the error shrinks every 10-step window.
        p = {"w": ad.parameter(np.array([[0.0]]))}
        state = AdamState(lr=5e-3)
        errors = []
        for step in range(100):
            p["w"].grad = 2 * (p["w"].data - 3.0)
            ad.adam_step(p, state)
            if (step + 1) % 10 == 0:
                errors.append(abs(float(p["w"].data[0, 0]) - 3.0))
        assert all(a > b for a, b in zip(errors, errors[1:]))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        params = {
            "a.w": ad.parameter(rng.normal(size=(3, 4))),
            "b": ad.parameter(np.array([[math.pi]])),
        }
        path = tmp_path / "model.ckpt"
        ad.save_checkpoint(path, params, meta={"note": "test"})
        arrays, meta = ad.load_checkpoint(path)
        assert meta == {"note": "test"}
        for name, p in params.items():
            assert arrays[name].tobytes() == p.data.tobytes()

    def test_identical_params_identical_bytes(self, tmp_path):
        params = {"w": ad.parameter(np.linspace(0, 1, 12).reshape(3, 4))}
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        ad.save_checkpoint(p1, params)
        ad.save_checkpoint(p2, params)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupt_file_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ad.CheckpointError):
            ad.load_checkpoint(path)
