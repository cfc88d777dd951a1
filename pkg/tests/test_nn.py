import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from advdialog import nn
from advdialog.errors import DimensionError, NumericError


def lstm_params(n_in, n_hidden, rng=None, forget_bias=1.0):
    p = nn.ParameterSet()
    nn.add_lstm(p, "l", n_in, n_hidden, rng or np.random.default_rng(0), forget_bias)
    return p


def reference_lstm_step(W, b, h, c, x):
    # independent per-gate weights, no fused matmul
    H = h.shape[-1]
    D = x.shape[-1]
    Wx, Wh = W[:D], W[D:]
    gate = lambda k: x @ Wx[:, k * H:(k + 1) * H] + h @ Wh[:, k * H:(k + 1) * H] + b[k * H:(k + 1) * H]
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))
    i, f, o, g = sig(gate(0)), sig(gate(1)), sig(gate(2)), np.tanh(gate(3))
    c2 = f * c + i * g
    return o * np.tanh(c2), c2


class TestLSTMStep:
    def test_zero_params_give_zero_state(self):
        p = lstm_params(3, 4)
        p["l.W"][...] = 0
        p["l.b"][...] = 0
        out = nn.lstm_step(p, "l", nn.RecurrentState.zeros(4), np.array([1.0, -2.0, 3.0]))
        assert np.all(out.cell == 0) and np.all(out.hidden == 0)

    def test_saturated_forget_gate_preserves_cell(self):
        p = lstm_params(3, 4)
        p["l.W"][...] = 0
        p["l.b"][...] = 0
        p["l.b"][4:8] = 20.0
        c = np.array([0.3, -1.2, 2.0, 0.0])
        out = nn.lstm_step(p, "l", nn.RecurrentState(np.zeros(4), c), np.ones(3))
        np.testing.assert_allclose(out.cell, c, rtol=1e-8)
        np.testing.assert_allclose(out.hidden, 0.5 * np.tanh(c), rtol=1e-8)

    def test_matches_reference_width8(self):
        rng = np.random.default_rng(1)
        p = lstm_params(5, 8, rng)
        p["l.b"][...] = rng.normal(size=32)
        h, c, x = rng.normal(size=(2, 8)), rng.normal(size=(2, 8)), rng.normal(size=(2, 5))
        out = nn.lstm_step(p, "l", nn.RecurrentState(h, c), x)
        ref_h, ref_c = reference_lstm_step(p["l.W"], p["l.b"], h, c, x)
        np.testing.assert_allclose(out.hidden, ref_h, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(out.cell, ref_c, rtol=1e-12, atol=1e-14)

    def test_shape_mismatch_raises(self):
        p = lstm_params(3, 4)
        with pytest.raises(DimensionError):
            nn.lstm_step(p, "l", nn.RecurrentState.zeros(5), np.ones(3))
        with pytest.raises(DimensionError):
            nn.lstm_step(p, "l", nn.RecurrentState.zeros(4), np.ones(2))

    def test_masked_forward_carries_state(self):
        rng = np.random.default_rng(2)
        p = lstm_params(3, 4, rng)
        X = rng.normal(size=(3, 2, 3))
        mask = np.array([[1, 1], [1, 0], [1, 0]], dtype=float)
        out, _ = nn.lstm_forward(p, "l", X, mask)
        np.testing.assert_array_equal(out[2, 1], out[0, 1])
        short, _ = nn.lstm_forward(p, "l", X[:1, 1:], np.ones((1, 1)))
        # batch width changes BLAS blocking, so only ulp-level agreement
        np.testing.assert_allclose(out[0, 1], short[0, 0], rtol=0, atol=1e-14)


class TestMLP:
    def make(self, n_in=4, n_hidden=3, n_out=2, seed=0):
        p = nn.ParameterSet()
        nn.add_mlp(p, "m", n_in, n_hidden, n_out, np.random.default_rng(seed))
        return p

    def test_zero_weights_softmax_uniform(self):
        p = self.make(n_out=5)
        for _, q in p.items():
            q.value[...] = 0
        np.testing.assert_allclose(nn.mlp_forward(p, "m", np.ones(4), "softmax"), np.full(5, 0.2))

    def test_zero_weights_sigmoid_half(self):
        p = self.make(n_out=1)
        for _, q in p.items():
            q.value[...] = 0
        assert nn.mlp_forward(p, "m", np.ones(4), "sigmoid")[0] == 0.5

    def test_matches_matrix_oracle(self):
        p = self.make(seed=4)
        p["m.hidden.b"][...] = [0.1, -0.2, 0.3]
        p["m.out.b"][...] = [0.5, -0.5]
        x = np.array([0.5, -1.0, 2.0, 0.25])
        W1, b1, W2, b2 = p["m.hidden.W"], p["m.hidden.b"], p["m.out.W"], p["m.out.b"]
        hidden = [np.tanh(sum(x[i] * W1[i, j] for i in range(4)) + b1[j]) for j in range(3)]
        logits = [sum(hidden[j] * W2[j, k] for j in range(3)) + b2[k] for k in range(2)]
        e = np.exp(np.array(logits) - max(logits))
        np.testing.assert_allclose(nn.mlp_forward(p, "m", x, "softmax"), e / e.sum(), rtol=1e-12)
        np.testing.assert_allclose(nn.mlp_forward(p, "m", x, "linear"), logits, rtol=1e-12)

    def test_unknown_activation(self):
        with pytest.raises(ValueError):
            nn.mlp_forward(self.make(), "m", np.ones(4), "relu6")


finite = st.floats(-50, 50, allow_nan=False)


@given(arrays(np.float64, st.integers(1, 12), elements=finite), st.floats(-100, 100))
def test_softmax_normalized_and_shift_invariant(x, c):
    p = nn.softmax(x)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-9
    np.testing.assert_allclose(nn.softmax(x + c), p, atol=1e-9)


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-800, 800)))
def test_sigmoid_stable(x):
    s = nn.sigmoid(x)
    assert np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))
    np.testing.assert_allclose(nn.log_sigmoid(x)[np.abs(x) < 30], np.log(s[np.abs(x) < 30]), atol=1e-12)


class TestBackward:
    def test_sum_of_parameter_gives_ones(self):
        p = nn.ParameterSet()
        p.add("w", np.arange(6.0).reshape(2, 3))

        def model():
            p.grad("w")[...] += 1.0
            return float(p["w"].sum())

        rep = nn.check_gradients(model, p)
        assert rep.passed
        np.testing.assert_array_equal(p.grad("w"), np.ones((2, 3)))

    def test_linear_square_loss_exact(self):
        p = nn.ParameterSet()
        p.add("w", np.array([0.3, -0.7, 1.1]))
        x = np.array([2.0, 0.5, -1.0])

        def model():
            y = p["w"] @ x
            p.grad("w")[...] += 2 * y * x
            return y * y

        rep = nn.check_gradients(model, p)
        assert rep.worst < 1e-9

    def test_corrupted_backward_fails(self):
        p = nn.ParameterSet()
        p.add("w", np.array([0.3, -0.7, 1.1]))
        x = np.array([2.0, 0.5, -1.0])

        def model():
            y = p["w"] @ x
            p.grad("w")[...] += 2 * (2 * y * x)
            return y * y

        rep = nn.check_gradients(model, p)
        assert not rep.passed and "FAIL" in str(rep)

    def test_check_restores_analytic_gradients(self):
        p = nn.ParameterSet()
        p.add("w", np.array([1.0, 2.0]))

        def model():
            p.grad("w")[...] += 2 * p["w"]
            return float(p["w"] @ p["w"])

        nn.check_gradients(model, p)
        np.testing.assert_array_equal(p.grad("w"), [2.0, 4.0])

    def test_lstm_mlp_stack_gradcheck(self):
        rng = np.random.default_rng(5)
        p = nn.ParameterSet()
        nn.add_lstm(p, "l", 3, 4, rng)
        nn.add_mlp(p, "m", 4, 5, 2, rng)
        X = rng.normal(size=(4, 2, 3))
        mask = np.array([[1, 1], [1, 1], [1, 0], [1, 0]], dtype=float)
        target = np.array([0, 1])

        def model():
            H, cache = nn.lstm_forward(p, "l", X, mask)
            probs, logits, mc = nn.mlp_forward(p, "m", H, "softmax", return_cache=True)
            onehot = np.eye(2)[target][None]
            loss = -np.sum(mask[..., None] * onehot * np.log(probs))
            dlogits = mask[..., None] * (probs - onehot)
            dH = nn.mlp_backward(p, "m", mc, dlogits)
            nn.lstm_backward(p, "l", cache, dH)
            return loss

        rep = nn.check_gradients(model, p)
        assert rep.passed, str(rep)

    def test_batch_gradient_additivity(self):
        rng = np.random.default_rng(6)
        p = nn.ParameterSet()
        nn.add_lstm(p, "l", 3, 4, rng)
        X = rng.normal(size=(3, 2, 3))
        mask = np.ones((3, 2))

        def grads(Xb, mb):
            p.zero_grad()
            H, cache = nn.lstm_forward(p, "l", Xb, mb)
            nn.lstm_backward(p, "l", cache, np.ones_like(H))
            return {k: q.grad.copy() for k, q in p.items()}

        both = grads(X, mask)
        a, b = grads(X[:, :1], mask[:, :1]), grads(X[:, 1:], mask[:, 1:])
        for k in both:
            np.testing.assert_allclose(both[k], a[k] + b[k], atol=1e-10)


class TestAdam:
    def test_first_step_size(self):
        p = nn.ParameterSet()
        p.add("w", np.array([1.0]))
        p.grad("w")[...] = 0.1
        nn.adam_update(p, lr=1e-3)
        assert p["w"][0] == pytest.approx(1.0 - 1e-3, abs=1e-9)
        assert np.all(p.grad("w") == 0)

    def test_zero_gradient_leaves_params(self):
        p = nn.ParameterSet()
        p.add("w", np.array([1.0, -2.0]))
        p.grad("w")[...] = [0.5, 0.5]
        nn.adam_update(p)
        m, v = p.entries["w"].m.copy(), p.entries["w"].v.copy()
        nn.adam_update(p)
        np.testing.assert_allclose(p.entries["w"].m, 0.9 * m)
        np.testing.assert_allclose(p.entries["w"].v, 0.999 * v)
        fresh = nn.ParameterSet()
        fresh.add("w", np.array([1.0, -2.0]))
        nn.adam_update(fresh)
        np.testing.assert_array_equal(fresh["w"], [1.0, -2.0])

    def test_non_finite_gradient_raises(self):
        p = nn.ParameterSet()
        p.add("w", np.array([1.0]))
        p.grad("w")[...] = np.nan
        with pytest.raises(NumericError):
            nn.adam_update(p)

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(11)
            p = nn.ParameterSet()
            nn.add_mlp(p, "m", 4, 3, 2, rng)
            for _ in range(5):
                for _, q in p.items():
                    q.grad[...] = rng.normal(size=q.value.shape)
                nn.adam_update(p)
            return p
        assert run().equal(run())


class TestClip:
    def make(self, g):
        p = nn.ParameterSet()
        p.add("a", np.zeros(len(g)))
        p.grad("a")[...] = g
        return p

    def test_halves_when_norm_10(self):
        p = self.make([6.0, 8.0])
        assert nn.clip_gradients(p, 5.0) == 10.0
        np.testing.assert_allclose(p.grad("a"), [3.0, 4.0])

    def test_unchanged_below_threshold(self):
        p = self.make([1.8, 2.4])
        nn.clip_gradients(p, 5.0)
        np.testing.assert_array_equal(p.grad("a"), [1.8, 2.4])

    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e3, 1e3)), st.floats(0.1, 100))
    def test_norm_is_min_and_idempotent(self, g, thr):
        p = self.make(g)
        before = p.global_norm()
        nn.clip_gradients(p, thr)
        assert abs(p.global_norm() - min(before, thr)) <= 1e-9 * max(1.0, before)
        once = p.grad("a").copy()
        nn.clip_gradients(p, thr)
        np.testing.assert_allclose(p.grad("a"), once, rtol=1e-12)


class TestDropout:
    def test_inference_identity(self):
        x = np.arange(5.0)
        assert nn.dropout(x, 0.5, False, None) is x

    def test_p_zero_identity(self):
        x = np.arange(5.0)
        np.testing.assert_array_equal(nn.dropout(x, 0.0, True, np.random.default_rng(0)), x)

    def test_mean_preserved(self):
        out = nn.dropout(np.ones(10 ** 6), 0.5, True, np.random.default_rng(0))
        assert 0.99 <= out.mean() <= 1.01

    @pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
    def test_invalid_p(self, p):
        with pytest.raises(ValueError):
            nn.dropout(np.ones(3), p, True, np.random.default_rng(0))


def test_parameter_set_state_roundtrip():
    rng = np.random.default_rng(0)
    p = nn.ParameterSet()
    nn.add_mlp(p, "m", 3, 4, 2, rng)
    for _, q in p.items():
        q.grad[...] = 1.0
    nn.adam_update(p)
    q = nn.ParameterSet()
    nn.add_mlp(q, "m", 3, 4, 2, np.random.default_rng(9))
    q.load_state_dict(p.state_dict())
    assert q.equal(p)
    bad = p.state_dict()
    bad["value/m.out.W"] = np.zeros((2, 2))
    with pytest.raises(DimensionError):
        q.load_state_dict(bad)
