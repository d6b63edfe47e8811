"""Autodiff engine: forward values, backward values, finite-difference checks,
optimizer behavior, checkpoint format."""

import hashlib

import numpy as np
import pytest

import rulelens.diffcore as dc
from rulelens.diffcore import (
    Adam,
    DiffcoreError,
    GRUCell,
    Linear,
    Module,
    OptimError,
    SelfAttention,
    ShapeError,
    Tensor,
    backward,
    load_checkpoint,
    save_checkpoint,
)

from conftest import assert_grads_match


class TestForwardExamples:
    def test_softmax_symmetry(self):
        out = dc.softmax(Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [0.5, 0.5])

    def test_masked_softmax_hand_value(self):
        # exp-normalize over the unmasked entries {1, 3}: e^1/(e^1+e^3) etc.
        out = dc.masked_softmax(Tensor([1.0, 9.0, 3.0]), np.array([1.0, 0.0, 1.0]))
        expected = np.array([0.11920292202211755, 0.0, 0.8807970779778824])
        np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-15)
        assert out.data[1] == 0.0
        assert abs(out.data.sum() - 1.0) < 1e-12

    def test_masked_softmax_zero_on_masked_rows(self, rng):
        x = Tensor(rng.standard_normal((5, 7)))
        mask = (rng.random((5, 7)) < 0.5).astype(float)
        mask[:, 0] = 1.0
        out = dc.masked_softmax(x, mask)
        assert np.all(out.data[mask == 0.0] == 0.0)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_masked_softmax_empty_row_rejected(self):
        with pytest.raises(DiffcoreError):
            dc.masked_softmax(Tensor([[1.0, 2.0]]), np.array([[0.0, 0.0]]))

    def test_mean_pool_rows(self):
        out = dc.mean_pool(Tensor([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [2.0, 3.0])

    def test_mean_pool_masked_all_zero_row(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 4)))
        mask = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
        out = dc.mean_pool(x, mask)
        np.testing.assert_allclose(out.data[0], x.data[0, :2].mean(axis=0))
        np.testing.assert_array_equal(out.data[1], np.zeros(4))

    def test_matmul_shape_error_names_op(self):
        with pytest.raises(ShapeError) as exc:
            dc.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        assert "matmul" in str(exc.value)
        assert "(2, 3)" in str(exc.value)

    def test_affine_shape_error(self):
        with pytest.raises(ShapeError):
            dc.affine(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros(5)))


class TestBackwardExamples:
    def test_square_power_rule(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        loss = x * x
        backward(loss)
        np.testing.assert_allclose(x.grad, 6.0)

    def test_softmax_ce_uniform_logits(self):
        logits = Tensor(np.array([[0.0, 0.0]]), requires_grad=True)
        loss = dc.cross_entropy(logits, np.array([0]))
        backward(loss)
        np.testing.assert_allclose(logits.grad, [[-0.5, 0.5]])
        logits2 = Tensor(np.array([[0.0, 0.0]]), requires_grad=True)
        backward(dc.cross_entropy(logits2, np.array([1])))
        np.testing.assert_allclose(logits2.grad, [[0.5, -0.5]])

    def test_backward_twice_accumulates(self):
        # documented choice: repeated backward accumulates deterministically
        x = Tensor(np.array(3.0), requires_grad=True)
        loss = x * x
        backward(loss)
        first = x.grad.copy()
        loss2 = x * x
        backward(loss2)
        np.testing.assert_allclose(x.grad, 2.0 * first)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(DiffcoreError):
            backward(x + 1.0)


class TestFiniteDifferences:
    """Criterion: every op matches central finite differences (h=1e-5)
    within 1e-4 relative error."""

    def test_arithmetic_and_bias_broadcast(self, rng):
        a = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        b = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        bias = Tensor(rng.uniform(0.5, 2.0, (4,)), requires_grad=True)

        def build():
            t = dc.add(a, bias)
            t = dc.mul(t, b)
            t = dc.sub(t, 0.25)
            t = dc.div(t, b)
            t = dc.add(dc.neg(t), dc.div(1.0, b))
            t = dc.mul(t, 0.5)
            return dc.tsum(dc.mul(t, t))

        assert_grads_match(build, [a, b, bias])

    def test_matmul_variants(self, rng):
        a = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        b = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        bt = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        w = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        bias = Tensor(rng.standard_normal(4), requires_grad=True)

        def build():
            m1 = dc.matmul(a, b)
            m2 = dc.matmul_t(a, bt)
            m3 = dc.affine(a, w, bias)
            return dc.tsum(dc.mul(dc.add(dc.add(m1, m2), m3), 0.1))

        assert_grads_match(build, [a, b, bt, w, bias])

    def test_elementwise_nonlinearities(self, rng):
        # inputs kept away from the relu/clamp kinks
        base = rng.uniform(0.2, 1.5, (3, 4)) * rng.choice([-1.0, 1.0], (3, 4))
        x = Tensor(base, requires_grad=True)
        pos = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)

        def build():
            t = dc.tanh(x)
            t = dc.add(t, dc.sigmoid(x))
            t = dc.add(t, dc.relu(x))
            t = dc.add(t, dc.exp(dc.mul(x, 0.3)))
            t = dc.add(t, dc.log(pos))
            t = dc.add(t, dc.clamp_min(x, -0.05))
            return dc.tsum(dc.mul(t, t))

        assert_grads_match(build, [x, pos])

    def test_reductions_and_shape_ops(self, rng):
        a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        c = Tensor(rng.standard_normal((2, 5)), requires_grad=True)

        def build():
            cat = dc.concat([a, b, c], axis=1)
            s = dc.tsum(cat, axis=1)
            stacked = dc.stack1([a, b])
            pooled = dc.mean_pool(stacked, np.array([[1.0, 1.0], [1.0, 0.0]]))
            return dc.add(dc.tsum(dc.mul(s, s)), dc.tsum(dc.mul(pooled, pooled)))

        assert_grads_match(build, [a, b, c])

    def test_softmax_family(self, rng):
        x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        w = rng.standard_normal((4, 6))
        mask = (rng.random((4, 6)) < 0.6).astype(float)
        mask[:, 0] = 1.0

        def build():
            s1 = dc.softmax(x)
            s2 = dc.masked_softmax(x, mask)
            return dc.add(dc.tsum(dc.mul(s1, w)), dc.tsum(dc.mul(s2, w)))

        assert_grads_match(build, [x])

    def test_losses(self, rng):
        logits = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        pred = Tensor(rng.standard_normal((5, 2)), requires_grad=True)
        targets = rng.integers(0, 3, 5)
        ref = rng.standard_normal((5, 2))

        def build():
            return dc.add(dc.cross_entropy(logits, targets), dc.mul(dc.sse(pred, ref), 0.1))

        assert_grads_match(build, [logits, pred])

    def test_gru_cell_all_inputs(self, rng):
        hid, din, B = 5, 4, 3
        x = Tensor(rng.standard_normal((B, din)), requires_grad=True)
        h = Tensor(rng.standard_normal((B, hid)), requires_grad=True)
        w = Tensor(rng.standard_normal((din, 3 * hid)) * 0.3, requires_grad=True)
        u = Tensor(rng.standard_normal((hid, 3 * hid)) * 0.3, requires_grad=True)
        b = Tensor(rng.standard_normal(3 * hid) * 0.1, requires_grad=True)
        c = Tensor(rng.standard_normal(3 * hid) * 0.1, requires_grad=True)
        ref = rng.standard_normal((B, hid))

        def build():
            out = dc.gru_cell(x, h, w, u, b, c)
            return dc.sse(out, ref)

        assert_grads_match(build, [x, h, w, u, b, c])

    def test_gru_chain(self, rng):
        # two chained steps: recurrent gradient path
        hid, B = 4, 2
        x1 = Tensor(rng.standard_normal((B, hid)), requires_grad=True)
        x2 = Tensor(rng.standard_normal((B, hid)), requires_grad=True)
        cell = GRUCell(rng, hid, hid)
        ref = rng.standard_normal((B, hid))

        def build():
            h = cell(x1, cell.initial_state(B))
            h = cell(x2, h)
            return dc.sse(h, ref)

        assert_grads_match(build, [x1, x2, *cell.parameters().values()])

    def test_self_attention(self, rng):
        B, L, h = 2, 3, 4
        tokens = Tensor(rng.standard_normal((B, L, h)), requires_grad=True)
        att = SelfAttention(rng, h)
        mask = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
        ref = rng.standard_normal((B, L, h))

        def build():
            return dc.sse(att(tokens, mask), ref)

        assert_grads_match(build, [tokens, *att.parameters().values()])

    def test_self_attention_all_masked_row_is_safe(self, rng):
        B, L, h = 2, 3, 4
        tokens = Tensor(rng.standard_normal((B, L, h)), requires_grad=True)
        att = SelfAttention(rng, h)
        mask = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 1.0]])
        out = att(tokens, mask)
        assert np.all(np.isfinite(out.data))

    def test_straight_through_matches_soft_gradient(self, rng):
        # backward of st_select must equal the softened softmax gradient
        logits = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        w = rng.standard_normal((3, 5))
        mask = np.ones((3, 5))
        idx = np.array([1, 4, 0])

        probs = dc.masked_softmax(logits, mask)
        hard = dc.st_select(probs, idx)
        backward(dc.tsum(dc.mul(hard, w)))
        st_grad = logits.grad.copy()

        logits.grad = None
        probs2 = dc.masked_softmax(logits, mask)
        backward(dc.tsum(dc.mul(probs2, w)))
        soft_grad = logits.grad.copy()
        np.testing.assert_allclose(st_grad, soft_grad, atol=1e-12)

    def test_st_select_forward_is_one_hot(self, rng):
        probs = dc.softmax(Tensor(rng.standard_normal((10, 6)), requires_grad=True))
        idx = rng.integers(0, 6, 10)
        out = dc.st_select(probs, idx)
        assert np.all(out.data.sum(axis=1) == 1.0)
        assert np.all((out.data == 0.0) | (out.data == 1.0))
        assert np.array_equal(out.data.argmax(axis=1), idx)


class TestAdam:
    def test_zero_grad_leaves_parameter(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = Adam({"p": p}, lr=0.1)
        opt.step()  # grad is None
        np.testing.assert_array_equal(p.data, [1.0, 2.0])
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_descent_direction(self):
        p = Tensor(np.array(0.0), requires_grad=True)
        opt = Adam({"p": p}, lr=0.01)
        for _ in range(50):
            p.grad = np.array(1.0)
            opt.step()
        assert p.data < 0.0

    def test_first_step_hand_value(self):
        # bias-corrected first step with g=1, lr=0.1 moves by ~ -0.1
        p = Tensor(np.array(5.0), requires_grad=True)
        opt = Adam({"p": p}, lr=0.1)
        p.grad = np.array(1.0)
        opt.step()
        np.testing.assert_allclose(p.data, 5.0 - 0.1, rtol=1e-7)

    def test_non_finite_grad_names_parameter(self):
        p = Tensor(np.array(1.0), requires_grad=True)
        opt = Adam({"badparam": p}, lr=0.1)
        p.grad = np.array(np.nan)
        with pytest.raises(OptimError) as exc:
            opt.step()
        assert "badparam" in str(exc.value)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        arrays = {
            "layer.w": rng.standard_normal((3, 4)),
            "layer.b": rng.standard_normal(4),
            "scalar": np.array(2.5),
        }
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, arrays, meta={"note": "test", "epoch": 3})
        loaded, meta = load_checkpoint(path)
        assert list(loaded) == list(arrays)
        for name in arrays:
            np.testing.assert_array_equal(loaded[name], arrays[name])
        assert meta == {"note": "test", "epoch": 3}

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b'{"format": "something-else"}\n')
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_serialization_deterministic(self, tmp_path, rng):
        arrays = {"a": rng.standard_normal((8, 8)), "b": rng.standard_normal(3)}
        p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
        save_checkpoint(p1, arrays, meta={"k": 1})
        save_checkpoint(p2, arrays, meta={"k": 1})
        h1 = hashlib.sha256(p1.read_bytes()).hexdigest()
        h2 = hashlib.sha256(p2.read_bytes()).hexdigest()
        assert h1 == h2


class TestModule:
    def test_dotted_parameter_names(self, rng):
        class Net(Module):
            def __init__(self):
                super().__init__()
                self.fc = self.add_child("fc", Linear(rng, 3, 2))
                self.scale = self.register("scale", Tensor(np.array(1.0)))

        net = Net()
        names = list(net.parameters())
        assert names == ["scale", "fc.w", "fc.b"]

    def test_load_state_missing_key(self, rng):
        lin = Linear(rng, 3, 2)
        with pytest.raises(KeyError):
            lin.load_state({"w": np.zeros((3, 2))})

    def test_state_round_trip(self, rng):
        lin = Linear(rng, 3, 2)
        snapshot = {k: v.copy() for k, v in lin.state().items()}
        lin.w.data += 1.0
        lin.load_state(snapshot)
        np.testing.assert_array_equal(lin.w.data, snapshot["w"])
