import math

import numpy as np
import pytest

from tleseq.autodiff import (
    CHECKPOINT_HEADER,
    ParameterSet,
    Tape,
    Tensor,
    grad_check,
    load_checkpoint,
    save_checkpoint,
)
from tleseq.errors import ShapeError


def scalar(tape, t):
    return t if t.shape == (1,) else tape.sum(t)


def fd_against_tape(make_loss, leaves, tol=1e-6, eps=1e-5):
    """Backward gradients vs central differences, every entry of every leaf."""
    tape = Tape()
    grads = tape.backward(make_loss(tape))
    for leaf in leaves:
        g = np.asarray(grads[id(leaf)], dtype=np.float64).reshape(-1)
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            fp = float(make_loss(Tape()).data[0])
            flat[i] = keep - eps
            fm = float(make_loss(Tape()).data[0])
            flat[i] = keep
            fd = (fp - fm) / (2.0 * eps)
            rel = abs(g[i] - fd) / max(1e-8, abs(g[i]) + abs(fd))
            assert rel <= tol, f"entry {i}: analytic {g[i]} vs fd {fd}"


def signed_away_from_zero(rng, shape):
    # |x| in [0.5, 1.5] so finite differences never straddle the |.| kink
    return rng.uniform(0.5, 1.5, shape) * rng.choice([-1.0, 1.0], shape)


class TestPrimitiveValues:
    def test_matmul(self):
        t = Tape()
        out = t.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_logsumexp_uniform(self):
        out = Tape().logsumexp(Tensor([[0.0, 0.0, 0.0]]))
        assert out.data[0, 0] == pytest.approx(math.log(3), abs=1e-15)

    def test_square_value_and_grad(self):
        t = Tape()
        x = Tensor([-2.0])
        out = t.square(x)
        assert out.data[0] == 4.0
        assert t.backward(out)[id(x)][0] == -4.0

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError) as e:
            Tape().matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))
        assert "(3, 4)" in str(e.value) and "(3, 2)" in str(e.value)
        with pytest.raises(ShapeError):
            Tape().add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))
        with pytest.raises(ShapeError):
            Tape().take_columns(Tensor(np.zeros((2, 3))), [0, 1, 2])


@pytest.mark.parametrize("seed", [0, 1, 2])
class TestPrimitiveGradients:
    def test_matmul(self, seed):
        rng = np.random.default_rng(seed)
        a, b = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(3, 2)))
        fd_against_tape(lambda t: t.sum(t.matmul(a, b)), [a, b])

    @pytest.mark.parametrize("op", ["add", "sub", "mul"])
    def test_elementwise_pairs(self, seed, op):
        rng = np.random.default_rng(seed)
        a, b = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 3)))
        fd_against_tape(lambda t: t.sum(getattr(t, op)(a, b)), [a, b])

    @pytest.mark.parametrize("bias_shape", [(3,), (1, 3)])
    def test_broadcast_over_rows(self, seed, bias_shape):
        rng = np.random.default_rng(seed)
        a, b = Tensor(rng.normal(size=(4, 3))), Tensor(rng.normal(size=bias_shape))
        fd_against_tape(lambda t: t.sum(t.mul(t.add(a, b), b)), [a, b])

    @pytest.mark.parametrize("op", ["tanh", "sigmoid", "square"])
    def test_elementwise_unary(self, seed, op):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(2, 4)))
        fd_against_tape(lambda t: t.sum(getattr(t, op)(a)), [a])

    def test_scalar_mul(self, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(3,)))
        fd_against_tape(lambda t: t.sum(t.scalar_mul(a, -1.7)), [a])

    def test_absolute(self, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(signed_away_from_zero(rng, (2, 3)))
        fd_against_tape(lambda t: t.sum(t.absolute(a)), [a])

    def test_gather_rows_with_duplicates(self, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(4, 3)))
        w = Tensor(rng.normal(size=(3, 3)))
        idx = [0, 2, 0, 1]
        fd_against_tape(lambda t: t.sum(t.tanh(t.matmul(t.gather_rows(a, idx), w))),
                        [a, w])

    def test_take_columns(self, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(3, 4)))
        fd_against_tape(lambda t: t.sum(t.take_columns(a, [1, 3, 1])), [a])

    def test_logsumexp(self, seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(3, 4)))
        fd_against_tape(lambda t: t.sum(t.logsumexp(a)), [a])


class TestBackward:
    def test_square_at_three(self):
        t = Tape()
        x = Tensor([3.0])
        assert t.backward(t.square(x))[id(x)][0] == 6.0

    def test_logsumexp_grad_is_softmax(self):
        z = np.array([[1.0, 2.0, 3.0]])
        t = Tape()
        x = Tensor(z)
        g = t.backward(t.sum(t.logsumexp(x)))[id(x)]
        soft = np.exp(z) / np.exp(z).sum()
        np.testing.assert_allclose(g, soft, atol=1e-12)

    def test_absolute_subgradient_zero_at_kink(self):
        t = Tape()
        x = Tensor([0.0, -1.5, 2.0])
        g = t.backward(t.sum(t.absolute(x)))[id(x)]
        assert g.tolist() == [0.0, -1.0, 1.0]

    def test_rejects_non_scalar(self):
        t = Tape()
        x = Tensor([1.0, 2.0])
        y = t.tanh(x)
        with pytest.raises(ShapeError):
            t.backward(y)

    def test_fanout_accumulates(self):
        # x used twice: d/dx (x*x + x*x) = 4x
        t = Tape()
        x = Tensor([1.5])
        out = t.add(t.mul(x, x), t.mul(x, x))
        assert t.backward(t.sum(out))[id(x)][0] == 6.0

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(8)
        w = Tensor(rng.normal(size=(5, 5)))
        x = Tensor(rng.normal(size=(2, 5)))

        def run():
            t = Tape()
            h = t.tanh(t.matmul(x, w))
            h = t.sigmoid(t.matmul(h, w))
            return t.backward(t.sum(t.square(h)))

        g1, g2 = run(), run()
        assert (g1[id(w)] == g2[id(w)]).all()
        assert (g1[id(x)] == g2[id(x)]).all()

    def test_two_layer_tanh_matches_fd(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.normal(size=(2, 3)))
        w1 = Tensor(rng.normal(size=(3, 4)))
        b1 = Tensor(rng.normal(size=(4,)))
        w2 = Tensor(rng.normal(size=(4, 2)))
        b2 = Tensor(rng.normal(size=(2,)))

        def loss(t):
            h = t.tanh(t.add(t.matmul(x, w1), b1))
            o = t.tanh(t.add(t.matmul(h, w2), b2))
            return t.sum(t.square(o))

        fd_against_tape(loss, [x, w1, b1, w2, b2])

    def test_finite_check_trips_on_overflow(self):
        t = Tape(check_finite=True)
        with np.errstate(over="ignore"), pytest.raises(AssertionError):
            t.mul(Tensor([1e308]), Tensor([1e308]))


class TestGradCheck:
    def test_linear_function(self):
        params = ParameterSet()
        x = params.add("x", [1.0, -2.0, 3.0])
        c = Tensor([0.5, 1.5, -2.5])

        def build():
            t = Tape()
            return t, t.sum(t.mul(x, c))

        assert grad_check(build, params) <= 1e-10

    def test_constant_function(self):
        params = ParameterSet()
        params.add("unused", [1.0, 2.0])

        def build():
            t = Tape()
            return t, t.sum(t.square(Tensor([2.0])))

        assert grad_check(build, params) == 0.0
        assert params.grads["unused"].tolist() == [0.0, 0.0]

    def test_small_network(self):
        rng = np.random.default_rng(3)
        params = ParameterSet()
        w1 = params.add("w1", rng.normal(size=(3, 4)))
        w2 = params.add("w2", rng.normal(size=(4, 1)))
        x = Tensor(rng.normal(size=(2, 3)))

        def build():
            t = Tape()
            h = t.tanh(t.matmul(x, w1))
            return t, t.sum(t.square(t.matmul(h, w2)))

        assert grad_check(build, params) <= 1e-6


class TestParameterSet:
    def test_duplicate_name_rejected(self):
        p = ParameterSet()
        p.add("w", [1.0])
        with pytest.raises(ValueError):
            p.add("w", [2.0])

    def test_accumulate_and_zero(self):
        p = ParameterSet()
        x = p.add("x", [1.0, 2.0])
        t = Tape()
        out = t.sum(t.square(x))
        p.accumulate(t.backward(out))
        assert p.grads["x"].tolist() == [2.0, 4.0]
        p.accumulate(t.backward(out))
        assert p.grads["x"].tolist() == [4.0, 8.0]
        p.zero_grads()
        assert p.grads["x"].tolist() == [0.0, 0.0]

    def test_accumulate_shape_mismatch(self):
        p = ParameterSet()
        x = p.add("x", [1.0, 2.0])
        with pytest.raises(ShapeError):
            p.accumulate({id(x): np.zeros((3, 3))})

    def test_grad_norm(self):
        p = ParameterSet()
        p.add("a", [0.0])
        p.add("b", [0.0, 0.0])
        p.grads["a"][...] = 3.0
        p.grads["b"][...] = [4.0, 0.0]
        assert p.grad_norm() == 5.0

    def test_state_roundtrip_is_a_copy(self):
        p = ParameterSet()
        p.add("w", [[1.0, 2.0]])
        state = p.state_dict()
        state["w"][0, 0] = 99.0
        assert p["w"].data[0, 0] == 1.0
        p.load_state(state)
        assert p["w"].data[0, 0] == 99.0

    def test_load_state_validates(self):
        p = ParameterSet()
        p.add("w", [1.0, 2.0])
        with pytest.raises(KeyError):
            p.load_state({})
        with pytest.raises(ShapeError):
            p.load_state({"w": np.zeros((5,))})


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "enc.w": rng.normal(size=(3, 4)),
            "bias": rng.normal(size=(7,)),
            "scalar": np.array(2.5),
        }
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, arrays)
        back = load_checkpoint(path)
        assert set(back) == set(arrays)
        for k in arrays:
            assert back[k].shape == arrays[k].shape
            assert (back[k] == arrays[k]).all()

    def test_header_literal(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {"w": np.zeros(2)})
        assert path.read_bytes().startswith(b"TLE-CKPT v1\n")
        assert CHECKPOINT_HEADER == b"TLE-CKPT v1\n"

    def test_rejects_bad_header(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"NOT-A-CKPT\n")
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_rejects_newline_in_name(self, tmp_path):
        with pytest.raises(ValueError):
            save_checkpoint(tmp_path / "m.ckpt", {"bad\nname": np.zeros(1)})

    def test_rejects_truncated_payload(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {"w": np.ones(4)})
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(path)
