import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ergorisk.autodiff import Rng, Tensor, checkpoint, clip_global_norm, no_grad, precision, set_debug
from ergorisk.autodiff import functional as F
from ergorisk.autodiff import nn
from ergorisk.autodiff.gradcheck import _cases, check_gradients, primitive_checks, relative_error
from ergorisk.errors import ConfigError, DataError, NumericFault, ShapeError

CASE_NAMES = [name for name, _, _ in _cases(Rng(0))]


@lru_cache(maxsize=None)
def _checks(seed):
    return {r.name: r for r in primitive_checks(seed)}


def _t(x, grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


class TestTape:
    def test_scalar_only(self):
        with pytest.raises(ShapeError):
            _t(np.ones(3)).backward()

    def test_shared_node_accumulates(self):
        with precision(np.float64):
            x = _t([2.0])
            y = F.sum(F.mul(x, x) + x)
            y.backward()
        assert x.grad[0] == pytest.approx(5.0)

    def test_deep_chain_no_recursion_limit(self):
        with precision(np.float64):
            x = _t([1.0])
            y = x
            for _ in range(5000):
                y = F.add(y, 0.0)
            F.sum(y).backward()
        assert x.grad[0] == 1.0

    def test_broadcast_grad_shape(self):
        with precision(np.float64):
            a, b = _t(np.ones((3, 4))), _t(np.ones(4))
            F.sum(F.mul(a, b)).backward()
        assert b.grad.shape == (4,) and np.all(b.grad == 3)

    def test_no_grad(self):
        x = _t([1.0])
        with no_grad():
            y = F.mul(x, 3.0)
        assert not y.requires_grad

    def test_default_float32(self):
        assert Tensor([1, 2]).dtype == np.float32
        with precision(np.float64):
            assert Tensor([1, 2]).dtype == np.float64

    def test_debug_nan_raises(self):
        set_debug(True)
        try:
            with pytest.raises(NumericFault), np.errstate(invalid="ignore"):
                F.log(_t([-1.0]))
        finally:
            set_debug(False)

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError):
            F.matmul(_t(np.ones((2, 3))), _t(np.ones((4, 2))))


class TestPrimitiveValues:
    def test_softmax_rows(self):
        x = _t(np.random.default_rng(0).normal(0, 30, (20, 9)))
        s = F.softmax(x, -1).data
        assert np.abs(s.sum(-1) - 1).max() <= 1e-12 and np.all(s >= 0)

    def test_log_softmax_consistent(self):
        x = _t(np.random.default_rng(1).normal(0, 3, (4, 7)))
        assert np.allclose(np.exp(F.log_softmax(x).data), F.softmax(x).data, atol=1e-14)

    @given(hnp.arrays(np.float64, (6, 10), elements=st.floats(-1e3, 1e3, allow_nan=False)))
    def test_layer_norm_stats(self, x):
        x = x + np.linspace(0, 1, 10)  # avoid constant rows
        y = F.layer_norm(_t(x, False), _t(np.ones(10), False), _t(np.zeros(10), False), eps=0.0).data
        assert np.abs(y.mean(-1)).max() <= 1e-6
        assert np.abs(y.var(-1) - 1).max() <= 1e-5

    def test_gelu_exact_erf(self):
        x = np.linspace(-4, 4, 17)
        want = [0.5 * v * (1 + math.erf(v / math.sqrt(2))) for v in x]
        assert np.allclose(F.gelu(_t(x)).data, want, atol=1e-15)

    def test_conv2d_against_direct_loop(self):
        rng = np.random.default_rng(2)
        x, w, b = rng.normal(size=(2, 3, 7, 6)), rng.normal(size=(4, 3, 3, 2)), rng.normal(size=4)
        s, p = 2, 1
        got = F.conv2d(_t(x), _t(w), _t(b), stride=s, padding=p).data
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        ho, wo = (7 + 2 * p - 3) // s + 1, (6 + 2 * p - 2) // s + 1
        want = np.zeros((2, 4, ho, wo))
        for n in range(2):
            for o in range(4):
                for i in range(ho):
                    for j in range(wo):
                        want[n, o, i, j] = np.sum(xp[n, :, i * s:i * s + 3, j * s:j * s + 2] * w[o]) + b[o]
        assert np.allclose(got, want, atol=1e-12)

    def test_conv2d_unbatched(self):
        x = _t(np.ones((2, 4, 4)))
        w = _t(np.ones((1, 2, 2, 2)))
        assert F.conv2d(x, w, stride=2).shape == (1, 2, 2)

    def test_dropout_modes(self):
        x = _t(np.ones((100, 100)))
        assert F.dropout(x, 0.5, None, train=False) is x
        y = F.dropout(x, 0.25, Rng(0), train=True).data
        assert set(np.unique(y)) <= {0.0, 1.0 / 0.75}
        assert abs(y.mean() - 1.0) < 0.05
        same = F.dropout(x, 0.25, Rng(0), train=True).data
        assert np.array_equal(y, same)


class TestGradients:
    @pytest.mark.parametrize("name", CASE_NAMES)
    def test_primitive(self, name):
        for seed in range(3):
            res = _checks(seed)[name]
            assert res.ok(1e-3), (seed, res)

    def test_detects_wrong_gradient(self):
        from ergorisk.autodiff.tensor import make_result

        def bad_square(a):
            return make_result(a.data ** 2, (a,), lambda g: (g * a.data,), "bad")  # missing factor 2

        with precision(np.float64):
            x = _t([0.3, -1.2])
            res = check_gradients(lambda: F.sum(bad_square(x)), [x])
        assert not res.ok(1e-3)

    def test_relu_kink_crossing_detected(self):
        with precision(np.float64):
            x = _t([5e-5, 0.7])
            res = check_gradients(lambda: F.sum(F.relu(x)), [x], h=1e-4)
        assert res.kink_crossings == 1

    def test_smooth_point_has_no_crossings(self):
        with precision(np.float64):
            x = _t([0.5, -0.7])
            res = check_gradients(lambda: F.sum(F.relu(x)), [x], h=1e-4)
        assert res.kink_crossings == 0 and res.ok(1e-9)

    def test_relative_error_floor(self):
        assert relative_error(np.array([1e-12]), np.array([0.0])) <= 1e-6
        assert relative_error(np.array([1.0]), np.array([0.0])) == 1.0

    def test_clip_global_norm(self):
        g = [np.array([3.0]), np.array([4.0])]
        clipped, norm = clip_global_norm(g, 1.0)
        assert norm == 5.0 and np.allclose([c[0] for c in clipped], [0.6, 0.8])
        same, _ = clip_global_norm(g, 10.0)
        assert all(a is b for a, b in zip(same, g))


class TestAttention:
    def _setup(self, d=8, heads=2):
        rng = Rng(3)
        with precision(np.float64):
            params = nn.init_attention(rng, d)
        q = _t(rng.child(1).normal(0, 1, (5, d)), False)
        kv = _t(rng.child(2).normal(0, 1, (7, d)), False)
        return params, q, kv

    def test_rows_sum_to_one(self):
        params, q, kv = self._setup()
        ws = []
        nn.multi_head_attention(q, kv, kv, 2, params, ws)
        assert ws[0].shape == (2, 5, 7) and np.abs(ws[0].sum(-1) - 1).max() <= 1e-12

    def test_key_value_permutation_invariance(self):
        params, q, kv = self._setup()
        perm = np.random.default_rng(0).permutation(7)
        kv2 = _t(kv.data[perm], False)
        a = nn.multi_head_attention(q, kv, kv, 2, params).data
        b = nn.multi_head_attention(q, kv2, kv2, 2, params).data
        assert np.abs(a - b).max() <= 1e-12

    def test_heads_must_divide(self):
        params, q, kv = self._setup()
        with pytest.raises(ConfigError):
            nn.multi_head_attention(q, kv, kv, 3, params)

    def test_single_key_passes_value_through(self):
        params, q, kv = self._setup()
        one = _t(kv.data[:1], False)
        out = nn.multi_head_attention(q, one, one, 2, params).data
        v = one.data @ params["w_v"].data + params["b_v"].data
        want = v @ params["w_o"].data + params["b_o"].data
        assert np.allclose(out, np.broadcast_to(want, out.shape), atol=1e-12)


class TestRngAndCheckpoint:
    def test_rng_streams(self):
        a = Rng(5).child(1, 2).random(4)
        b = Rng(5).child(1, 2).random(4)
        c = Rng(5).child(1, 3).random(4)
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        named = {"a.w": rng.normal(size=(3, 4)).astype(np.float32), "scalar": np.float32(2.5).reshape(()),
                 "empty": np.zeros((0, 3), np.float32), "ünï": rng.normal(size=5).astype(np.float32)}
        checkpoint.save(tmp_path / "c.ergk", named)
        back = checkpoint.load(tmp_path / "c.ergk")
        assert list(back) == list(named)
        for k in named:
            assert back[k].shape == named[k].shape and back[k].tobytes() == named[k].tobytes()
        assert checkpoint.dumps(back) == (tmp_path / "c.ergk").read_bytes()

    @pytest.mark.parametrize("blob", [b"", b"NOPE!", checkpoint.MAGIC + b"\x05\x00"])
    def test_corrupt(self, blob):
        with pytest.raises(DataError):
            checkpoint.loads(blob)

    def test_truncated_tensor(self):
        buf = checkpoint.dumps({"x": np.ones(10, np.float32)})
        with pytest.raises(DataError, match="truncated"):
            checkpoint.loads(buf[:-4])
