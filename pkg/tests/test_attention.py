import numpy as np
import pytest

from ampnet import ops
from ampnet.attention import ChannelAttention, InitAttention, SpatialAttention
from ampnet.errors import DimensionError
from ampnet.layers import ParamStore
from ampnet.network import build_model, count_parameters
from ampnet.tensor import Param, Tape, Tensor

from conftest import fd_grad, rel_err

MINI = dict(ratio=0.25, block_size=9, stages=2, channels=4, seed=0)


def zero(*params):
    for p in params:
        p.data[...] = 0.0


class TestInitAttention:
    def test_zero_mlp_uniform(self, rng):
        att = InitAttention(ParamStore(0), "a", 4, 9, hidden=6)
        zero(att.fc1.weight, att.fc2.weight)
        x0 = rng.normal(size=(2, 9))
        out = att(Tensor(rng.normal(size=(2, 4))), Tensor(x0))
        np.testing.assert_allclose(out.data, x0 / 9, atol=1e-15)

    def test_probability_vector(self, rng):
        att = InitAttention(ParamStore(3), "a", 4, 9)
        a = att.weights(Tensor(rng.normal(scale=5, size=(6, 4)))).data
        assert np.all(a > 0)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)

    def test_gradient_check(self, rng):
        att = InitAttention(ParamStore(1), "a", 4, 9, hidden=5)
        y, x0 = rng.normal(size=(2, 4)), rng.normal(size=(2, 9))
        params = [att.fc1.weight, att.fc1.bias, att.fc2.weight, att.fc2.bias]
        r = rng.normal(size=(2, 9))
        f = lambda: ops.sum(ops.mul(att(Tensor(y), Tensor(x0)), r))  # noqa: E731
        with Tape() as tape:
            out = f()
        tape.backward(out, params)
        for p in params:
            assert rel_err(p.grad, fd_grad(lambda: f().item(), p.data)) < 1e-4, p.name

    def test_shape_mismatch(self):
        att = InitAttention(ParamStore(0), "a", 4, 9)
        with pytest.raises(DimensionError):
            att(Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 9))))


class TestChannelAttention:
    def test_zero_tower_halves(self, rng):
        att = ChannelAttention(ParamStore(0), "c", 4, 2)
        zero(att.conv1.weight, att.conv2.weight)
        f = rng.normal(size=(2, 4, 5, 5))
        np.testing.assert_allclose(att(Tensor(f)).data, f / 2, atol=1e-15)

    def test_range_and_shape(self, rng):
        att = ChannelAttention(ParamStore(2), "c", 4, 2)
        f = Tensor(rng.normal(scale=3, size=(3, 4, 5, 5)))
        a = att.weights(f).data
        assert a.shape == (3, 4, 1, 1)
        assert np.all((a > 0) & (a < 1))
        assert att(f).shape == f.shape

    def test_spatial_permutation_invariance(self, rng):
        att = ChannelAttention(ParamStore(4), "c", 4, 2)
        f = rng.normal(size=(2, 4, 5, 5))
        perm = rng.permutation(25)
        g = f.reshape(2, 4, 25)[:, :, perm].reshape(2, 4, 5, 5)
        np.testing.assert_allclose(att.weights(Tensor(f), "eval").data, att.weights(Tensor(g), "eval").data,
                                   atol=1e-12)

    def test_gradient_check(self, rng):
        store = ParamStore(5)
        att = ChannelAttention(store, "c", 4, 2)
        x = Param("x", rng.normal(size=(2, 4, 3, 3)))
        r = rng.normal(size=(2, 4, 3, 3))
        params = [x] + store.trainable()

        def f():
            with_stats = [(s.mean.copy(), s.var.copy()) for s in store.bn.values()]
            out = ops.sum(ops.mul(att(x), r))
            for s, (m, v) in zip(store.bn.values(), with_stats):
                s.mean, s.var = m, v
            return out

        with Tape() as tape:
            out = f()
        tape.backward(out, params)
        for p in params:
            assert rel_err(p.grad, fd_grad(lambda: f().item(), p.data, 1e-6), floor=1e-6) < 1e-3, p.name

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            ChannelAttention(ParamStore(0), "c", 4)(Tensor(np.zeros((1, 3, 5, 5))))


class TestSpatialAttention:
    def test_zero_conv_halves(self, rng):
        att = SpatialAttention(ParamStore(0), "s", 4)
        zero(att.conv.weight)
        f = rng.normal(size=(1, 4, 5, 5))
        np.testing.assert_allclose(att(Tensor(f)).data, f / 2, atol=1e-15)

    def test_constant_input_constant_map(self):
        att = SpatialAttention(ParamStore(1), "s", 4)
        a = att.weights(Tensor(np.full((1, 4, 5, 5), 0.7))).data
        assert a.shape == (1, 1, 5, 5)
        # with zero padding only the interior sees a full neighbourhood
        np.testing.assert_allclose(a[0, 0, 1:-1, 1:-1], a[0, 0, 2, 2], atol=1e-15)
        assert np.all((a > 0) & (a < 1))

    def test_channel_permutation_equivariance(self, rng):
        att = SpatialAttention(ParamStore(2), "s", 4)
        f = rng.normal(size=(2, 4, 5, 5))
        perm = rng.permutation(4)
        out, out_p = att(Tensor(f)).data, att(Tensor(f[:, perm])).data
        np.testing.assert_allclose(out[:, perm], out_p, atol=1e-12)

    def test_gradient_check(self, rng):
        store = ParamStore(3)
        att = SpatialAttention(store, "s", 4)
        x = Param("x", rng.normal(size=(1, 4, 5, 5)))
        r = rng.normal(size=(1, 4, 5, 5))
        f = lambda: ops.sum(ops.mul(att(x), r))  # noqa: E731
        params = [x, att.conv.weight, att.conv.bias]
        with Tape() as tape:
            out = f()
        tape.backward(out, params)
        for p in params:
            assert rel_err(p.grad, fd_grad(lambda: f().item(), p.data, 1e-6)) < 1e-3, p.name


class TestMultiplicative:
    def test_zero_features_zero_output(self, rng):
        f = Tensor(np.zeros((2, 4, 5, 5)))
        assert not ChannelAttention(ParamStore(0), "c", 4)(f).data.any()
        assert not SpatialAttention(ParamStore(0), "s", 4)(f).data.any()
        att = InitAttention(ParamStore(0), "a", 3, 6)
        assert not att(Tensor(rng.normal(size=(2, 3))), Tensor(np.zeros((2, 6)))).data.any()


class TestAmpaNet:
    def test_zero_attention_paired_forward(self, rng):
        ampa, amp = build_model("ampa-net", **MINI), build_model("amp-net", **MINI)
        for name, p in ampa.store.params.items():
            if "attn" in name:
                p.data[...] = 0.0
        for stage in amp.stages:
            stage.block5.weight.data *= 0.25  # channel gate 0.5 times spatial gate 0.5
        amp.w_q.data /= amp.config.n_p  # uniform softmax over n_p entries
        y = rng.normal(size=(3, amp.config.m_p))
        a, b = ampa.forward(y), amp.forward(y)
        np.testing.assert_allclose(a.x.data, b.x.data, rtol=1e-12, atol=1e-12)
        for (xa, za), (xb, zb) in zip(a.per_stage, b.per_stage):
            assert xa.shape == xb.shape and za.shape == zb.shape
            np.testing.assert_allclose(za.data, zb.data, rtol=1e-12, atol=1e-12)

    def test_shared_params_identical(self):
        ampa, amp = build_model("ampa-net", **MINI), build_model("amp-net", **MINI)
        for name, p in amp.store.params.items():
            np.testing.assert_array_equal(p.data, ampa.store.params[name].data)

    def test_count_exceeds(self):
        assert count_parameters(build_model("ampa-net", **MINI)) > count_parameters(build_model("amp-net", **MINI))

    def test_attention_placement(self):
        net = build_model("ampa-net", **MINI)
        names = set(net.store.params)
        assert "init_attn.fc1.weight" in names
        assert {"stage1.channel_attn.conv1.weight", "stage1.spatial_attn.conv.weight"} <= names
        assert net.kind == "ampa-net"
