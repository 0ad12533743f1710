import numpy as np
import pytest

from afnet import autograd as ag
from afnet.autograd import Tensor
from afnet.errors import CheckpointFormatError, CorruptCheckpointError, ShapeError
from afnet.model import (
    AfConfig,
    DrnConfig,
    _support_box,
    afn_forward,
    attentive_filter,
    build_model,
    drm_forward,
    heatmap,
    load_checkpoint,
    parameter_layout,
    receptive_field_report,
    residual_unit,
    rf_recurrence,
    save_checkpoint,
    theoretical_rf,
    xavier_init,
)
from helpers import micro_model


def zero_af(model):
    for k in model.params:
        if k.startswith("af."):
            model.params[k] = np.zeros_like(model.params[k])
    return model


class TestAttentiveFilter:
    @pytest.fixture
    def S(self, rng):
        return rng.standard_normal((2, 1, 16, 32))

    def test_zero_unet_sigmoid_gives_half(self, S):
        m = zero_af(micro_model(nonlinearity="sigmoid"))
        S_star, A = attentive_filter(S, m.tensors(), m.af)
        np.testing.assert_array_equal(A.data, 0.5)
        np.testing.assert_allclose(S_star.data, 1.5 * S, rtol=1e-15)

    def test_zero_unet_tanh_passes_input_through(self, S):
        m = zero_af(micro_model(nonlinearity="tanh"))
        S_star, A = attentive_filter(S, m.tensors(), m.af)
        np.testing.assert_array_equal(A.data, 0.0)
        assert S_star.data.tobytes() == S.tobytes()

    def test_softmax_t_rows_sum_to_one(self, S):
        m = micro_model(nonlinearity="softmaxT", seed=3)
        _, A = attentive_filter(S, m.tensors(), m.af)
        np.testing.assert_allclose(A.data.sum(axis=3), 1.0, atol=1e-9)

    def test_softmax_f_columns_sum_to_one(self, S):
        m = micro_model(nonlinearity="softmaxF", seed=3)
        _, A = attentive_filter(S, m.tensors(), m.af)
        np.testing.assert_allclose(A.data.sum(axis=2), 1.0, atol=1e-9)

    @pytest.mark.parametrize("nl,lo,hi", [("sigmoid", 0, 1), ("tanh", -1, 1)])
    def test_open_ranges(self, S, nl, lo, hi):
        m = micro_model(nonlinearity=nl, seed=5)
        _, A = attentive_filter(S, m.tensors(), m.af)
        assert A.shape == S.shape
        assert np.all(A.data > lo) and np.all(A.data < hi)

    def test_without_residual(self, S):
        m = micro_model(seed=2)
        cfg = AfConfig("sigmoid", unet_levels=2, use_residual_S=False)
        S_star, A = attentive_filter(S, m.tensors(), cfg)
        np.testing.assert_allclose(S_star.data, A.data * S)

    def test_odd_shapes_keep_size(self, rng):
        m = build_model((20, 37), AfConfig(unet_levels=2), DrnConfig.micro(2), dtype=np.float64)
        S = rng.standard_normal((1, 1, 20, 37))
        _, A = attentive_filter(S, m.tensors(), m.af)
        assert A.shape == S.shape

    @pytest.mark.parametrize("kw", [{"nonlinearity": "softplus"}, {"unet_activation": "tanh"}, {"unet_levels": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            AfConfig(**kw)

    def test_too_small_for_levels(self):
        with pytest.raises(ShapeError):
            build_model((8, 32), AfConfig(unet_levels=4), DrnConfig.micro(2))

    def test_heatmap_shape_check(self, rng):
        m = micro_model()
        assert heatmap(m, rng.standard_normal((16, 32))).shape == (16, 32)
        with pytest.raises(ShapeError):
            heatmap(m, rng.standard_normal((16, 64)))


class TestDrm:
    def test_spatial_halving(self, rng):
        m = build_model((64, 128), None, DrnConfig.micro(1), dtype=np.float64)
        x = Tensor(rng.standard_normal((1, 16, 64, 128)))
        bp = {k[len("drn.b0."):]: v for k, v in m.tensors().items() if k.startswith("drn.b0.")}
        assert drm_forward(x, bp, 2, "relu", mode="train").shape == (1, 32, 32, 64)

    def test_zero_residual_branch_is_identity(self, rng):
        m = build_model((32, 32), None, DrnConfig(), dtype=np.float64)
        bp = {k[len("drn.b1."):]: v for k, v in m.params.items() if k.startswith("drn.b1.")}
        for name in ("conv1.w", "conv2.w", "conv2.b"):
            bp[name] = np.zeros_like(bp[name])
        x = rng.standard_normal((2, 32, 8, 8))
        y = residual_unit(Tensor(x), {k: Tensor(v) for k, v in bp.items()}, "relu", mode="train")
        np.testing.assert_array_equal(y.data, x)

    def test_reference_channels_and_dilations(self):
        drn = DrnConfig()
        assert drn.in_channels == (16, 32, 32, 32, 32)
        assert drn.out_channels == (32, 32, 32, 32, 32)
        assert drn.dilations == (2, 4, 4, 8, 8)
        shapes = dict((n, s) for n, s, _ in parameter_layout(None, drn))
        assert shapes["drn.stem.w"] == (16, 1, 3, 3)
        assert shapes["drn.b0.conv1.w"] == (32, 16, 3, 3)
        assert shapes["drn.b0.proj.w"] == (32, 16, 1, 1)
        for j in range(1, 5):
            assert shapes[f"drn.b{j}.conv1.w"] == (32, 32, 3, 3)
            assert f"drn.b{j}.proj.w" not in shapes
        assert [shapes[f"drn.b{j}.dil.w"] for j in range(5)] == [(32, 32, 3, 3)] * 5

    def test_mismatched_block_channels(self):
        with pytest.raises(ValueError):
            DrnConfig((2, 4), (16, 16), (32, 32))


class TestForward:
    def test_zero_head_gives_bias(self, rng):
        m = micro_model()
        m.params["drn.head.fc.w"] = np.zeros((1, 1))
        m.params["drn.head.fc.b"] = np.array([0.37])
        logits, _ = afn_forward(rng.standard_normal((3, 16, 32)), m)
        np.testing.assert_array_equal(logits.data, 0.37)

    def test_batching_preserves_order(self, rng):
        m = micro_model(seed=4)
        X = rng.standard_normal((4, 16, 32))
        batch, _ = afn_forward(X, m)
        single = [afn_forward(X[i : i + 1], m)[0].data[0] for i in range(4)]
        assert batch.shape == (4,)
        np.testing.assert_allclose(batch.data, single, rtol=1e-12)

    def test_permutation_equivariant_eval(self, rng):
        m = micro_model(seed=4, dtype=np.float32)
        X = rng.standard_normal((5, 16, 32)).astype(np.float32)
        perm = np.array([3, 0, 4, 1, 2])
        a, _ = afn_forward(X, m)
        b, _ = afn_forward(X[perm], m)
        assert a.data[perm].tobytes() == b.data.tobytes()

    def test_train_mode_updates_running_stats(self, rng):
        m = micro_model()
        before = m.stats["drn.b0.bn1"].mean.copy()
        afn_forward(rng.standard_normal((2, 16, 32)), m, "train")
        assert not np.array_equal(before, m.stats["drn.b0.bn1"].mean)

    def test_plain_drn(self, rng):
        m = build_model((16, 32), None, DrnConfig.micro(2), dtype=np.float64)
        logits, A = afn_forward(rng.standard_normal((2, 16, 32)), m)
        assert A is None and logits.shape == (2,)

    def test_micro_gradients(self, rng):
        m = micro_model(seed=6)
        X = rng.standard_normal((2, 1, 16, 32))
        y = np.array([1, 0])

        def loss(p):
            logits, _ = afn_forward(X, m.copy(), "train", params=p)
            return ag.bce_with_logits(logits, y)

        report = ag.grad_check(loss, m.params, tolerance=1e-3, max_entries=3, kink_halvings=10)
        assert report.passed, report.errors


class TestXavier:
    def test_seeded(self):
        a, b = micro_model(seed=11), micro_model(seed=11)
        assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
        c = micro_model(seed=12)
        assert not np.array_equal(a.params["drn.stem.w"], c.params["drn.stem.w"])

    def test_biases_zero_and_bn_identity(self):
        m = micro_model(seed=1)
        for name, _, kind in parameter_layout(m.af, m.drn):
            if kind in ("bias", "beta"):
                assert np.all(m.params[name] == 0), name
            if kind == "gamma":
                assert np.all(m.params[name] == 1), name

    def test_variance_of_32_to_32_conv(self):
        m = xavier_init(build_model((32, 32), None, DrnConfig(), dtype=np.float64), seed=0)
        w = np.concatenate([m.params[f"drn.b{j}.conv2.w"].ravel() for j in range(5)])
        assert w.size >= 10_000
        fan = 32 * 9 + 32 * 9
        assert abs(w.var() / (2 / fan) - 1) < 0.2
        assert np.abs(w).max() <= np.sqrt(6 / fan)


class TestReceptiveField:
    def test_recurrence_single_layers(self):
        assert rf_recurrence([(3, 1, 1)]) == [3]
        assert rf_recurrence([(3, 2, 1)]) == [5]

    @pytest.mark.parametrize("d,size", [(1, 3), (2, 5), (4, 9)])
    def test_single_conv_gradient_support(self, rng, d, size):
        x = Tensor(rng.standard_normal((1, 1, 21, 21)), requires_grad=True)
        y = ag.conv2d(x, rng.standard_normal((1, 1, 3, 3)) + 2.0, dilation=d, padding=d)
        sel = np.zeros(y.shape)
        sel[0, 0, 10, 10] = 1
        g = ag.backward(ag.sum_all(ag.mul(y, sel)))[x]
        (h, w), _ = _support_box(g[0, 0] != 0)
        assert (h, w) == (size, size)

    def test_theoretical_values(self):
        assert theoretical_rf(DrnConfig()) == [16, 58, 142, 438, 1030]

    def test_micro_report(self):
        report = receptive_field_report(micro_model(seed=2), n_draws=6)
        sizes = [r.empirical for r in report]
        assert all(r.contiguous for r in report)
        assert sizes[0][0] <= sizes[1][0] and sizes[0][1] <= sizes[1][1]
        assert all(max(r.empirical) <= r.theoretical for r in report)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path, rng):
        m = micro_model(seed=8, dtype=np.float32)
        afn_forward(rng.standard_normal((2, 16, 32)).astype(np.float32), m, "train")
        save_checkpoint(m, tmp_path / "m.afnc")
        back = load_checkpoint(tmp_path / "m.afnc")
        assert back.af == m.af and back.drn == m.drn and back.input_shape == m.input_shape
        assert list(back.params) == list(m.params)
        for k in m.params:
            assert back.params[k].tobytes() == m.params[k].tobytes()
        for k in m.stats:
            assert back.stats[k].mean.tobytes() == m.stats[k].mean.tobytes()
            assert back.stats[k].var.tobytes() == m.stats[k].var.tobytes()
        X = rng.standard_normal((3, 16, 32)).astype(np.float32)
        assert afn_forward(X, m)[0].data.tobytes() == afn_forward(X, back)[0].data.tobytes()

    def test_plain_drn_round_trip(self, tmp_path):
        m = build_model((32, 32), None, DrnConfig.micro(3))
        save_checkpoint(m, tmp_path / "d.afnc")
        assert load_checkpoint(tmp_path / "d.afnc").af is None

    def test_truncated(self, tmp_path):
        m = micro_model(dtype=np.float32)
        save_checkpoint(m, tmp_path / "m.afnc")
        blob = (tmp_path / "m.afnc").read_bytes()
        for cut in (len(blob) - 1, len(blob) // 2, 9):
            (tmp_path / "t.afnc").write_bytes(blob[:cut])
            with pytest.raises(CorruptCheckpointError):
                load_checkpoint(tmp_path / "t.afnc")

    def test_bit_flip(self, tmp_path):
        save_checkpoint(micro_model(dtype=np.float32), tmp_path / "m.afnc")
        blob = bytearray((tmp_path / "m.afnc").read_bytes())
        blob[len(blob) // 2] ^= 0x10
        (tmp_path / "m.afnc").write_bytes(bytes(blob))
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(tmp_path / "m.afnc")

    def test_wrong_magic(self, tmp_path):
        save_checkpoint(micro_model(dtype=np.float32), tmp_path / "m.afnc")
        blob = (tmp_path / "m.afnc").read_bytes()
        (tmp_path / "m.afnc").write_bytes(b"NOPE" + blob[4:])
        with pytest.raises(CheckpointFormatError) as exc:
            load_checkpoint(tmp_path / "m.afnc")
        assert not isinstance(exc.value, CorruptCheckpointError)

    def test_wrong_version(self, tmp_path):
        save_checkpoint(micro_model(dtype=np.float32), tmp_path / "m.afnc")
        blob = (tmp_path / "m.afnc").read_bytes()
        (tmp_path / "m.afnc").write_bytes(blob[:4] + (7).to_bytes(4, "little") + blob[8:])
        with pytest.raises(CheckpointFormatError, match="version"):
            load_checkpoint(tmp_path / "m.afnc")
