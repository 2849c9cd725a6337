import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lungx import functional as F
from lungx.gradcheck import gradcheck
from lungx.tensor import Tensor


def direct_conv(x, k, stride, pads):
    """Brute-force cross-correlation with explicit (top, bottom, left, right) padding."""
    b, c, h, w = x.shape
    o, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), pads[:2], pads[2:]))
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    out = np.zeros((b, o, ho, wo))
    for n in range(b):
        for q in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[n, q, i, j] = np.sum(patch * k[q])
    return out


class TestConv2d:
    def test_identity_kernel(self):
        x = np.arange(9.0).reshape(1, 1, 3, 3)
        out = F.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), stride=1)
        np.testing.assert_array_equal(out.data, x)

    def test_all_ones_valid(self):
        out = F.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), padding=0)
        assert out.shape == (1, 1, 1, 1)
        assert out.data.item() == direct_conv(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), 1, (0, 0, 0, 0)).item() == 9.0

    def test_stride8_chain_reaches_38(self):
        x = Tensor(np.zeros((1, 1, 300, 300)))
        k = Tensor(np.zeros((1, 1, 3, 3)))
        for _ in range(3):
            x = F.conv2d(x, k, stride=2, padding="same")
        assert x.shape[2:] == (38, 38)

    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("hw", [(5, 5), (6, 7), (4, 9)])
    def test_matches_brute_force_same_padding(self, stride, hw):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3) + hw)
        k = rng.standard_normal((4, 3, 3, 3))
        bias = rng.standard_normal(4)
        ho, pt, pb = F.same_padding(hw[0], 3, stride)
        wo, pl, pr = F.same_padding(hw[1], 3, stride)
        ref = direct_conv(x, k, stride, (pt, pb, pl, pr)) + bias[None, :, None, None]
        out = F.conv2d(Tensor(x), Tensor(k), Tensor(bias), stride=stride)
        assert out.shape[2:] == (ho, wo)
        np.testing.assert_allclose(out.data, ref, atol=1e-12)

    def test_no_kernel_flip(self):
        x = np.zeros((1, 1, 3, 3))
        x[0, 0, 1, 1] = 1.0
        k = np.arange(9.0).reshape(1, 1, 3, 3)
        out = F.conv2d(Tensor(x), Tensor(k), padding="same").data[0, 0]
        # cross-correlation: a centred impulse reproduces the kernel rotated by 180 degrees
        np.testing.assert_array_equal(out, k[0, 0, ::-1, ::-1])

    def test_extra_padding_goes_bottom_right(self):
        # size 4, kernel 2, stride 1 -> total pad 1, all of it after
        assert F.same_padding(4, 2, 1) == (4, 0, 1)
        assert F.same_padding(5, 3, 2) == (3, 1, 1)
        assert F.same_padding(6, 3, 2) == (3, 0, 1)

    def test_channel_mismatch_names_shapes(self):
        with pytest.raises(ValueError, match=r"\(1, 2, 4, 4\).*\(3, 3, 3, 3\)"):
            F.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((3, 3, 3, 3))))

    def test_bad_stride(self):
        with pytest.raises(ValueError):
            F.conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), stride=0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 512), st.sampled_from([1, 2]), st.sampled_from([1, 3, 5, 7]))
def test_same_padding_output_is_ceil(size, stride, kernel):
    out, before, after = F.same_padding(size, kernel, stride)
    assert out == math.ceil(size / stride)
    assert after - before in (0, 1)
    assert (out - 1) * stride + kernel <= size + before + after


class TestDepthwise:
    def test_identity_kernels(self):
        x = np.random.default_rng(1).standard_normal((2, 3, 4, 5))
        k = np.zeros((3, 1, 3, 3))
        k[:, 0, 1, 1] = 1.0
        np.testing.assert_array_equal(F.depthwise_conv2d(Tensor(x), Tensor(k)).data, x)

    def test_per_channel_scaling(self):
        x = np.random.default_rng(2).standard_normal((1, 2, 4, 4))
        k = np.array([[[[2.0]]], [[[0.0]]]])
        out = F.depthwise_conv2d(Tensor(x), Tensor(k)).data
        np.testing.assert_array_equal(out[:, 0], 2.0 * x[:, 0])
        np.testing.assert_array_equal(out[:, 1], np.zeros_like(x[:, 1]))

    @pytest.mark.parametrize("stride", [1, 2])
    def test_matches_per_channel_conv(self, stride):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 7, 6))
        k = rng.standard_normal((3, 1, 3, 3))
        out = F.depthwise_conv2d(Tensor(x), Tensor(k), stride=stride).data
        for c in range(3):
            ref = F.conv2d(Tensor(x[:, c:c + 1]), Tensor(k[c:c + 1]), stride=stride).data
            np.testing.assert_allclose(out[:, c:c + 1], ref, atol=1e-12)

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal((1, 2, 3, 3))
        rep = gradcheck(lambda x, k: (F.depthwise_conv2d(x, k, stride=2) * w).sum(),
                        [rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((2, 1, 3, 3))])
        assert rep.passed, rep.message


class TestPooling:
    grid = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])

    def test_global_avg(self):
        assert F.global_pool(Tensor(self.grid), "avg").data.item() == 2.5

    def test_global_max(self):
        assert F.global_pool(Tensor(self.grid), "max").data.item() == 4.0

    def test_constant_input(self):
        x = Tensor(np.full((1, 2, 4, 4), 0.7))
        for kind in ("max", "avg"):
            np.testing.assert_allclose(F.pool2d(x, kind, 2).data, 0.7)
            np.testing.assert_allclose(F.global_pool(x, kind).data, 0.7)

    def test_window_too_large(self):
        with pytest.raises(ValueError, match="larger than input"):
            F.pool2d(Tensor(np.zeros((1, 1, 2, 2))), "max", 3)

    def test_max_backward_first_index_on_ties(self):
        x = Tensor(np.full((1, 1, 2, 2), 5.0), requires_grad=True)
        F.pool2d(x, "max", 2).sum().backward()
        np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])
        y = Tensor(np.full((1, 1, 2, 2), 5.0), requires_grad=True)
        F.global_pool(y, "max").sum().backward()
        np.testing.assert_array_equal(y.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_avg_backward_uniform(self):
        x = Tensor(np.random.default_rng(0).random((1, 1, 4, 4)), requires_grad=True)
        F.pool2d(x, "avg", 2).sum().backward()
        np.testing.assert_allclose(x.grad, 0.25)


class TestBilinear:
    def test_identity(self):
        x = np.random.default_rng(0).standard_normal((2, 3, 5, 4))
        np.testing.assert_array_equal(F.bilinear_resize(Tensor(x), 5, 4).data, x)

    def test_two_by_two_to_one(self):
        # half-pixel centre: src = (0 + 0.5) * 2 - 0.5 = 0.5 on both axes -> mean of all four
        out = F.bilinear_resize(Tensor(np.array([[[[0.0, 1.0], [2.0, 3.0]]]])), 1, 1)
        assert out.data.item() == 1.5

    @pytest.mark.parametrize("size", [(1, 1), (3, 7), (9, 2)])
    def test_constant_preserved(self, size):
        out = F.bilinear_resize(Tensor(np.full((1, 1, 4, 5), 0.3)), *size)
        np.testing.assert_allclose(out.data, 0.3)

    def test_upsample_hand_values(self):
        # 1-D [0, 1] -> 4: src = -0.25, 0.25, 0.75, 1.25 clamped to [0, 1]
        out = F.bilinear_resize(Tensor(np.array([[[[0.0, 1.0]]]])), 1, 4)
        np.testing.assert_allclose(out.data[0, 0, 0], [0.0, 0.25, 0.75, 1.0])


class TestActivations:
    def test_sigmoid_zero(self):
        assert F.sigmoid(Tensor(np.array(0.0))).data == 0.5

    def test_gelu_values(self):
        assert F.gelu(Tensor(np.array(0.0))).data == 0.0
        phi1 = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
        assert F.gelu(Tensor(np.array(1.0))).data.item() == pytest.approx(phi1, abs=1e-15)
        assert phi1 == pytest.approx(0.841345, abs=1e-6)

    def test_silu_relu(self):
        x = np.array([-2.0, 0.0, 3.0])
        np.testing.assert_allclose(F.silu(Tensor(x)).data, x / (1 + np.exp(-x)))
        np.testing.assert_array_equal(F.relu(Tensor(x)).data, [0.0, 0.0, 3.0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=20))
    def test_sigmoid_strictly_inside_unit_interval(self, xs):
        s = F.sigmoid(Tensor(np.array(xs))).data
        assert np.all((s > 0) & (s < 1))


class TestNormalisation:
    def test_softmax_constant_row(self):
        out = F.softmax(Tensor(np.full((2, 5), 3.0)), axis=-1).data
        np.testing.assert_allclose(out, 0.2)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
    def test_softmax_is_distribution(self, xs):
        s = F.softmax(Tensor(np.array(xs)[None]), axis=-1).data
        assert np.all(s >= 0)
        assert abs(s.sum() - 1.0) < 1e-6

    def test_softmax_zero_length_rejected(self):
        with pytest.raises(ValueError):
            F.softmax(Tensor(np.zeros((2, 0))), axis=-1)

    def test_layernorm_standardises(self):
        x = np.array([[1.0, 2.0, 3.0]])
        out = F.layernorm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-6).data
        ref = (x - x.mean()) / np.sqrt(x.var() + 1e-6)
        np.testing.assert_allclose(out, ref, atol=1e-12)
        assert abs(out.mean()) < 1e-12
        assert out.var() == pytest.approx(1.0, abs=1e-5)

    def test_layernorm_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            F.layernorm(Tensor(np.ones((1, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0)

    def test_batchnorm_eval_unit_stats_is_affine(self):
        x = np.random.default_rng(0).standard_normal((4, 3, 2, 2))
        g, b = np.array([2.0, 0.5, -1.0]), np.array([0.1, 0.2, 0.3])
        out = F.batchnorm(Tensor(x), Tensor(g), Tensor(b), np.zeros(3), np.ones(3), False, eps=1e-5).data
        ref = x / np.sqrt(1 + 1e-5) * g[None, :, None, None] + b[None, :, None, None]
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_batchnorm_running_stats_only_move_in_train(self):
        x = np.random.default_rng(1).standard_normal((8, 2, 3, 3)) * 3 + 1
        rm, rv = np.zeros(2), np.ones(2)
        F.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, False)
        np.testing.assert_array_equal(rm, 0.0)
        np.testing.assert_array_equal(rv, 1.0)
        out = F.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True, momentum=0.1).data
        n = 8 * 9
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * n / (n - 1))
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)


class TestDropout:
    def test_eval_and_zero_rate_are_identity(self):
        x = Tensor(np.random.default_rng(0).random((3, 4)))
        assert F.dropout(x, 0.5, False) is x
        assert F.dropout(x, 0.0, True, np.random.default_rng(0)) is x

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            F.dropout(Tensor(np.ones(3)), 1.0, True, np.random.default_rng(0))

    def test_monte_carlo_survival_and_expectation(self):
        x = Tensor(np.ones(10_000))
        out = F.dropout(x, 0.5, True, np.random.default_rng(123)).data
        survivors = np.mean(out != 0)
        sigma = math.sqrt(0.25 / 10_000)
        assert abs(survivors - 0.5) < 3 * sigma
        assert abs(out.mean() - 1.0) < 0.05
        np.testing.assert_array_equal(out[out != 0], 2.0)


def test_linear_matches_numpy():
    rng = np.random.default_rng(0)
    x, w, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((5, 4)), rng.standard_normal(5)
    np.testing.assert_allclose(F.linear(Tensor(x), Tensor(w), Tensor(b)).data, x @ w.T + b)
    with pytest.raises(ValueError):
        F.linear(Tensor(x), Tensor(rng.standard_normal((5, 3))))
