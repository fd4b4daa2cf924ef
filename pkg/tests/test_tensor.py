import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from threadpoolctl import threadpool_limits

from conftest import random_conv
from lipt.errors import ShapeError
from lipt.tensor import (
    ConvWeights,
    SplitMix64,
    avg_pool3x3_same,
    conv2d,
    crop,
    pad_reflect,
    pixel_shuffle,
    relu,
    rng_normal,
)
from oracles import naive_conv2d


class TestConv2d:
    def test_identity_kernel(self):
        x = np.ones((1, 1, 3, 3), np.float32)
        k = np.zeros((1, 1, 3, 3), np.float32)
        k[0, 0, 1, 1] = 1
        np.testing.assert_array_equal(conv2d(x, ConvWeights(k, np.zeros(1, np.float32))), x)

    def test_scalar(self):
        w = ConvWeights(np.full((1, 1, 1, 1), 3.0, np.float32), np.array([1.0], np.float32))
        out = conv2d(np.array([[[[2.0]]]], np.float32), w)
        assert out.tolist() == [[[[7.0]]]]

    def test_matches_naive_oracle(self, rng):
        x = rng.standard_normal((1, 4, 8, 8)).astype(np.float32)
        w = random_conv(rng, 8, 4, 3)
        ref = naive_conv2d(x, w.kernel, w.bias, padding=1)
        assert np.abs(conv2d(x, w) - ref).max() <= 1e-5

    @pytest.mark.parametrize("k,pad", [(1, 0), (3, 0), (3, 1), (3, 2)])
    def test_paddings_match_oracle(self, rng, k, pad):
        x = rng.standard_normal((2, 3, 5, 6)).astype(np.float32)
        w = random_conv(rng, 4, 3, k)
        ref = naive_conv2d(x, w.kernel, w.bias, padding=pad)
        out = conv2d(x, w, padding=pad)
        assert out.shape == ref.shape
        assert np.abs(out - ref).max() <= 1e-5

    @pytest.mark.parametrize("groups", [2, 4])
    def test_grouped_and_depthwise(self, rng, groups):
        x = rng.standard_normal((1, 4, 6, 6)).astype(np.float32)
        w = random_conv(rng, 4, 4, 3, groups=groups)
        ref = naive_conv2d(x, w.kernel, w.bias, padding=1, groups=groups)
        assert np.abs(conv2d(x, w) - ref).max() <= 1e-5

    def test_depthwise_equals_per_channel(self, rng):
        x = rng.standard_normal((1, 3, 7, 7)).astype(np.float32)
        w = random_conv(rng, 3, 3, 3, groups=3)
        out = conv2d(x, w)
        for ch in range(3):
            single = ConvWeights(w.kernel[ch:ch + 1], w.bias[ch:ch + 1])
            np.testing.assert_allclose(out[:, ch:ch + 1], conv2d(x[:, ch:ch + 1], single), atol=1e-6)

    def test_linearity(self, rng):
        x = rng.standard_normal((1, 4, 8, 8)).astype(np.float32)
        y = rng.standard_normal((1, 4, 8, 8)).astype(np.float32)
        w = random_conv(rng, 5, 4, 3)
        w.bias[:] = 0
        lhs = conv2d(2.5 * x - 0.75 * y, w)
        rhs = 2.5 * conv2d(x, w) - 0.75 * conv2d(y, w)
        assert np.abs(lhs - rhs).max() <= 1e-4 * np.abs(rhs).max()

    def test_shape_mismatch_names_both_shapes(self):
        w = ConvWeights.zeros(2, 3, 3)
        with pytest.raises(ShapeError, match=r"\(1, 4, 5, 5\).*\(2, 3, 3, 3\)"):
            conv2d(np.zeros((1, 4, 5, 5), np.float32), w)

    def test_float64_preserved(self, rng):
        x = rng.standard_normal((1, 2, 4, 4))
        assert conv2d(x, random_conv(rng, 2, 2, 3)).dtype == np.float64

    def test_thread_count_does_not_change_bits(self, rng):
        x = rng.standard_normal((2, 16, 24, 24)).astype(np.float32)
        w = random_conv(rng, 16, 16, 3)
        with threadpool_limits(limits=1):
            a = conv2d(x, w)
        b = conv2d(x, w)
        np.testing.assert_array_equal(a, b)


class TestElementwise:
    def test_relu(self, rng):
        assert relu(np.array([-1.0, 0.0, 2.0])).tolist() == [0, 0, 2]
        assert not relu(-np.ones((1, 1, 2, 2))).any()
        x = rng.standard_normal((1, 2, 5, 5))
        out = relu(x)
        assert np.all((out == 0) | (out == x))
        assert np.all(out >= 0)

    def test_avg_pool_constant(self):
        out = avg_pool3x3_same(np.full((1, 1, 4, 4), 2.0))
        assert out[0, 0, 1, 1] == pytest.approx(2.0)
        assert out[0, 0, 0, 0] == pytest.approx(2.0 * 4 / 9)

    def test_avg_pool_single_pixel(self):
        assert avg_pool3x3_same(np.full((1, 1, 1, 1), 9.0)).item() == pytest.approx(1.0)

    def test_avg_pool_matches_conv(self, rng):
        x = rng.standard_normal((1, 3, 6, 6)).astype(np.float32)
        ref = naive_conv2d(x, np.full((3, 1, 3, 3), 1 / 9), np.zeros(3), padding=1, groups=3)
        assert np.abs(avg_pool3x3_same(x) - ref).max() <= 1e-6


class TestPixelShuffle:
    def test_identity(self, rng):
        x = rng.standard_normal((1, 3, 4, 4))
        np.testing.assert_array_equal(pixel_shuffle(x, 1), x)

    def test_definition(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
        assert pixel_shuffle(x, 2).tolist() == [[[[1.0, 2.0], [3.0, 4.0]]]]

    def test_inverse_via_index_map(self, rng):
        x = rng.standard_normal((1, 12, 4, 4)).astype(np.float32)
        y = pixel_shuffle(x, 2)
        back = np.empty_like(x)
        for o in range(3):
            for a in range(2):
                for b in range(2):
                    back[0, o * 4 + a * 2 + b] = y[0, o, a::2, b::2]
        np.testing.assert_array_equal(back, x)

    def test_rejects_bad_channels(self):
        with pytest.raises(ShapeError):
            pixel_shuffle(np.zeros((1, 5, 2, 2)), 2)

    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_multiset_preserved(self, r, o, hw, seed):
        x = np.random.default_rng(seed).standard_normal((1, o * r * r, hw, hw))
        np.testing.assert_array_equal(np.sort(pixel_shuffle(x, r).ravel()), np.sort(x.ravel()))


class TestPadReflect:
    def test_identity(self, rng):
        x = rng.standard_normal((1, 1, 3, 3))
        np.testing.assert_array_equal(pad_reflect(x, 0, 0), x)

    def test_row(self):
        x = np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 3)
        assert pad_reflect(x, 2, 0).ravel().tolist() == [1, 2, 3, 2, 1]

    def test_rejects_too_large(self):
        with pytest.raises(ShapeError):
            pad_reflect(np.zeros((1, 1, 3, 3)), 3, 0)

    @given(st.integers(1, 9), st.integers(1, 9), st.data())
    @settings(max_examples=40, deadline=None)
    def test_crop_round_trip(self, h, w, data):
        right = data.draw(st.integers(0, w - 1))
        bottom = data.draw(st.integers(0, h - 1))
        x = np.random.default_rng(h * 10 + w).standard_normal((1, 2, h, w)).astype(np.float32)
        np.testing.assert_array_equal(crop(pad_reflect(x, right, bottom), h, w), x)


class TestRng:
    def test_deterministic(self):
        np.testing.assert_array_equal(rng_normal(7, (2, 3, 4, 5)), rng_normal(7, (2, 3, 4, 5)))

    def test_seeds_differ(self):
        assert not np.array_equal(rng_normal(1, (100,)), rng_normal(2, (100,)))

    def test_statistics(self):
        z = rng_normal(42, (10**6,)).astype(np.float64)
        assert -0.01 < z.mean() < 0.01
        assert 0.98 < z.var() < 1.02

    def test_splitmix_reference_values(self):
        # published SplitMix64 outputs for seed 1234567
        out = SplitMix64(1234567).next_u64(3)
        assert out.tolist() == [6457827717110365317, 3203168211198807973, 9817491932198370423]

    def test_streaming_equals_batch(self):
        a = SplitMix64(9)
        first = np.concatenate([a.next_u64(3), a.next_u64(4)])
        np.testing.assert_array_equal(first, SplitMix64(9).next_u64(7))
