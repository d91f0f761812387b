import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mbf_amen import layers
from mbf_amen.exceptions import ArgumentError, NumericError, ShapeError
from mbf_amen.gradcheck import grad_check, pool_tie_gap
from mbf_amen.layers import LayerSpec
from mbf_amen.tensor import Tensor, mul, total

TOLERANCE = 1e-4


def weighted_sum(out, weights):
    """Scalar with a nontrivial gradient for every output element"""
    return total(mul(out, Tensor(weights)))


def away_from_zero(x, margin=1e-3):
    x = x.copy()
    x[np.abs(x) < margin] = 0.5
    return x


class TestLayerSpec:
    def test_padding_must_be_smaller_than_kernel(self):
        with pytest.raises(ArgumentError):
            LayerSpec("conv", kernel=3, padding=3, out_channels=2)

    def test_maxpool_rejects_padding(self):
        with pytest.raises(ArgumentError):
            LayerSpec("maxpool", kernel=2, stride=2, padding=1)
        with pytest.raises(ArgumentError):
            LayerSpec.from_dict({"kind": "maxpool", "kernel": 2, "padding": 1})
        assert LayerSpec("maxpool", kernel=2, stride=2, padding=0).padding == 0

    def test_unknown_kind(self):
        with pytest.raises(ArgumentError):
            LayerSpec("dropout")

    def test_extents_positive(self):
        with pytest.raises(ArgumentError):
            LayerSpec("conv", kernel=0, out_channels=2)
        with pytest.raises(ArgumentError):
            LayerSpec("linear", out_features=0)

    def test_maxpool_stride_defaults_to_window(self):
        spec = LayerSpec.from_dict({"kind": "maxpool", "kernel": 2})
        assert spec.stride == 2
        assert spec.output_shape((3, 8, 8)) == (3, 4, 4)

    def test_conv_output_shape(self):
        spec = LayerSpec("conv", kernel=3, stride=2, padding=1, out_channels=5)
        assert spec.output_shape((1, 7, 8)) == (5, 4, 4)

    def test_dict_round_trip(self):
        spec = LayerSpec("conv", kernel=3, padding=1, out_channels=4)
        assert LayerSpec.from_dict(spec.to_dict()) == spec

    def test_unknown_keys(self):
        with pytest.raises(ArgumentError):
            LayerSpec.from_dict({"kind": "relu", "slope": 0.1})


class TestConv:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(1, 5, 5))
        out = layers.conv2d(x, np.ones((1, 1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(out.values, x)

    def test_hand_sum(self):
        out = layers.conv2d(
            np.array([[[1.0, 2.0], [3.0, 4.0]]]), np.ones((1, 1, 2, 2)), np.zeros(1)
        )
        np.testing.assert_array_equal(out.values, [[[10.0]]])

    def test_zero_input_gives_bias(self):
        kernels = np.random.default_rng(1).normal(size=(3, 2, 3, 3))
        out = layers.conv2d(np.zeros((2, 6, 6)), kernels, np.array([1.0, -2.0, 0.5]))
        for c, b in enumerate([1.0, -2.0, 0.5]):
            assert np.all(out.values[c] == b)

    def test_no_kernel_flip(self):
        x = np.zeros((1, 3, 3))
        x[0, 0, 0] = 1
        kernel = np.arange(9.0).reshape(1, 1, 3, 3)
        out = layers.conv2d(x, kernel, np.zeros(1), padding=1)
        # top left output sees x[0,0] through kernel[1,1]
        assert out.values[0, 0, 0] == 4.0

    def test_output_extents(self):
        out = layers.conv2d(
            np.zeros((2, 3, 9, 7)), np.zeros((4, 3, 3, 3)), np.zeros(4), stride=2, padding=1
        )
        assert out.shape == (2, 4, 5, 4)

    def test_channel_mismatch_names_shapes(self):
        with pytest.raises(ShapeError) as e:
            layers.conv2d(np.zeros((2, 5, 5)), np.zeros((1, 3, 3, 3)), np.zeros(1))
        assert "(2, 5, 5)" in str(e.value)
        assert "(1, 3, 3, 3)" in str(e.value)

    def test_kernel_larger_than_input(self):
        with pytest.raises(ShapeError):
            layers.conv2d(np.zeros((1, 2, 2)), np.zeros((1, 1, 3, 3)), np.zeros(1))

    def test_linear_in_input(self):
        rng = np.random.default_rng(2)
        kernels = rng.normal(size=(2, 3, 3, 3))
        x, y = rng.normal(size=(2, 3, 6, 6))
        conv = lambda v: layers.conv2d(v, kernels, np.zeros(2), padding=1).values  # noqa: E731
        np.testing.assert_allclose(
            conv(2.5 * x - 0.5 * y), 2.5 * conv(x) - 0.5 * conv(y), atol=1e-10
        )

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
    def test_gradients(self, stride, padding):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(2, 2, 5, 5))
            w = rng.normal(size=(3, 2, 3, 3))
            b = rng.normal(size=3)
            out_shape = layers.conv2d(x, w, b, stride, padding).shape
            r = rng.normal(size=out_shape)
            assert (
                grad_check(lambda t: weighted_sum(layers.conv2d(t, w, b, stride, padding), r), x)
                < TOLERANCE
            )
            assert (
                grad_check(lambda t: weighted_sum(layers.conv2d(x, t, b, stride, padding), r), w)
                < TOLERANCE
            )
            assert (
                grad_check(lambda t: weighted_sum(layers.conv2d(x, w, t, stride, padding), r), b)
                < TOLERANCE
            )


class TestMaxPool:
    def test_hand_max(self):
        out = layers.max_pool2d(np.array([[[1.0, 2.0], [3.0, 4.0]]]), 2, 2)
        np.testing.assert_array_equal(out.values, [[[4.0]]])

    def test_constant(self):
        out = layers.max_pool2d(np.full((2, 4, 4), 3.0), 2)
        assert np.all(out.values == 3.0)

    def test_window_one_is_identity(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 3))
        np.testing.assert_array_equal(layers.max_pool2d(x, 1, 1).values, x)

    def test_window_too_large(self):
        with pytest.raises(ShapeError):
            layers.max_pool2d(np.zeros((1, 2, 2)), 3)

    def test_gradient_goes_to_first_maximum_on_ties(self):
        x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
        total(layers.max_pool2d(x, 2)).backward()
        np.testing.assert_array_equal(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])

    def test_gradient_routes_to_argmax(self):
        x = Tensor(np.array([[[1.0, 5.0], [3.0, 4.0]]]), requires_grad=True)
        total(layers.max_pool2d(x, 2)).backward()
        np.testing.assert_array_equal(x.grad, [[[0.0, 1.0], [0.0, 0.0]]])

    def test_gradients(self):
        checked = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(2, 2, 6, 6))
            if pool_tie_gap(x, 2) < 1e-3:
                continue
            r = rng.normal(size=(2, 2, 3, 3))
            assert grad_check(lambda t: weighted_sum(layers.max_pool2d(t, 2), r), x) < TOLERANCE
            checked += 1
            if checked == 10:
                break
        assert checked == 10


class TestRelu:
    def test_sign_cases(self):
        np.testing.assert_array_equal(layers.relu(np.array([-1.0, 2.0, 0.0])).values, [0, 2, 0])

    def test_positive_unchanged_negative_zeroed(self):
        np.testing.assert_array_equal(layers.relu(np.array([1.0, 3.0])).values, [1.0, 3.0])
        np.testing.assert_array_equal(layers.relu(np.array([-1.0, -3.0])).values, [0, 0])

    def test_gradient_at_zero_is_zero(self):
        x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
        total(layers.relu(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_gradients(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            x = away_from_zero(rng.normal(size=(3, 4, 4)))
            r = rng.normal(size=x.shape)
            assert grad_check(lambda t: weighted_sum(layers.relu(t), r), x) < TOLERANCE


class TestLinear:
    def test_identity(self):
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(layers.linear(x, np.eye(3), np.zeros(3)).values, x)

    def test_zero_weights_give_bias(self):
        out = layers.linear(np.array([1.0, 2.0]), np.zeros((3, 2)), np.array([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(out.values, [1.0, 2.0, 3.0])

    def test_hand_matvec(self):
        out = layers.linear(np.array([1.0, 1.0]), np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros(2))
        np.testing.assert_array_equal(out.values, [3.0, 7.0])

    def test_extent_mismatch(self):
        with pytest.raises(ShapeError):
            layers.linear(np.ones(3), np.ones((2, 2)), np.zeros(2))

    @pytest.mark.parametrize("batched", [False, True])
    def test_gradients(self, batched):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(4, 5) if batched else (5,))
            w = rng.normal(size=(3, 5))
            b = rng.normal(size=3)
            r = rng.normal(size=(4, 3) if batched else (3,))
            assert grad_check(lambda t: weighted_sum(layers.linear(t, w, b), r), x) < TOLERANCE
            assert grad_check(lambda t: weighted_sum(layers.linear(x, t, b), r), w) < TOLERANCE
            assert grad_check(lambda t: weighted_sum(layers.linear(x, w, t), r), b) < TOLERANCE


class TestSoftmax:
    def test_examples(self):
        np.testing.assert_allclose(layers.softmax(np.zeros(2)).values, [0.5, 0.5])
        np.testing.assert_allclose(layers.softmax(np.full(3, 7.0)).values, [1 / 3] * 3)
        np.testing.assert_allclose(
            layers.softmax(np.log([1.0, 3.0])).values, [0.25, 0.75], atol=1e-12
        )

    def test_needs_two_classes(self):
        with pytest.raises(ShapeError):
            layers.softmax(np.zeros(1))

    def test_non_finite_logit(self):
        with pytest.raises(NumericError):
            layers.softmax(np.array([0.0, np.nan]))

    def test_large_logits_are_stable(self):
        out = layers.softmax(np.array([1000.0, 0.0])).values
        assert np.all(np.isfinite(out))

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(np.float64, st.integers(2, 6), elements=st.floats(-50, 50)),
        st.floats(-100, 100),
    )
    def test_sums_to_one_and_shift_invariant(self, logits, shift):
        s = layers.softmax(logits).values
        assert abs(s.sum() - 1) < 1e-12
        assert np.all(s >= 0) and np.all(s <= 1)
        np.testing.assert_allclose(layers.softmax(logits + shift).values, s, atol=1e-12)

    def test_gradients(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            z = rng.normal(size=(4, 3))
            r = rng.normal(size=(4, 3))
            assert grad_check(lambda t: weighted_sum(layers.softmax(t), r), z) < TOLERANCE


class TestCrossEntropy:
    def test_perfect_prediction(self):
        loss = layers.cross_entropy(np.array([1.0, 1e-15]), np.array([1.0, 0.0]))
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform(self):
        loss = layers.cross_entropy(np.array([0.5, 0.5]), np.array([0.0, 1.0]))
        assert loss.item() == pytest.approx(0.693147, abs=1e-6)

    def test_quarter(self):
        loss = layers.cross_entropy(np.array([0.25, 0.75]), np.array([1.0, 0.0]))
        assert loss.item() == pytest.approx(1.386294, abs=1e-6)

    def test_zero_probability_is_floored(self):
        loss = layers.cross_entropy(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        assert loss.item() == pytest.approx(-np.log(layers.PROBABILITY_FLOOR))

    def test_batch_is_averaged(self):
        prob = np.array([[0.5, 0.5], [0.25, 0.75]])
        labels = np.array([[1.0, 0.0], [1.0, 0.0]])
        loss = layers.cross_entropy(prob, labels)
        assert loss.item() == pytest.approx((np.log(2) + np.log(4)) / 2)

    def test_labels_must_be_one_hot(self):
        with pytest.raises(ArgumentError):
            layers.cross_entropy(np.array([0.5, 0.5]), np.array([1.0, 1.0]))
        with pytest.raises(ShapeError):
            layers.cross_entropy(np.array([0.5, 0.5]), np.array([1.0, 0.0, 0.0]))

    def test_non_negative(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = layers.softmax(rng.normal(size=4)).values
            assert layers.cross_entropy(p, layers.one_hot(rng.integers(4), 4)).item() >= 0

    def test_gradients(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            p = rng.uniform(0.1, 1.0, size=(4, 3))
            y = layers.one_hot(rng.integers(0, 3, size=4), 3)
            assert grad_check(lambda t: layers.cross_entropy(t, y), p) < TOLERANCE

    def test_combined_gradient_is_sigma_minus_y(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            z = Tensor(rng.normal(size=3), requires_grad=True)
            y = layers.one_hot(rng.integers(3), 3)
            layers.softmax_cross_entropy(z, y).backward()
            sigma = layers.softmax(z.values).values
            np.testing.assert_allclose(z.grad, sigma - y, atol=1e-10)

    def test_combined_matches_composition(self):
        rng = np.random.default_rng(5)
        z = rng.normal(size=(6, 4))
        y = layers.one_hot(rng.integers(0, 4, size=6), 4)
        fused = layers.softmax_cross_entropy(z, y).item()
        composed = layers.cross_entropy(layers.softmax(z), y).item()
        assert fused == pytest.approx(composed, rel=1e-12)

    def test_combined_gradient_check(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            z = rng.normal(size=(5, 3))
            y = layers.one_hot(rng.integers(0, 3, size=5), 3)
            assert grad_check(lambda t: layers.softmax_cross_entropy(t, y), z) < 1e-6


class TestGlobalAveragePool:
    def test_constant(self):
        np.testing.assert_array_equal(
            layers.global_average_pool(np.full((3, 4, 5), 2.0)).values, [2.0, 2.0, 2.0]
        )

    def test_hand_mean(self):
        out = layers.global_average_pool(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        np.testing.assert_array_equal(out.values, [2.5])

    def test_linearity(self):
        f = np.random.default_rng(0).normal(size=(4, 3, 3))
        np.testing.assert_allclose(
            layers.global_average_pool(3.0 * f).values,
            3.0 * layers.global_average_pool(f).values,
        )

    def test_gradients(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            f = rng.normal(size=(2, 3, 4, 4))
            r = rng.normal(size=(2, 3))
            assert grad_check(lambda t: weighted_sum(layers.global_average_pool(t), r), f) < TOLERANCE
