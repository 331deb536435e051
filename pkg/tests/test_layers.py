# -*- coding: utf-8 -*-
import math
import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from autodiff.gradcheck import max_relative_error, numerical_gradient
from autodiff.layers import (
    BatchNormState,
    batch_norm,
    broadcast_add,
    conv3d,
    leaky_relu,
    linear,
    lse_pool,
    sigmoid,
)
from autodiff.tensor import Tensor
from helpers import ShapeError

RNG = np.random.default_rng(2024)


def check_gradients(testcase, build_loss, tensors, tolerance=1e-6, floor=1e-3):
    """Compare backward() against central differences; entries below `floor` are compared absolutely."""
    build_loss().backward()
    analytic = [t.grad.copy() for t in tensors]
    for tensor, grad in zip(tensors, analytic):
        numeric = numerical_gradient(lambda: build_loss().item(), tensor.data)
        testcase.assertLess(max_relative_error(grad, numeric, floor=floor), tolerance)


def random_tensor(*shape):
    return Tensor(RNG.normal(size=shape), requires_grad=True)


class TestConv3d(unittest.TestCase):
    """Test the 3D convolution"""

    def test_identity_kernel_is_exact(self):
        """Test that a centred one-hot kernel with padding 1 reproduces the input bit for bit"""
        x = Tensor(RNG.normal(size=(2, 3, 5, 5, 5)))
        kernel = np.zeros((3, 3, 3, 3, 3))
        for c in range(3):
            kernel[c, c, 1, 1, 1] = 1.0
        out = conv3d(x, Tensor(kernel), Tensor(np.zeros(3)), stride=1, padding=1)
        np.testing.assert_array_equal(out.data, x.data)

    def test_window_sum(self):
        """Test that an all-ones 2^3 kernel with stride 2 sums each window to 8"""
        x = Tensor(np.ones((1, 1, 4, 4, 4)))
        out = conv3d(x, Tensor(np.ones((1, 1, 2, 2, 2))), Tensor(np.zeros(1)), stride=2)
        self.assertEqual(out.shape, (1, 1, 2, 2, 2))
        np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2, 2), 8.0))

    def test_output_shape(self):
        """Test the output edge floor((D + 2p - k) / s) + 1"""
        x = Tensor(np.zeros((1, 2, 7, 7, 7)))
        out = conv3d(x, Tensor(np.zeros((4, 2, 3, 3, 3))), Tensor(np.zeros(4)), stride=2, padding=1)
        self.assertEqual(out.shape, (1, 4, 4, 4, 4))

    def test_channel_mismatch_names_shapes(self):
        """Test that a channel mismatch is rejected with both shapes in the message"""
        x = Tensor(np.zeros((1, 2, 4, 4, 4)))
        with self.assertRaises(ShapeError) as context:
            conv3d(x, Tensor(np.zeros((1, 3, 3, 3, 3))), Tensor(np.zeros(1)))
        self.assertIn("(1, 2, 4, 4, 4)", str(context.exception))
        self.assertIn("(1, 3, 3, 3, 3)", str(context.exception))

    def test_kernel_larger_than_input(self):
        """Test that a kernel larger than the padded input is rejected"""
        with self.assertRaises(ShapeError):
            conv3d(Tensor(np.zeros((1, 1, 2, 2, 2))), Tensor(np.zeros((1, 1, 3, 3, 3))), Tensor(np.zeros(1)))

    def test_gradient_small(self):
        """Test conv3d gradients on a random 2^3 input against finite differences"""
        x, kernel, bias = random_tensor(2, 2, 2, 2, 2), random_tensor(3, 2, 2, 2, 2), random_tensor(3)
        weights = RNG.normal(size=(2, 3, 1, 1, 1))
        check_gradients(self, lambda: (conv3d(x, kernel, bias) * weights).sum(), [x, kernel, bias])

    def test_gradient_strided_padded(self):
        """Test conv3d gradients with stride 2 and padding 1"""
        x, kernel, bias = random_tensor(2, 2, 4, 4, 4), random_tensor(2, 2, 3, 3, 3), random_tensor(2)
        weights = RNG.normal(size=(2, 2, 2, 2, 2))
        check_gradients(
            self, lambda: (conv3d(x, kernel, bias, stride=2, padding=1) * weights).sum(), [x, kernel, bias]
        )


class TestLeakyRelu(unittest.TestCase):
    """Test the leaky ReLU activation"""

    def test_values(self):
        """Test 0 -> 0 and -2 -> -0.2 at slope 0.1"""
        out = leaky_relu(Tensor([0.0, -2.0, 3.0]), 0.1)
        np.testing.assert_allclose(out.data, [0.0, -0.2, 3.0])

    def test_gradient(self):
        """Test the gradient on a mixed-sign tensor away from zero"""
        values = RNG.normal(size=(3, 4))
        values[np.abs(values) < 1e-3] = 0.5
        x = Tensor(values, requires_grad=True)
        weights = RNG.normal(size=(3, 4))
        check_gradients(self, lambda: (leaky_relu(x, 0.1) * weights).sum(), [x])


class TestBatchNorm(unittest.TestCase):
    """Test batch normalization in train and eval mode"""

    def test_train_mode_normalizes(self):
        """Test per-channel mean 0 and variance 1 with gamma 1, beta 0"""
        x = Tensor(RNG.normal(3.0, 2.0, size=(4, 3, 2, 2, 2)))
        state = BatchNormState.for_channels(3)
        out = batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), state)
        np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3, 4)), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.data.var(axis=(0, 2, 3, 4)), 1.0, atol=1e-4)

    def test_constant_channel_gives_beta(self):
        """Test that a constant channel maps to beta"""
        x = Tensor(np.full((2, 1, 2, 2, 2), 7.0))
        out = batch_norm(x, Tensor([2.0]), Tensor([0.25]), BatchNormState.for_channels(1))
        np.testing.assert_allclose(out.data, 0.25)

    def test_eval_identity_stats(self):
        """Test that eval mode with mean 0, var 1 gives gamma * x + beta"""
        x = Tensor(RNG.normal(size=(1, 2, 3)))
        state = BatchNormState.for_channels(2)
        state.mode = "eval"
        out = batch_norm(x, Tensor([2.0, 3.0]), Tensor([1.0, -1.0]), state)
        gamma = np.array([2.0, 3.0])[None, :, None]
        beta = np.array([1.0, -1.0])[None, :, None]
        np.testing.assert_allclose(out.data, gamma * x.data + beta, rtol=1e-5, atol=1e-5)

    def test_eval_does_not_mutate(self):
        """Test that eval mode leaves running statistics untouched"""
        state = BatchNormState(running_mean=np.array([0.5]), running_var=np.array([2.0]), mode="eval")
        batch_norm(Tensor(RNG.normal(size=(3, 1, 4))), Tensor([1.0]), Tensor([0.0]), state)
        np.testing.assert_array_equal(state.running_mean, [0.5])
        np.testing.assert_array_equal(state.running_var, [2.0])

    def test_running_update(self):
        """Test the momentum update with the biased batch variance"""
        values = RNG.normal(size=(4, 1, 3))
        state = BatchNormState.for_channels(1)
        batch_norm(Tensor(values), Tensor([1.0]), Tensor([0.0]), state)
        np.testing.assert_allclose(state.running_mean, [0.1 * values.mean()])
        np.testing.assert_allclose(state.running_var, [0.9 + 0.1 * values.var()])

    def test_single_case_rejected(self):
        """Test that train mode rejects a batch of one"""
        with self.assertRaises(ShapeError):
            batch_norm(Tensor(np.zeros((1, 2, 3))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                       BatchNormState.for_channels(2))

    def test_gradient_train(self):
        """Test train-mode gradients for input, gamma and beta"""
        x, gamma, beta = random_tensor(3, 2, 2, 2, 2), random_tensor(2), random_tensor(2)
        weights = RNG.normal(size=(3, 2, 2, 2, 2))

        def loss():
            return (batch_norm(x, gamma, beta, BatchNormState.for_channels(2)) * weights).sum()

        check_gradients(self, loss, [x, gamma, beta], tolerance=1e-5)

    def test_gradient_eval(self):
        """Test eval-mode gradients"""
        x, gamma, beta = random_tensor(2, 2, 3), random_tensor(2), random_tensor(2)
        state = BatchNormState(running_mean=np.array([0.3, -0.2]), running_var=np.array([1.5, 0.5]), mode="eval")
        weights = RNG.normal(size=(2, 2, 3))
        check_gradients(self, lambda: (batch_norm(x, gamma, beta, state) * weights).sum(), [x, gamma, beta])


class TestLinear(unittest.TestCase):
    """Test the affine layer"""

    def test_identity(self):
        """Test that an identity weight with zero bias is the identity map"""
        x = Tensor(RNG.normal(size=(3, 4)))
        out = linear(x, Tensor(np.eye(4)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.data, x.data)

    def test_hand_product(self):
        """Test [1, 2] . [3, 4] + 5 = 16"""
        out = linear(Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]]), Tensor([5.0]))
        np.testing.assert_array_equal(out.data, [[16.0]])

    def test_mismatch_rejected(self):
        """Test that an inner dimension mismatch is rejected"""
        with self.assertRaises(ShapeError):
            linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((1, 4))), Tensor(np.zeros(1)))

    def test_gradient(self):
        """Test linear gradients against finite differences"""
        x, weight, bias = random_tensor(3, 4), random_tensor(2, 4), random_tensor(2)
        weights = RNG.normal(size=(3, 2))
        check_gradients(self, lambda: (linear(x, weight, bias) * weights).sum(), [x, weight, bias])


class TestBroadcastAdd(unittest.TestCase):
    """Test adding per-channel values to every voxel"""

    def test_zero_base(self):
        """Test that channel q of zeros plus s[b, q] = q equals q everywhere"""
        out = broadcast_add(Tensor(np.zeros((2, 3, 2, 2, 2))), Tensor(np.tile(np.arange(3.0), (2, 1))))
        for q in range(3):
            np.testing.assert_array_equal(out.data[:, q], q)

    def test_zero_shift(self):
        """Test that adding zeros returns the features"""
        features = Tensor(RNG.normal(size=(1, 2, 2, 2, 2)))
        out = broadcast_add(features, Tensor(np.zeros((1, 2))))
        np.testing.assert_array_equal(out.data, features.data)

    def test_fan_out_gradient(self):
        """Test that d sum(out) / d s[b, q] equals V^3"""
        shift = Tensor(np.zeros((2, 3)), requires_grad=True)
        broadcast_add(Tensor(np.zeros((2, 3, 4, 4, 4))), shift).sum().backward()
        np.testing.assert_array_equal(shift.grad, np.full((2, 3), 64.0))

    def test_shape_mismatch(self):
        """Test that mismatched batch or channel counts are rejected"""
        with self.assertRaises(ShapeError):
            broadcast_add(Tensor(np.zeros((2, 3, 2, 2, 2))), Tensor(np.zeros((2, 4))))


class TestLsePool(unittest.TestCase):
    """Test log-sum-exp pooling"""

    def test_single_voxel(self):
        """Test that a single-voxel map returns its value exactly"""
        out = lse_pool(Tensor(np.full((1, 1, 1, 1, 1), 3.7)))
        self.assertEqual(out.data[0, 0], 3.7)

    def test_uniform_map(self):
        """Test that a uniform map of c over M voxels gives c + ln M"""
        out = lse_pool(Tensor(np.full((1, 2, 3, 3, 3), -1.5)))
        np.testing.assert_allclose(out.data, -1.5 + math.log(27))

    def test_large_value_does_not_overflow(self):
        """Test a map holding 1e4 next to tiny values"""
        maps = np.full((1, 1, 2, 2, 2), -50.0)
        maps[0, 0, 0, 0, 0] = 1e4
        maps[0, 0, 1, 1, 1] = 1e4
        out = lse_pool(Tensor(maps))
        self.assertTrue(np.isfinite(out.data).all())
        self.assertAlmostEqual(out.data[0, 0], 1e4 + math.log(2), places=9)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (1, 2, 2, 2, 2), elements=st.floats(-100, 100)))
    def test_bounds(self, maps):
        """Test max(S) <= LSE(S) <= max(S) + ln(M)"""
        out = lse_pool(Tensor(maps)).data
        peak = maps.reshape(1, 2, -1).max(axis=-1)
        self.assertTrue(np.all(out >= peak - 1e-12))
        self.assertTrue(np.all(out <= peak + math.log(8) + 1e-12))

    def test_gradient(self):
        """Test LSE gradients (softmax weights) against finite differences"""
        maps = random_tensor(2, 3, 2, 2, 2)
        weights = RNG.normal(size=(2, 3))
        check_gradients(self, lambda: (lse_pool(maps) * weights).sum(), [maps])


class TestSigmoid(unittest.TestCase):
    """Test the logistic function"""

    def test_zero(self):
        """Test sigmoid(0) = 0.5"""
        self.assertEqual(sigmoid(Tensor([0.0])).data[0], 0.5)

    def test_saturation(self):
        """Test that +-500 neither overflows nor leaves [0, 1]"""
        out = sigmoid(Tensor([-500.0, 500.0])).data
        self.assertTrue(np.isfinite(out).all())
        self.assertTrue(np.all((out >= 0) & (out <= 1)))

    def test_gradient(self):
        """Test the gradient sigmoid(x)(1 - sigmoid(x))"""
        x = random_tensor(5)
        weights = RNG.normal(size=5)
        check_gradients(self, lambda: (sigmoid(x) * weights).sum(), [x])


if __name__ == "__main__":
    unittest.main()
