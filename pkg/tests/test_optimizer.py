# -*- coding: utf-8 -*-
import unittest

import numpy as np

from autodiff.tensor import Parameter, Tensor
from helpers import ConfigError
from training.optimizer import OptimizerState, TrainConfig, adam_step


def scalar_parameter(value, grad, name="w"):
    param = Parameter(name, Tensor(np.array([value])))
    param.tensor.grad = np.array([grad])
    return param


class TestTrainConfig(unittest.TestCase):
    """Test hyperparameter validation"""

    def test_defaults(self):
        """Test the documented defaults"""
        config = TrainConfig()
        self.assertEqual((config.beta1, config.weight_decay, config.batch_size, config.alpha), (0.9, 0.001, 8, 10000.0))

    def test_invalid_values(self):
        """Test that batch size 1, negative alpha and unknown selection metrics are rejected"""
        for overrides in ({"batch_size": 1}, {"alpha": -1.0}, {"learning_rate": 0.0}, {"selection_metric": "loss"}):
            with self.assertRaises(ConfigError):
                TrainConfig(**overrides)


class TestAdamStep(unittest.TestCase):
    """Test the Adam update"""

    def test_first_step(self):
        """Test w = 0, g = 1 moves to -1e-3 on the first step"""
        param = scalar_parameter(0.0, 1.0)
        state = adam_step([param], OptimizerState(), TrainConfig(weight_decay=0.0))
        self.assertAlmostEqual(param.data[0], -1e-3, places=10)
        self.assertEqual(state.step, 1)

    def test_zero_gradient(self):
        """Test that a zero gradient without decay leaves the parameter unchanged"""
        param = scalar_parameter(0.7, 0.0)
        adam_step([param], OptimizerState(), TrainConfig(weight_decay=0.0))
        self.assertEqual(param.data[0], 0.7)

    def test_decay_only(self):
        """Test that weight decay alone shrinks a positive weight"""
        param = scalar_parameter(1.0, 0.0)
        adam_step([param], OptimizerState(), TrainConfig(weight_decay=0.001))
        self.assertLess(param.data[0], 1.0)

    def test_constant_gradient_trajectory(self):
        """Test 10 steps with a constant gradient against the closed form"""
        config = TrainConfig(weight_decay=0.0)
        param = scalar_parameter(0.25, 0.5)
        state = OptimizerState()
        for t in range(1, 11):
            param.tensor.grad = np.array([0.5])
            adam_step([param], state, config)
            m_hat = (1 - 0.9**t) * 0.5 / (1 - 0.9**t)
            v_hat = (1 - 0.999**t) * 0.25 / (1 - 0.999**t)
            self.assertEqual(state.step, t)
            expected = 0.25 - t * config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
            self.assertAlmostEqual(param.data[0], expected, delta=1e-12)

    def test_matches_reference_loop(self):
        """Test a quadratic with weight decay against a direct transcription of Adam"""
        config = TrainConfig(learning_rate=0.05, weight_decay=0.01)
        param = Parameter("w", Tensor(np.array([1.0, -2.0, 3.0])))
        state = OptimizerState()

        w, m, v = np.array([1.0, -2.0, 3.0]), np.zeros(3), np.zeros(3)
        for t in range(1, 11):
            param.tensor.grad = 2.0 * param.data
            adam_step([param], state, config)

            g = 2.0 * w + 0.01 * w
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w = w - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(param.data, w, rtol=1e-12)
        self.assertTrue(np.all(state.v["w"] >= 0))

    def test_missing_gradient_named(self):
        """Test that a parameter without a gradient is named in the error"""
        ready = scalar_parameter(0.0, 1.0, name="ready")
        missing = Parameter("block2.conv.bias", Tensor(np.zeros(2)))
        with self.assertRaisesRegex(ValueError, "block2.conv.bias"):
            adam_step([ready, missing], OptimizerState(), TrainConfig())


if __name__ == "__main__":
    unittest.main()
