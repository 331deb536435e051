from dataclasses import dataclass, field

import numpy as np

from helpers import ConfigError


SELECTION_METRICS = ("val_mae",)


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimization hyperparameters.

    "Momentum of 0.9" is Adam's beta1. The learning rate and epoch count are
    not given by the method description and default to 1e-3 and 30.
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.001
    batch_size: int = 8
    alpha: float = 10000.0
    epochs: int = 30
    seed: int = 0
    selection_metric: str = "val_mae"

    def __post_init__(self):
        if not self.learning_rate > 0 or not self.epsilon > 0:
            raise ConfigError("learning_rate and epsilon must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"Adam betas must lie in [0, 1), got {self.beta1} and {self.beta2}")
        if self.weight_decay < 0 or self.alpha < 0:
            raise ConfigError("weight_decay and alpha must not be negative")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be at least 2 for batch normalization, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.selection_metric not in SELECTION_METRICS:
            raise ConfigError(f"selection_metric must be one of {SELECTION_METRICS}, got '{self.selection_metric}'")


@dataclass
class OptimizerState:
    """Adam first/second moments per parameter name and the step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, state, config):
    """
    One Adam update with bias correction, in place.

    Weight decay is coupled: the gradient becomes g + weight_decay * w before
    the moment updates.

    Args:
        params (list[Parameter]): Parameters with populated gradients.
        state (OptimizerState): Moments and step counter, updated in place.
        config (TrainConfig): Learning rate, betas, epsilon and weight decay.

    Returns:
        OptimizerState: The same state object, step incremented by one.
    """
    missing = [p.name for p in params if p.grad is None]
    if missing:
        raise ValueError(f"No gradient for parameter(s): {', '.join(missing)}")

    state.step += 1
    t = state.step
    correction1 = 1.0 - config.beta1**t
    correction2 = 1.0 - config.beta2**t

    for param in params:
        grad = param.grad + config.weight_decay * param.data
        m = state.m.get(param.name, np.zeros_like(param.data))
        v = state.v.get(param.name, np.zeros_like(param.data))

        m = config.beta1 * m + (1.0 - config.beta1) * grad
        v = config.beta2 * v + (1.0 - config.beta2) * grad * grad
        state.m[param.name] = m
        state.v[param.name] = v

        m_hat = m / correction1
        v_hat = v / correction2
        param.tensor.data = param.data - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)

    return state
