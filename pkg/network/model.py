"""
The end-to-end survival network f(image, age; theta).

A fully convolutional encoder of blocks (convolution -> leaky ReLU -> batch
normalization) maps the stacked modalities to Q feature maps of size V^3.
Age passes through a linear layer and is broadcast over the V^3 locations of
each feature map. The post-hoc head applies a 1^3 convolution producing N
saliency maps that feed the binned survival head; the regression head used
for ablations pools the features and regresses days directly.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from autodiff.layers import BatchNormState, batch_norm, broadcast_add, conv3d, leaky_relu, linear
from autodiff.tensor import Parameter, Tensor, as_tensor
from helpers import ConfigError, ShapeError
from survival.bins import MAX_SURVIVAL_DAYS, make_bins
from survival.head import SALIENCY_TOP_FRACTION, saliency_mask, survival_head, transition_bin


logger = logging.getLogger(__name__)

HEADS = ("posthoc", "regression")


@dataclass(frozen=True)
class NetworkConfig:
    """
    Architecture of the survival network.

    Attributes:
        input_size (int): Edge of the cubic input volume.
        modalities (int): Input channels (Flair, T1, T1ce, T2).
        channels (tuple): Output channels per encoder block; the last is Q.
        kernel (int): Convolution kernel edge.
        stride (int): Convolution stride of every block.
        negative_slope (float): Leaky ReLU slope.
        n_bins (int): Number of survival bins N.
        max_days (float): Upper survival limit U.
        use_age (bool): Fuse the patient's age into the features.
        head (str): "posthoc" or "regression".
        seed (int): Seed of the parameter initialization.
    """

    input_size: int = 32
    modalities: int = 4
    channels: tuple = (8, 16, 32, 32)
    kernel: int = 3
    stride: int = 2
    negative_slope: float = 0.1
    n_bins: int = 15
    max_days: float = MAX_SURVIVAL_DAYS
    use_age: bool = True
    head: str = "posthoc"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got '{self.head}'")
        if not self.channels or any(c < 1 for c in self.channels):
            raise ConfigError(f"channels must be positive, got {self.channels}")
        if self.kernel < 1 or self.stride < 1:
            raise ConfigError(f"kernel and stride must be >= 1, got {self.kernel} and {self.stride}")
        if self.n_bins < 2:
            raise ConfigError(f"Need at least 2 survival bins, got {self.n_bins}")
        reduction = self.stride ** len(self.channels)
        if self.input_size % reduction != 0:
            raise ConfigError(
                f"input_size {self.input_size} is not divisible by stride^{len(self.channels)} = {reduction}: "
                f"V = {self.input_size} / {reduction} = {self.input_size / reduction:g} is not an integer"
            )

    @property
    def latent_size(self):
        """V, the edge of the feature maps after the encoder."""
        return self.input_size // self.stride ** len(self.channels)

    @property
    def padding(self):
        return self.kernel // 2


def parameter_count(config):
    """
    Closed-form number of trainable scalars.

    Each block contributes c_out * c_in * k^3 weights, c_out biases and
    2 * c_out batch-norm scale/shift values. Age fusion adds 2Q (weight Q x 1,
    bias Q). The post-hoc head adds N * Q + N (1^3 convolution), the
    regression head Q + 1.
    """
    total = 0
    c_in = config.modalities
    for c_out in config.channels:
        total += c_out * c_in * config.kernel**3 + c_out + 2 * c_out
        c_in = c_out
    q = config.channels[-1]
    if config.use_age:
        total += 2 * q
    if config.head == "posthoc":
        total += config.n_bins * q + config.n_bins
    else:
        total += q + 1
    return total


class PosthocModel:
    """
    Parameters and batch-norm state of one survival network.

    Parameters are kept in insertion order, which is the initialization
    order, so enumeration is deterministic.
    """

    def __init__(self, config):
        self.config = config
        self.bins = make_bins(config.n_bins, config.max_days)
        self._parameters = {}
        self.bn_states = [BatchNormState.for_channels(c) for c in config.channels]

    def add_parameter(self, name, values):
        if name in self._parameters:
            raise ValueError(f"Duplicate parameter name '{name}'")
        self._parameters[name] = Parameter(name, Tensor(np.array(values, dtype=np.float64)))

    def parameters(self):
        return list(self._parameters.values())

    def parameter(self, name):
        return self._parameters[name].tensor

    def set_mode(self, mode):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got '{mode}'")
        for state in self.bn_states:
            state.mode = mode

    def state_dict(self):
        """Copies of every parameter and batch-norm running statistic, by name."""
        state = {name: p.data.copy() for name, p in self._parameters.items()}
        for i, bn in enumerate(self.bn_states):
            state[f"block{i}.bn.running_mean"] = bn.running_mean.copy()
            state[f"block{i}.bn.running_var"] = bn.running_var.copy()
        return state

    def load_state_dict(self, state):
        expected = set(self.state_dict())
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ValueError(f"State does not match model: missing {missing}, unexpected {extra}")
        for name, param in self._parameters.items():
            if state[name].shape != param.data.shape:
                raise ShapeError(f"Parameter '{name}' has shape {param.data.shape}, state has {state[name].shape}")
            param.tensor.data = np.array(state[name], dtype=np.float64)
        for i, bn in enumerate(self.bn_states):
            bn.running_mean = np.array(state[f"block{i}.bn.running_mean"], dtype=np.float64)
            bn.running_var = np.array(state[f"block{i}.bn.running_var"], dtype=np.float64)


def init(config):
    """
    Build a model with seeded fan-in scaled uniform initialization.

    Convolution weights use the He bound sqrt(6 / ((1 + slope^2) * fan_in))
    for leaky ReLU, biases and linear weights 1 / sqrt(fan_in). Batch-norm
    starts at gamma = 1, beta = 0. The final-convolution bias starts at
    -ln(V^3) so the initial log-sum-exp sits near zero and bin probabilities
    near 0.5. Age fusion parameters are drawn last, so models that differ
    only in use_age share every other parameter for the same seed.

    Args:
        config (NetworkConfig): Architecture and seed.

    Returns:
        PosthocModel: The initialized model.
    """
    rng = np.random.default_rng(config.seed)
    model = PosthocModel(config)
    k = config.kernel

    c_in = config.modalities
    for i, c_out in enumerate(config.channels):
        fan_in = c_in * k**3
        weight_bound = math.sqrt(6.0 / ((1.0 + config.negative_slope**2) * fan_in))
        bias_bound = 1.0 / math.sqrt(fan_in)
        model.add_parameter(f"block{i}.conv.weight", rng.uniform(-weight_bound, weight_bound, (c_out, c_in, k, k, k)))
        model.add_parameter(f"block{i}.conv.bias", rng.uniform(-bias_bound, bias_bound, c_out))
        model.add_parameter(f"block{i}.bn.gamma", np.ones(c_out))
        model.add_parameter(f"block{i}.bn.beta", np.zeros(c_out))
        c_in = c_out

    q = config.channels[-1]
    bound = 1.0 / math.sqrt(q)
    if config.head == "posthoc":
        voxels = config.latent_size**3
        model.add_parameter("final_conv.weight", rng.uniform(-bound, bound, (config.n_bins, q, 1, 1, 1)))
        model.add_parameter("final_conv.bias", np.full(config.n_bins, -math.log(voxels)))
    else:
        model.add_parameter("regressor.weight", rng.uniform(-bound, bound, (1, q)))
        model.add_parameter("regressor.bias", np.array([config.max_days / 2.0]))

    if config.use_age:
        model.add_parameter("age_linear.weight", rng.uniform(-1.0, 1.0, (q, 1)))
        model.add_parameter("age_linear.bias", rng.uniform(-1.0, 1.0, q))

    logger.debug("Initialized %s model with %d parameters", config.head, parameter_count(config))
    return model


def encode(model, image, age, mode):
    """Encoder blocks followed by age fusion; returns features (B, Q, V, V, V)."""
    config = model.config
    image = as_tensor(image)
    expected = (config.modalities,) + (config.input_size,) * 3
    if image.ndim != 5 or image.shape[1:] != expected:
        raise ShapeError(f"Expected image of shape (B, {', '.join(map(str, expected))}), got {image.shape}")

    model.set_mode(mode)
    features = image
    for i, state in enumerate(model.bn_states):
        features = conv3d(
            features,
            model.parameter(f"block{i}.conv.weight"),
            model.parameter(f"block{i}.conv.bias"),
            stride=config.stride,
            padding=config.padding,
        )
        features = leaky_relu(features, config.negative_slope)
        features = batch_norm(
            features, model.parameter(f"block{i}.bn.gamma"), model.parameter(f"block{i}.bn.beta"), state
        )

    if config.use_age:
        age = as_tensor(age)
        if age.shape != (image.shape[0],):
            raise ShapeError(f"Expected one age per case ({image.shape[0]},), got {age.shape}")
        age_features = linear(
            age.reshape(-1, 1), model.parameter("age_linear.weight"), model.parameter("age_linear.bias")
        )
        features = broadcast_add(features, age_features)

    return features


def forward(model, image, age, mode="eval"):
    """
    Post-hoc forward pass.

    Args:
        model (PosthocModel): A model with the post-hoc head.
        image (Tensor | numpy.ndarray): Shape (B, 4, D, D, D), D = input_size.
        age (Tensor | numpy.ndarray): Normalized ages, shape (B,).
        mode (str): "train" or "eval" (batch-norm statistics).

    Returns:
        HeadOutput: Saliency maps, bin probabilities, weighted bins and days.
    """
    if model.config.head != "posthoc":
        raise ValueError("forward() needs a post-hoc model; use forward_regression() for the regression head")
    features = encode(model, image, age, mode)
    saliency = conv3d(features, model.parameter("final_conv.weight"), model.parameter("final_conv.bias"))
    return survival_head(saliency, model.bins)


def forward_regression(model, image, age, mode="eval"):
    """Regression baseline: average-pool each feature map, then a linear layer to days."""
    if model.config.head != "regression":
        raise ValueError("forward_regression() needs a regression-head model")
    features = encode(model, image, age, mode)
    pooled = features.mean(axis=(2, 3, 4))
    days = linear(pooled, model.parameter("regressor.weight"), model.parameter("regressor.bias"))
    return days.reshape(-1)


@dataclass
class Explanation:
    """
    Attributes:
        n_star (int): Transition bin, 1-based.
        saliency_map (numpy.ndarray): The map of bin n_star, shape (V, V, V).
        mask (numpy.ndarray): Boolean top-fraction mask of that map.
        y_hat (float): Predicted survival days.
        p (numpy.ndarray): Bin probabilities of the case.
    """

    n_star: int
    saliency_map: np.ndarray
    mask: np.ndarray
    y_hat: float
    p: np.ndarray = field(repr=False)


def explain(model, image, age, fraction=SALIENCY_TOP_FRACTION):
    """
    Eval-mode prediction of one case with its localizing saliency map.

    Args:
        model (PosthocModel): Post-hoc model.
        image: Shape (1, 4, D, D, D).
        age: Shape (1,).
        fraction (float): Share of voxels in the mask.

    Returns:
        Explanation: n_star, the n_star saliency map and its top-fraction mask.
    """
    if model.config.head != "posthoc":
        raise ValueError("Only post-hoc models produce saliency maps")
    image = as_tensor(image)
    if image.shape[0] != 1:
        raise ShapeError(f"explain() takes a single case, got a batch of {image.shape[0]}")

    output = forward(model, image, age, mode="eval")
    p = output.p.data[0]
    n_star = transition_bin(p)
    saliency_map = output.saliency.data[0, n_star - 1].copy()
    return Explanation(
        n_star=n_star,
        saliency_map=saliency_map,
        mask=saliency_mask(saliency_map, fraction),
        y_hat=float(output.y_hat.data[0]),
        p=p.copy(),
    )
