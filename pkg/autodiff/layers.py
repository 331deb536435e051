"""
Layer operations used by the survival network: 3D convolution, leaky ReLU,
batch normalization, linear, age broadcasting, log-sum-exp pooling and the
sigmoid. Each one records its own backward closure on the output Tensor.
"""
import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from autodiff.tensor import _result
from helpers import ShapeError


BN_MOMENTUM = 0.1
BN_EPSILON = 1e-5


def conv3d(x, kernel, bias, stride=1, padding=0):
    """
    3D cross-correlation with zero padding.

    Args:
        x (Tensor): Input of shape (B, Cin, D, H, W).
        kernel (Tensor): Weights of shape (Cout, Cin, k, k, k).
        bias (Tensor): Bias of shape (Cout,).
        stride (int): Step between windows, >= 1.
        padding (int): Zeros added on every side of each spatial axis.

    Returns:
        Tensor: Output of shape (B, Cout, D', H', W') with
        D' = floor((D + 2*padding - k) / stride) + 1.
    """
    if x.ndim != 5 or kernel.ndim != 5:
        raise ShapeError(f"conv3d expects 5-d input and kernel, got {x.shape} and {kernel.shape}")
    if kernel.shape[1] != x.shape[1]:
        raise ShapeError(
            f"conv3d channel mismatch: input {x.shape} has {x.shape[1]} channels, "
            f"kernel {kernel.shape} expects {kernel.shape[1]}"
        )
    k = kernel.shape[2]
    if kernel.shape[2:] != (k, k, k):
        raise ShapeError(f"conv3d needs a cubic kernel, got {kernel.shape}")
    if bias.shape != (kernel.shape[0],):
        raise ShapeError(f"conv3d bias {bias.shape} does not match kernel {kernel.shape}")
    if stride < 1:
        raise ShapeError(f"conv3d stride must be >= 1, got {stride}")
    if any(k > size + 2 * padding for size in x.shape[2:]):
        raise ShapeError(f"conv3d kernel {k} larger than padded input {x.shape} (padding {padding})")

    pad = ((0, 0), (0, 0)) + ((padding, padding),) * 3
    padded = np.pad(x.data, pad)
    windows = sliding_window_view(padded, (k, k, k), axis=(2, 3, 4))[
        :, :, ::stride, ::stride, ::stride
    ]
    # (B, D', H', W', Cout) -> (B, Cout, D', H', W')
    out_data = np.tensordot(windows, kernel.data, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    out_data = np.ascontiguousarray(np.moveaxis(out_data, -1, 1))
    out_data += bias.data[None, :, None, None, None]

    out = _result(out_data, (x, kernel, bias), "conv3d")
    out_spatial = out_data.shape[2:]

    def _backward():
        grad = out.grad
        if kernel.requires_grad:
            kernel._accumulate(np.tensordot(grad, windows, axes=([0, 2, 3, 4], [0, 2, 3, 4])))
        if bias.requires_grad:
            bias._accumulate(grad.sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            # (B, D', H', W', Cin, k, k, k)
            grad_windows = np.tensordot(grad, kernel.data, axes=([1], [0]))
            grad_padded = np.zeros_like(padded)
            for i, j, l in itertools.product(range(k), repeat=3):
                grad_padded[
                    :,
                    :,
                    i : i + stride * (out_spatial[0] - 1) + 1 : stride,
                    j : j + stride * (out_spatial[1] - 1) + 1 : stride,
                    l : l + stride * (out_spatial[2] - 1) + 1 : stride,
                ] += np.moveaxis(grad_windows[..., i, j, l], -1, 1)
            d, h, w = x.shape[2:]
            x._accumulate(grad_padded[:, :, padding : padding + d, padding : padding + h, padding : padding + w])

    out._backward = _backward
    return out


def leaky_relu(x, negative_slope=0.1):
    """x where x >= 0, negative_slope * x otherwise."""
    positive = x.data >= 0
    out = _result(np.where(positive, x.data, negative_slope * x.data), (x,), "leaky_relu")

    def _backward():
        x._accumulate(out.grad * np.where(positive, 1.0, negative_slope))

    out._backward = _backward
    return out


@dataclass
class BatchNormState:
    """
    Running statistics of one batch-norm layer.

    running = (1 - momentum) * running + momentum * batch, using the biased
    batch variance. Eval mode reads the running statistics and never writes them.
    """

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    epsilon: float = BN_EPSILON
    mode: str = field(default="train")

    @classmethod
    def for_channels(cls, channels):
        return cls(running_mean=np.zeros(channels), running_var=np.ones(channels))


def batch_norm(x, gamma, beta, state):
    """
    Per-channel batch normalization over the batch and spatial axes.

    Args:
        x (Tensor): Input of shape (B, C, ...).
        gamma (Tensor): Scale of shape (C,).
        beta (Tensor): Shift of shape (C,).
        state (BatchNormState): Running statistics; its mode selects train/eval.

    Returns:
        Tensor: Normalized output with the shape of x.
    """
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batch_norm gamma {gamma.shape}/beta {beta.shape} do not match input {x.shape}")

    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, channels) + (1,) * (x.ndim - 2)

    if state.mode == "train":
        if x.shape[0] < 2:
            raise ShapeError(f"batch_norm in train mode needs a batch of at least 2, got {x.shape}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mean
        state.running_var = (1 - state.momentum) * state.running_var + state.momentum * var
    elif state.mode == "eval":
        mean = state.running_mean
        var = state.running_var
    else:
        raise ValueError(f"Unknown batch_norm mode '{state.mode}'")

    inv_std = (1.0 / np.sqrt(var + state.epsilon)).reshape(bshape)
    x_hat = (x.data - mean.reshape(bshape)) * inv_std
    out = _result(gamma.data.reshape(bshape) * x_hat + beta.data.reshape(bshape), (x, gamma, beta), "batch_norm")
    training = state.mode == "train"

    def _backward():
        grad = out.grad
        gamma._accumulate((grad * x_hat).sum(axis=axes))
        beta._accumulate(grad.sum(axis=axes))
        if not x.requires_grad:
            return
        grad_x_hat = grad * gamma.data.reshape(bshape)
        if training:
            count = x.data.size / channels
            grad_x = (inv_std / count) * (
                count * grad_x_hat
                - grad_x_hat.sum(axis=axes, keepdims=True)
                - x_hat * (grad_x_hat * x_hat).sum(axis=axes, keepdims=True)
            )
        else:
            grad_x = grad_x_hat * inv_std
        x._accumulate(grad_x)

    out._backward = _backward
    return out


def linear(x, weight, bias):
    """Affine map x @ weight.T + bias for x of shape (B, Din)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear cannot combine input {x.shape} with weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear bias {bias.shape} does not match weight {weight.shape}")

    out = _result(x.data @ weight.data.T + bias.data, (x, weight, bias), "linear")

    def _backward():
        grad = out.grad
        x._accumulate(grad @ weight.data)
        weight._accumulate(grad.T @ x.data)
        bias._accumulate(grad.sum(axis=0))

    out._backward = _backward
    return out


def broadcast_add(features, per_channel):
    """
    Add a per-case, per-channel value to every spatial location.

    Args:
        features (Tensor): Shape (B, Q, V, V, V).
        per_channel (Tensor): Shape (B, Q).
    """
    if features.ndim != 5 or per_channel.ndim != 2 or features.shape[:2] != per_channel.shape:
        raise ShapeError(f"broadcast_add cannot combine {features.shape} with {per_channel.shape}")

    out = _result(
        features.data + per_channel.data[:, :, None, None, None], (features, per_channel), "broadcast_add"
    )

    def _backward():
        features._accumulate(out.grad)
        per_channel._accumulate(out.grad.sum(axis=(2, 3, 4)))

    out._backward = _backward
    return out


def lse_pool(maps):
    """
    Log-sum-exp over every spatial voxel of each (case, map) pair.

    Computed as max + log(sum(exp(x - max))), so large activations do not
    overflow and a single-voxel map returns its value exactly.

    Args:
        maps (Tensor): Shape (B, N, ...spatial).

    Returns:
        Tensor: Shape (B, N).
    """
    flat = maps.data.reshape(maps.shape[0], maps.shape[1], -1)
    peak = flat.max(axis=-1, keepdims=True)
    shifted = np.exp(flat - peak)
    total = shifted.sum(axis=-1)
    out = _result(peak[..., 0] + np.log(total), (maps,), "lse_pool")

    def _backward():
        weights = shifted / total[..., None]
        maps._accumulate((out.grad[..., None] * weights).reshape(maps.shape))

    out._backward = _backward
    return out


def sigmoid(x):
    out = _result(expit(x.data), (x,), "sigmoid")

    def _backward():
        x._accumulate(out.grad * out.data * (1.0 - out.data))

    out._backward = _backward
    return out
