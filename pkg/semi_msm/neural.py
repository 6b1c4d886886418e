# Copyright 2026 The Semi-MSM authors
#
# This file is part of Semi-MSM.
#
# Semi-MSM is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# Semi-MSM is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with Semi-MSM.  If not, see <https://www.gnu.org/licenses/>.

from enum import Enum
from typing import List, Optional, Sequence, Tuple

import attr
import numpy as np
from scipy.special import ndtr

from semi_msm.errors import ValidationError, ShapeMismatch, NonFiniteActivation
from semi_msm.utils import rng_stream, Stream

GELU_C = float(np.sqrt(2.0 / np.pi))
GELU_A = 0.044715


class Activation(Enum):
    RELU = 1
    GELU = 2


class Mode(Enum):
    TRAIN = 1
    EVAL = 2


@attr.s(slots=True, frozen=True, auto_attribs=True)
class MlpConfig:
    layer_widths: Tuple[int, ...]
    activation: Activation = Activation.RELU
    dropout_rate: float = 0.0
    l2_penalty: float = 0.0
    seed: int = 0

    def __attrs_post_init__(self) -> None:
        if len(self.layer_widths) < 3:
            raise ValidationError("A network needs an input, at least one hidden layer and an output")
        if self.layer_widths[-1] != 1:
            raise ValidationError("The output layer must be a single linear unit")
        if min(self.layer_widths) < 1:
            raise ValidationError("Layer widths must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("Dropout rate must be in [0, 1)")
        if self.l2_penalty < 0:
            raise ValidationError("L2 penalty must be non-negative")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1


@attr.s(slots=True, frozen=True, auto_attribs=True)
class LrSchedule:
    initial_rate: float
    decay_rate: float = 1.0
    decay_steps: int = 1

    def __attrs_post_init__(self) -> None:
        if not self.initial_rate > 0:
            raise ValidationError("Learning rate must be positive")
        if not 0 < self.decay_rate <= 1:
            raise ValidationError("Decay rate must be in (0, 1]")
        if self.decay_steps < 1:
            raise ValidationError("Decay step must be at least 1")

    def rate(self, step: int) -> float:
        return self.initial_rate * self.decay_rate ** (step // self.decay_steps)


@attr.s(slots=True, frozen=True, auto_attribs=True, eq=False)
class AdamState:
    first_moments: Tuple[np.ndarray, ...]
    second_moments: Tuple[np.ndarray, ...]
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> 'AdamState':
        return cls(tuple(np.zeros_like(a) for a in arrays), tuple(np.zeros_like(a) for a in arrays), 0)


@attr.s(slots=True, frozen=True, auto_attribs=True, eq=False)
class MlpParams:
    """Weights are (fan_in, fan_out) matrices, layers ordered input to output."""
    config: MlpConfig
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    adam: Optional[AdamState] = None

    def __attrs_post_init__(self) -> None:
        widths = self.config.layer_widths
        if len(self.weights) != self.config.n_layers or len(self.biases) != self.config.n_layers:
            raise ShapeMismatch("Expected {} layers".format(self.config.n_layers))
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[i], widths[i + 1]) or b.shape != (widths[i + 1],):
                raise ShapeMismatch("Layer {} has weights {} and biases {}".format(i, w.shape, b.shape))

    def arrays(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def with_arrays(self, arrays: Sequence[np.ndarray], adam: Optional[AdamState] = None) -> 'MlpParams':
        n = self.config.n_layers
        return MlpParams(self.config, tuple(arrays[:n]), tuple(arrays[n:]), adam)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@attr.s(slots=True, frozen=True, auto_attribs=True, eq=False)
class MlpGradients:
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def arrays(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)


@attr.s(slots=True, frozen=True, auto_attribs=True, eq=False)
class ForwardPass:
    """Output of one forward call, plus what backward needs from it."""
    output: np.ndarray
    inputs: np.ndarray
    pre_activations: Tuple[np.ndarray, ...]
    layer_inputs: Tuple[np.ndarray, ...]
    masks: Tuple[Optional[np.ndarray], ...]


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + GELU_A * x ** 3)))


def gelu_exact(x: np.ndarray) -> np.ndarray:
    return x * ndtr(x)


def _activate(activation: Activation, z: np.ndarray) -> np.ndarray:
    if activation == Activation.RELU:
        return np.maximum(z, 0.0)
    return gelu(z)


def _activation_derivative(activation: Activation, z: np.ndarray) -> np.ndarray:
    if activation == Activation.RELU:
        return (z > 0).astype(float)
    t = np.tanh(GELU_C * (z + GELU_A * z ** 3))
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z)


def init_params(config: MlpConfig, rng: Optional[np.random.Generator] = None) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    if rng is None:
        rng = rng_stream(config.seed, Stream.NETWORK_INIT)
    weights = []
    biases = []
    for fan_in, fan_out in zip(config.layer_widths[:-1], config.layer_widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(config, tuple(weights), tuple(biases))


def forward(params: MlpParams, inputs: np.ndarray, mode: Mode = Mode.EVAL, rng: Optional[np.random.Generator] = None) -> ForwardPass:
    config = params.config
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != config.layer_widths[0]:
        raise ShapeMismatch("Network expects {} inputs, got shape {}".format(config.layer_widths[0], inputs.shape))
    dropout = mode == Mode.TRAIN and config.dropout_rate > 0
    if dropout and rng is None:
        raise ValidationError("Training mode with dropout needs a random generator")
    pre_activations = []
    layer_inputs = []
    masks: List[Optional[np.ndarray]] = []
    a = inputs
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        layer_inputs.append(a)
        z = a @ w + b
        pre_activations.append(z)
        if i == config.n_layers - 1:
            a = z
            break
        a = _activate(config.activation, z)
        if dropout:
            assert rng is not None
            mask = (rng.random(a.shape) >= config.dropout_rate) / (1.0 - config.dropout_rate)
            a = a * mask
            masks.append(mask)
        else:
            masks.append(None)
    output = a[:, 0]
    if not np.all(np.isfinite(output)):
        raise NonFiniteActivation("Network produced non-finite outputs")
    return ForwardPass(output, inputs, tuple(pre_activations), tuple(layer_inputs), tuple(masks))


def backward(params: MlpParams, cache: ForwardPass, upstream_grad: np.ndarray) -> MlpGradients:
    """Gradients of sum(upstream_grad * output) + l2 * sum(W^2) for every layer."""
    config = params.config
    upstream_grad = np.asarray(upstream_grad, dtype=float)
    if upstream_grad.shape != cache.output.shape:
        raise ShapeMismatch("Upstream gradient has shape {}, output {}".format(upstream_grad.shape, cache.output.shape))
    grad_w: List[np.ndarray] = [np.empty(0)] * config.n_layers
    grad_b: List[np.ndarray] = [np.empty(0)] * config.n_layers
    delta = upstream_grad[:, None]
    for i in reversed(range(config.n_layers)):
        w = params.weights[i]
        grad_w[i] = cache.layer_inputs[i].T @ delta + 2.0 * config.l2_penalty * w
        grad_b[i] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ w.T
        mask = cache.masks[i - 1]
        if mask is not None:
            delta = delta * mask
        delta = delta * _activation_derivative(config.activation, cache.pre_activations[i - 1])
    return MlpGradients(tuple(grad_w), tuple(grad_b))


def l2_term(params: MlpParams) -> float:
    return params.config.l2_penalty * float(sum(np.sum(w * w) for w in params.weights))


def adam_update(
        arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, schedule: LrSchedule,
        beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
) -> Tuple[List[np.ndarray], AdamState]:
    """One bias-corrected Adam update over an ordered list of arrays.

    The learning rate is taken at the number of updates done so far.
    """
    if not (0 < beta1 < 1 and 0 < beta2 < 1) or eps <= 0:
        raise ValidationError("Invalid Adam constants")
    rate = schedule.rate(state.step)
    step = state.step + 1
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    new_arrays = []
    first = []
    second = []
    for a, g, m, v in zip(arrays, grads, state.first_moments, state.second_moments):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_arrays.append(a - rate * (m / correction1) / (np.sqrt(v / correction2) + eps))
        first.append(m)
        second.append(v)
    return new_arrays, AdamState(tuple(first), tuple(second), step)


def adam_step(
        params: MlpParams, grads: MlpGradients, schedule: LrSchedule,
        beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
) -> MlpParams:
    arrays = params.arrays()
    state = params.adam if params.adam is not None else AdamState.zeros_like(arrays)
    new_arrays, new_state = adam_update(arrays, grads.arrays(), state, schedule, beta1, beta2, eps)
    return params.with_arrays(new_arrays, new_state)
