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

from typing import List

import numpy as np
import pytest

from semi_msm.errors import ValidationError, ShapeMismatch
from semi_msm.neural import Activation, Mode, MlpConfig, MlpParams, MlpGradients, LrSchedule, \
    init_params, forward, backward, adam_step, gelu, gelu_exact
from semi_msm.utils import rng_stream, Stream


def _params(config: MlpConfig, weights: List[List[List[float]]], biases: List[List[float]]) -> MlpParams:
    return MlpParams(config, tuple(np.array(w, dtype=float) for w in weights), tuple(np.array(b, dtype=float) for b in biases))


def test_zero_network() -> None:
    config = MlpConfig((3, 4, 2, 1))
    params = MlpParams(
        config,
        tuple(np.zeros((i, o)) for i, o in zip(config.layer_widths[:-1], config.layer_widths[1:])),
        tuple(np.zeros(o) for o in config.layer_widths[1:]),
    )
    inputs = np.random.default_rng(0).normal(size=(5, 3)) * 100
    np.testing.assert_array_equal(forward(params, inputs).output, np.zeros(5))


def test_hand_evaluation() -> None:
    params = _params(MlpConfig((1, 1, 1)), [[[1.0]], [[2.0]]], [[0.0], [1.0]])
    assert list(forward(params, np.array([[-3.0]])).output) == [1.0]
    assert list(forward(params, np.array([[2.0]])).output) == [5.0]


def test_dropout_modes() -> None:
    inputs = np.random.default_rng(1).normal(size=(20, 3))
    plain = init_params(MlpConfig((3, 8, 1), dropout_rate=0.0, seed=3))
    rng = rng_stream(0, Stream.DROPOUT)
    np.testing.assert_array_equal(
        forward(plain, inputs, Mode.TRAIN, rng).output,
        forward(plain, inputs, Mode.EVAL).output,
    )

    dropped = init_params(MlpConfig((3, 8, 1), dropout_rate=0.5, seed=3))
    np.testing.assert_array_equal(forward(dropped, inputs).output, forward(dropped, inputs).output)
    train = forward(dropped, inputs, Mode.TRAIN, rng)
    mask = train.masks[0]
    assert mask is not None
    assert set(np.unique(mask)) <= {0.0, 2.0}
    with pytest.raises(ValidationError):
        forward(dropped, inputs, Mode.TRAIN)


def test_forward_shape_check() -> None:
    params = init_params(MlpConfig((3, 4, 1)))
    with pytest.raises(ShapeMismatch):
        forward(params, np.zeros((2, 4)))
    with pytest.raises(ShapeMismatch):
        backward(params, forward(params, np.zeros((2, 3))), np.zeros(3))


def test_config_validation() -> None:
    with pytest.raises(ValidationError):
        MlpConfig((3, 1))
    with pytest.raises(ValidationError):
        MlpConfig((3, 4, 2))
    with pytest.raises(ValidationError):
        MlpConfig((3, 4, 1), dropout_rate=1.0)
    with pytest.raises(ValidationError):
        MlpConfig((3, 4, 1), l2_penalty=-1.0)
    with pytest.raises(ShapeMismatch):
        _params(MlpConfig((1, 1, 1)), [[[1.0, 2.0]], [[2.0]]], [[0.0], [1.0]])


def test_zero_upstream_gradient() -> None:
    params = init_params(MlpConfig((3, 5, 4, 1), seed=2))
    inputs = np.random.default_rng(2).normal(size=(6, 3))
    grads = backward(params, forward(params, inputs), np.zeros(6))
    for g in grads.arrays():
        assert np.all(g == 0.0)


def _objective(params: MlpParams, inputs: np.ndarray, upstream: np.ndarray) -> float:
    weights_sq = sum(float(np.sum(w * w)) for w in params.weights)
    return float(np.sum(upstream * forward(params, inputs).output)) + params.config.l2_penalty * weights_sq


@pytest.mark.parametrize("activation,l2", [(Activation.GELU, 0.0), (Activation.GELU, 0.01), (Activation.RELU, 0.0)])
def test_gradient_check(activation: Activation, l2: float) -> None:
    config = MlpConfig((2, 3, 2, 1), activation=activation, l2_penalty=l2, seed=5)
    params = init_params(config)
    rng = np.random.default_rng(5)
    inputs = rng.normal(size=(4, 2))
    upstream = rng.normal(size=4)
    analytic = backward(params, forward(params, inputs), upstream).arrays()
    arrays = params.arrays()
    eps = 1e-6
    for i, a in enumerate(arrays):
        for index in np.ndindex(a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[i][index] += eps
            minus[i][index] -= eps
            numeric = (
                _objective(params.with_arrays(plus), inputs, upstream)
                - _objective(params.with_arrays(minus), inputs, upstream)
            ) / (2 * eps)
            assert numeric == pytest.approx(analytic[i][index], rel=1e-5, abs=1e-7)


def test_l2_gradient() -> None:
    rng = np.random.default_rng(3)
    inputs = rng.normal(size=(7, 3))
    upstream = rng.normal(size=7)
    base = init_params(MlpConfig((3, 4, 1), seed=9))
    penalised = MlpParams(MlpConfig((3, 4, 1), l2_penalty=0.001, seed=9), base.weights, base.biases)
    g0 = backward(base, forward(base, inputs), upstream)
    g1 = backward(penalised, forward(penalised, inputs), upstream)
    for w, a, b in zip(base.weights, g0.weights, g1.weights):
        np.testing.assert_allclose(b - a, 0.002 * w, atol=1e-12)
    for a, b in zip(g0.biases, g1.biases):
        np.testing.assert_array_equal(a, b)


def test_learning_rate_schedule() -> None:
    schedule = LrSchedule(0.01, 0.8, 10000)
    assert schedule.rate(0) == 0.01
    assert schedule.rate(9999) == 0.01
    assert schedule.rate(10000) == pytest.approx(0.008)
    assert schedule.rate(25000) == pytest.approx(0.01 * 0.8 ** 2)
    with pytest.raises(ValidationError):
        LrSchedule(0.0)
    with pytest.raises(ValidationError):
        LrSchedule(0.01, 1.5)
    with pytest.raises(ValidationError):
        LrSchedule(0.01, 0.9, 0)


def _scalar_net(w: float) -> MlpParams:
    return _params(MlpConfig((1, 1, 1)), [[[w]], [[1.0]]], [[0.0], [0.0]])


def test_adam_step() -> None:
    schedule = LrSchedule(0.01)
    params = _scalar_net(0.0)
    zero = MlpGradients((np.zeros((1, 1)), np.zeros((1, 1))), (np.zeros(1), np.zeros(1)))
    unchanged = adam_step(params, zero, schedule)
    for a, b in zip(params.arrays(), unchanged.arrays()):
        np.testing.assert_array_equal(a, b)

    one = MlpGradients((np.ones((1, 1)), np.zeros((1, 1))), (np.zeros(1), np.zeros(1)))
    stepped = adam_step(params, one, schedule, beta1=0.9, beta2=0.999)
    assert stepped.weights[0][0, 0] == pytest.approx(-0.01, rel=1e-6)
    assert stepped.weights[1][0, 0] == 1.0
    assert stepped.adam is not None and stepped.adam.step == 1
    again = adam_step(stepped, one, schedule)
    assert again.adam is not None and again.adam.step == 2
    assert again.weights[0][0, 0] == pytest.approx(-0.02, rel=1e-6)

    with pytest.raises(ValidationError):
        adam_step(params, one, schedule, beta1=1.0)


def test_init_is_deterministic() -> None:
    config = MlpConfig((4, 10, 5, 1), seed=11)
    a, b = init_params(config), init_params(config)
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(x, y)
    other = init_params(MlpConfig((4, 10, 5, 1), seed=12))
    assert not np.array_equal(a.weights[0], other.weights[0])
    limit = np.sqrt(6.0 / 14.0)
    assert np.all(np.abs(a.weights[0]) <= limit)
    assert all(np.all(bias == 0.0) for bias in a.biases)


def test_gelu_approximation() -> None:
    x = np.linspace(-5.0, 5.0, 2001)
    assert np.max(np.abs(gelu(x) - gelu_exact(x))) < 1e-3
    assert gelu(np.array([0.0]))[0] == 0.0
