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

import itertools
import warnings
from typing import Dict, List, Tuple

import numpy as np
import pytest

from semi_msm.core import StateSpace
from semi_msm.errors import ValidationError, ShapeMismatch, NegativeStayProbabilityWarning
from semi_msm.transitions import TransformMethod, PiRow, TransitionMatrixSeries, exact_state0, exact_state1, \
    exact_state2, approx_state0, approx_state1, approx_state2, exact_transform, approx_transform, implied_q, pi_rows, \
    one_step_matrix, one_step_from_q, compound, state_distribution

EXACT_EXAMPLES: List[Tuple[PiRow, Dict[int, float]]] = [
    (exact_state0(0.1), {0: 0.9, 1: 0.1}),
    (approx_state0(0.1), {0: 0.9, 1: 0.1}),
    (exact_state1(0.5, 0.4), {0: 0.375, 1: 0.375, 2: 0.25}),
    (exact_state2(0.5, 0.5, 0.5), {0: 0.25, 1: 0.25, 2: 0.25, 3: 0.25}),
    (approx_state1(0.5, 0.4), {0: 0.4, 1: 0.3, 2: 0.3}),
    (approx_state2(0.5, 0.5, 0.5), {0: 0.7 / 2.4, 1: 0.7 / 2.4, 2: 0.125, 3: 0.7 / 2.4}),
]


@pytest.mark.parametrize("row,expected", EXACT_EXAMPLES)
def test_hand_evaluated_rows(row: PiRow, expected: Dict[int, float]) -> None:
    for l in range(4):
        assert float(row[l]) == pytest.approx(expected.get(l, 0.0), abs=1e-12)
    assert float(row.probs.sum()) == pytest.approx(1.0, abs=1e-12)
    assert not np.any(row.renormalised)


def _random_q(rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return rng.uniform(0.001, 0.999, n), rng.uniform(0.001, 0.999, n), rng.uniform(0.001, 0.999, n)


def test_exact_rows_keep_log_odds() -> None:
    rng = np.random.default_rng(0)
    q20, q21, q23 = _random_q(rng, 1000)
    row = exact_state2(q20, q21, q23)
    np.testing.assert_allclose(row.probs.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(row.probs >= 0)
    for l, q in ((0, q20), (1, q21), (3, q23)):
        np.testing.assert_allclose(np.log(row[l] / row.stay), np.log(q / (1 - q)), atol=1e-9)
    odds = q20 / (1 - q20) + q21 / (1 - q21) + q23 / (1 - q23)
    np.testing.assert_allclose(row.stay, 1.0 / (1.0 + odds), rtol=1e-10)

    row1 = exact_state1(q20, q21)
    np.testing.assert_allclose(row1.probs.sum(axis=-1), 1.0, atol=1e-12)
    implied = implied_q(row1)
    np.testing.assert_allclose(implied[0], q20, atol=1e-12)
    np.testing.assert_allclose(implied[2], q21, atol=1e-12)


def test_approximate_rows() -> None:
    rng = np.random.default_rng(1)
    q20, q21, q23 = _random_q(rng, 1000)
    with warnings.catch_warnings():
        warnings.simplefilter('error', NegativeStayProbabilityWarning)
        row2 = approx_state2(q20, q21, q23)
        row1 = approx_state1(q20, q21)
    np.testing.assert_allclose(row2.stay, (1 - q20) * (1 - q21) * (1 - q23), atol=1e-12)
    np.testing.assert_allclose(row1.stay, (1 - q20) * (1 - q21), atol=1e-12)
    assert np.all(row2.probs >= 0)
    assert not np.any(row2.renormalised)


def test_general_transforms_match_closed_forms() -> None:
    space = StateSpace()
    rng = np.random.default_rng(2)
    q20, q21, q23 = _random_q(rng, 50)
    q = {0: q20, 1: q21, 3: q23}
    np.testing.assert_allclose(exact_transform(space, 2, q).probs, exact_state2(q20, q21, q23).probs, atol=1e-12)
    np.testing.assert_allclose(approx_transform(space, 2, q).probs, approx_state2(q20, q21, q23).probs, atol=1e-12)
    np.testing.assert_allclose(
        exact_transform(space, 1, {0: q20, 2: q21}).probs, exact_state1(q20, q21).probs, atol=1e-12,
    )
    with pytest.raises(ValidationError):
        exact_transform(space, 2, {0: 0.1, 1: 0.1})


def test_approximation_with_many_exits() -> None:
    space = StateSpace(K=6, absorbing=(5,), edges=((0, 1), (0, 2), (0, 3), (0, 4), (0, 5)))
    q = {1: 0.3, 2: 0.2, 3: 0.6, 4: 0.1, 5: 0.05}
    row = approx_transform(space, 0, q)
    assert float(row.stay) == pytest.approx(np.prod([1 - v for v in q.values()]), abs=1e-12)
    assert float(row.probs.sum()) == pytest.approx(1.0, abs=1e-12)
    exact = exact_transform(space, 0, q)
    for l, v in q.items():
        assert float(exact[l] / exact.stay) == pytest.approx(v / (1 - v))


def test_general_state_space() -> None:
    space = StateSpace(K=3, absorbing=(2,), edges=((0, 1), (1, 0), (1, 2)))
    P = one_step_from_q({(0, 1): 0.2, (1, 0): 0.5, (1, 2): 0.4}, space=space)
    np.testing.assert_allclose(P, [
        [0.8, 0.2, 0.0],
        [0.375, 0.375, 0.25],
        [0.0, 0.0, 1.0],
    ], atol=1e-12)


def test_one_step_matrix() -> None:
    q = {(0, 1): 0.1, (1, 0): 0.5, (1, 2): 0.4, (2, 0): 0.5, (2, 1): 0.5, (2, 3): 0.5}
    for method in TransformMethod:
        P = one_step_from_q(q, method)
        assert P.shape == (4, 4)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_array_equal(P[3], [0, 0, 0, 1])
        assert P[0, 2] == P[0, 3] == P[1, 3] == 0.0
    vectorised = one_step_from_q({e: np.full((5, 2), v) for e, v in q.items()})
    assert vectorised.shape == (5, 2, 4, 4)
    np.testing.assert_allclose(vectorised[3, 1], one_step_from_q(q), atol=1e-15)
    np.testing.assert_array_equal(one_step_matrix([]), np.eye(4))
    with pytest.raises(ValidationError):
        one_step_matrix([PiRow(3, np.array([0.0, 0.0, 0.0, 1.0]))])


def test_pi_rows_cover_transient_states() -> None:
    q = {(0, 1): 0.1, (1, 0): 0.5, (1, 2): 0.4, (2, 0): 0.5, (2, 1): 0.5, (2, 3): 0.5}
    rows = pi_rows(q)
    assert sorted(rows) == [0, 1, 2]
    assert all(rows[k].from_state == k for k in rows)


def _random_stochastic(rng: np.random.Generator, K: int = 4) -> np.ndarray:
    m = rng.random((K, K))
    return m / m.sum(axis=1, keepdims=True)


def test_compound_against_path_enumeration() -> None:
    rng = np.random.default_rng(3)
    matrices = [_random_stochastic(rng) for _ in range(3)]
    expected = np.zeros((4, 4))
    for start in range(4):
        for path in itertools.product(range(4), repeat=3):
            p = matrices[0][start, path[0]] * matrices[1][path[0], path[1]] * matrices[2][path[1], path[2]]
            expected[start, path[2]] += p
    np.testing.assert_allclose(compound(matrices), expected, atol=1e-14)
    np.testing.assert_allclose(compound(np.stack(matrices)), expected, atol=1e-14)
    np.testing.assert_array_equal(compound([]), np.eye(4))
    with pytest.raises(ShapeMismatch):
        compound([np.eye(4), np.eye(3)])


def test_state_distribution() -> None:
    rng = np.random.default_rng(4)
    P = np.stack([_random_stochastic(rng), _random_stochastic(rng)])
    np.testing.assert_array_equal(state_distribution(2, P[0]), P[0][2])
    result = state_distribution(np.array([1, 3]), P)
    np.testing.assert_array_equal(result, [P[0][1], P[1][3]])
    with pytest.raises(ValidationError):
        state_distribution(4, P[0])


def test_transition_matrix_series() -> None:
    rng = np.random.default_rng(5)
    matrices = np.stack([_random_stochastic(rng) for _ in range(4)])
    series = TransitionMatrixSeries(matrices, first_time=1)
    np.testing.assert_allclose(series.compounded(0), compound(matrices), atol=1e-15)
    np.testing.assert_allclose(series.compounded(1, 3), matrices[1] @ matrices[2], atol=1e-15)
    np.testing.assert_array_equal(series.compounded(2, 2), np.eye(4))
    with pytest.raises(ValidationError):
        series.compounded(3, 2)
    with pytest.raises(ValidationError):
        series.compounded(0, 5)
    with pytest.raises(ValidationError):
        TransitionMatrixSeries(matrices * 2)
    with pytest.raises(ShapeMismatch):
        TransitionMatrixSeries(matrices[0])
