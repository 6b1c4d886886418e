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
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Sequence

import attr
import numpy as np

from semi_msm.core import StateSpace, Edge
from semi_msm.errors import ValidationError, ShapeMismatch, NegativeStayProbabilityWarning
from semi_msm.utils import clamp_probability, Q_EPSILON

DEFAULT_SPACE = StateSpace()


class TransformMethod(Enum):
    EXACT = 1
    CONTINUOUS = 2


@attr.s(slots=True, frozen=True, eq=False)
class PiRow:
    """One-step transition probabilities out of `from_state`.

    probs has shape (..., K); leading dimensions index subjects and/or months.
    """
    from_state: int = attr.ib()
    probs: np.ndarray = attr.ib()
    renormalised: np.ndarray = attr.ib(factory=lambda: np.zeros((), dtype=bool))

    def __getitem__(self, to_state: int) -> np.ndarray:
        return self.probs[..., to_state]

    @property
    def stay(self) -> np.ndarray:
        return self.probs[..., self.from_state]


def _row(from_state: int, entries: Mapping[int, np.ndarray], K: int = 4, renormalised: Any = False) -> PiRow:
    shape = np.broadcast(*entries.values()).shape
    probs = np.zeros(shape + (K,))
    for l, p in entries.items():
        probs[..., l] = p
    return PiRow(from_state, probs, np.broadcast_to(np.asarray(renormalised, dtype=bool), shape))


def exact_transform(space: StateSpace, from_state: int, q_by_target: Mapping[int, Any]) -> PiRow:
    """Competing probabilities that keep every pairwise log-odds pi_l / pi_kk equal to q_l / (1 - q_l)."""
    targets = space.targets(from_state)
    if set(q_by_target) != set(targets):
        raise ValidationError("State {} needs q for targets {} (got {})".format(from_state, targets, sorted(q_by_target)))
    odds = {l: q / (1.0 - q) for l, q in ((l, clamp_probability(q)) for l, q in q_by_target.items())}
    denominator = 1.0 + sum(odds.values())
    entries = {l: o / denominator for l, o in odds.items()}
    entries[from_state] = 1.0 / denominator
    return _row(from_state, entries, space.K)


def exact_state0(q01: Any) -> PiRow:
    q01 = clamp_probability(q01)
    return _row(0, {0: 1.0 - q01, 1: q01})


def exact_state1(q10: Any, q12: Any) -> PiRow:
    q10, q12 = clamp_probability(q10), clamp_probability(q12)
    d1 = 1.0 - q10 * q12
    return _row(1, {
        0: q10 * (1.0 - q12) / d1,
        1: (1.0 - q10) * (1.0 - q12) / d1,
        2: q12 * (1.0 - q10) / d1,
    })


def exact_state2(q20: Any, q21: Any, q23: Any) -> PiRow:
    q20, q21, q23 = clamp_probability(q20), clamp_probability(q21), clamp_probability(q23)
    d2 = 1.0 - q20 * q23 - q20 * q21 - q21 * q23 + 2.0 * q20 * q21 * q23
    return _row(2, {
        0: q20 * (1.0 - q21) * (1.0 - q23) / d2,
        1: q21 * (1.0 - q20) * (1.0 - q23) / d2,
        2: (1.0 - q20) * (1.0 - q21) * (1.0 - q23) / d2,
        3: q23 * (1.0 - q20) * (1.0 - q21) / d2,
    })


def _fix_negative_stay(from_state: int, exits: Dict[int, np.ndarray], K: int) -> PiRow:
    total = sum(exits.values())
    stay = 1.0 - total
    negative = stay < 0
    if np.any(negative):
        warnings.warn(
            "Approximate transform of state {}: {} rows with negative stay probability renormalised"
            .format(from_state, int(np.sum(negative))),
            NegativeStayProbabilityWarning,
        )
        scale = np.where(negative, 1.0 / np.where(negative, total, 1.0), 1.0)
        exits = {l: p * scale for l, p in exits.items()}
        stay = np.where(negative, 0.0, stay)
    entries = dict(exits)
    entries[from_state] = stay
    return _row(from_state, entries, K, negative)


def approx_state0(q01: Any) -> PiRow:
    return exact_state0(q01)


def approx_state1(q10: Any, q12: Any) -> PiRow:
    q10, q12 = clamp_probability(q10), clamp_probability(q12)
    return _fix_negative_stay(1, {
        0: q10 * (1.0 - 0.5 * q12),
        2: q12 * (1.0 - 0.5 * q10),
    }, 4)


def approx_state2(q20: Any, q21: Any, q23: Any) -> PiRow:
    q20, q21, q23 = clamp_probability(q20), clamp_probability(q21), clamp_probability(q23)
    return _fix_negative_stay(2, {
        0: q20 * (1.0 - 0.5 * (q21 + q23) + q21 * q23 / 3.0),
        1: q21 * (1.0 - 0.5 * (q20 + q23) + q20 * q23 / 3.0),
        3: q23 * (1.0 - 0.5 * (q20 + q21) + q20 * q21 / 3.0),
    }, 4)


def approx_transform(space: StateSpace, from_state: int, q_by_target: Mapping[int, Any]) -> PiRow:
    """Constant-intensity approximation for any number of competing exits.

    Each exit gets q_l * integral_0^1 prod_{o != l} (1 - q_o s) ds, which for one
    and two competitors is 1 - q/2 and 1 - (a + b)/2 + ab/3.
    """
    targets = space.targets(from_state)
    if set(q_by_target) != set(targets):
        raise ValidationError("State {} needs q for targets {} (got {})".format(from_state, targets, sorted(q_by_target)))
    qs = {l: clamp_probability(q) for l, q in q_by_target.items()}
    exits = {}
    for l, q in qs.items():
        others = [qs[o] for o in targets if o != l]
        factor: Any = 1.0
        for j in range(1, len(others) + 1):
            elementary = sum(np.prod(c, axis=0) for c in itertools.combinations(others, j))
            factor = factor + (-1) ** j * elementary / (j + 1)
        exits[l] = q * factor
    return _fix_negative_stay(from_state, exits, space.K)


def implied_q(row: PiRow, space: StateSpace = DEFAULT_SPACE) -> Dict[int, np.ndarray]:
    """Binary conditional probabilities q_l = pi_l / (pi_l + pi_kk) of a row."""
    stay = row.stay
    return {l: row[l] / (row[l] + stay) for l in space.targets(row.from_state)}


def pi_rows(q_by_edge: Mapping[Edge, Any], method: TransformMethod = TransformMethod.EXACT,
            space: StateSpace = DEFAULT_SPACE) -> Dict[int, PiRow]:
    """PiRow of every transient state from the q of every edge."""
    if space == DEFAULT_SPACE:
        q = q_by_edge
        if method == TransformMethod.EXACT:
            return {
                0: exact_state0(q[0, 1]),
                1: exact_state1(q[1, 0], q[1, 2]),
                2: exact_state2(q[2, 0], q[2, 1], q[2, 3]),
            }
        return {
            0: approx_state0(q[0, 1]),
            1: approx_state1(q[1, 0], q[1, 2]),
            2: approx_state2(q[2, 0], q[2, 1], q[2, 3]),
        }
    transform = exact_transform if method == TransformMethod.EXACT else approx_transform
    result = {}
    for k in space.transient_states:
        if space.targets(k):
            result[k] = transform(space, k, {l: q_by_edge[k, l] for l in space.targets(k)})
    return result


def one_step_matrix(rows: Sequence[PiRow], space: StateSpace = DEFAULT_SPACE) -> np.ndarray:
    """Stack PiRows into (..., K, K) one-step matrices; states without a row stay put."""
    if not rows:
        return np.eye(space.K)
    shape = np.broadcast_shapes(*(r.probs.shape[:-1] for r in rows))
    result = np.broadcast_to(np.eye(space.K), shape + (space.K, space.K)).copy()
    for r in rows:
        if r.from_state in space.absorbing:
            raise ValidationError("Absorbing state {} cannot have a transition row".format(r.from_state))
        result[..., r.from_state, :] = r.probs
    return result


def one_step_from_q(q_by_edge: Mapping[Edge, Any], method: TransformMethod = TransformMethod.EXACT,
                    space: StateSpace = DEFAULT_SPACE) -> np.ndarray:
    return one_step_matrix(list(pi_rows(q_by_edge, method, space).values()), space)


def compound(series: Any, K: int = 4) -> np.ndarray:
    """Left-to-right product of the one-step matrices for months t1+1..t2.

    `series` is a sequence (or an array whose first axis is time) of (..., K, K)
    matrices; an empty range gives the identity.
    """
    matrices = list(series)
    if not matrices:
        return np.eye(K)
    result = np.array(matrices[0], dtype=float)
    for m in matrices[1:]:
        if np.shape(m)[-2:] != result.shape[-2:]:
            raise ShapeMismatch("Cannot compound {} with {} matrices".format(result.shape, np.shape(m)))
        result = result @ m
    return result


def state_distribution(z_t1: Any, compounded: np.ndarray) -> np.ndarray:
    """Distribution at t2 of subjects in state z_t1 at t1, one-hot(z) @ P(t1, t2)."""
    z = np.asarray(z_t1)
    K = compounded.shape[-1]
    if np.any((z < 0) | (z >= K)):
        raise ValidationError("Start state outside [0, {})".format(K))
    if z.ndim == 0:
        return np.array(compounded[..., int(z), :])
    return np.take_along_axis(compounded, z.reshape(z.shape + (1, 1)), axis=-2)[..., 0, :]


@attr.s(slots=True, frozen=True, eq=False)
class TransitionMatrixSeries:
    """One-step matrices P(t) of one subject for t = first_time .. first_time + n - 1."""
    matrices: np.ndarray = attr.ib()
    first_time: int = attr.ib(default=1)

    def __attrs_post_init__(self) -> None:
        m = self.matrices
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise ShapeMismatch("Expected a (months, K, K) array, got {}".format(m.shape))
        if np.any(m < -Q_EPSILON) or np.any(np.abs(m.sum(axis=2) - 1.0) > 1e-10):
            raise ValidationError("One-step matrices must be row-stochastic")

    def compounded(self, t1: int, t2: Optional[int] = None) -> np.ndarray:
        """P(t1, t2), the product of P(t1+1) .. P(t2)."""
        if t2 is None:
            t2 = self.first_time + len(self.matrices) - 1
        if t1 > t2 or t1 + 1 < self.first_time or t2 >= self.first_time + len(self.matrices):
            raise ValidationError("Span {}..{} outside the series".format(t1, t2))
        start = t1 + 1 - self.first_time
        return compound(self.matrices[start:start + t2 - t1], self.matrices.shape[1])
