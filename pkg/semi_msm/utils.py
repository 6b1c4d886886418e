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

from enum import IntEnum
from typing import Any

import numpy as np

Q_EPSILON = 1e-12


class Stream(IntEnum):
    """Keys of the independent random streams derived from one seed."""
    NETWORK_INIT = 1
    DROPOUT = 2
    SHUFFLE = 3
    VALIDATION_SPLIT = 4
    SUBJECT = 5
    BOOTSTRAP = 6
    BASELINE = 7
    LOAN_BOOK = 8
    SUBSET = 9
    SEARCH = 10


def rng_stream(seed: int, stream: Stream, *keys: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by (seed, stream, *keys).

    The same key tuple always yields the same stream, independently of
    which other streams were drawn before.
    """
    if seed < 0:
        raise ValueError("Seeds must be non-negative (got {})".format(seed))
    entropy = [seed, int(stream)] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def clamp_probability(q: Any, eps: float = Q_EPSILON) -> np.ndarray:
    return np.clip(np.asarray(q, dtype=float), eps, 1.0 - eps)


def logit_loss(labels: np.ndarray, eta: np.ndarray) -> float:
    """Mean binary cross-entropy written in terms of the linear predictor."""
    if eta.size == 0:
        return 0.0
    return float(np.mean(np.logaddexp(0.0, eta) - labels * eta))


def readonly(array: Any, dtype: Any = None) -> np.ndarray:
    result = np.array(array, dtype=dtype)
    result.setflags(write=False)
    return result
