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

import multiprocessing
from typing import Callable, List, Sequence, TypeVar

_T = TypeVar('_T')
_R = TypeVar('_R')


def parallel_map(fn: Callable[[_T], _R], items: Sequence[_T], *, workers: int = 1) -> List[_R]:
    """map() over a process pool, results in input order.

    fn has to be picklable: a module level function, or a functools.partial of one.
    Lambdas and closures only work with workers=1.
    """
    if workers > 1 and len(items) > 1:
        with multiprocessing.Pool(min(workers, len(items))) as pool:
            return list(pool.imap(fn, items))
    return [fn(item) for item in items]
