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

from typing import Dict, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd

from semi_msm.core import StateSpace, Edge, TransitionCounts, StateOccupancy, ID_COLUMN, TIME_COLUMN
from semi_msm.errors import UnknownColumn, ValidationError
from semi_msm.metrics import MetricRow
from semi_msm.sim import AjEstimate
from semi_msm.transitions import PiRow

METRIC_COLUMNS = ('MultiAUC', 'AUC1vsA', 'Brier', 'ECE', 'ACC')


def q_column(edge: Edge) -> str:
    return "q{}{}".format(*edge)


def pi_column(from_state: int, to_state: int) -> str:
    return "pi{}{}".format(from_state, to_state)


def read_q_csv(path: str, space: StateSpace) -> Tuple[pd.DataFrame, Dict[Edge, np.ndarray]]:
    """Binary q per edge, one row per subject-month; other columns are passed through."""
    frame = pd.read_csv(path, encoding='utf-8')
    missing = [q_column(e) for e in space.edges if q_column(e) not in frame.columns]
    if missing:
        raise UnknownColumn("{} is missing column(s) {}".format(path, ', '.join(missing)))
    q = {}
    for edge in space.edges:
        values = pd.to_numeric(frame[q_column(edge)], errors='coerce').to_numpy(dtype=float)
        if np.any(np.isnan(values)) or np.any((values < 0) | (values > 1)):
            raise ValidationError("Column {} must hold probabilities".format(q_column(edge)))
        q[edge] = values
    passthrough = frame[[c for c in frame.columns if c not in {q_column(e) for e in space.edges}]]
    return passthrough, q


def write_pi_csv(path: str, passthrough: pd.DataFrame, rows: Mapping[int, PiRow], space: StateSpace) -> None:
    frame = passthrough.copy()
    for k in sorted(rows):
        for l in (k,) + space.targets(k):
            frame[pi_column(k, l)] = rows[k][l]
    frame.to_csv(path, index=False, encoding='utf-8')


def write_predictions_csv(path: str, subject_ids: np.ndarray, distributions: np.ndarray) -> None:
    frame = pd.DataFrame({ID_COLUMN: subject_ids})
    for j in range(distributions.shape[1]):
        frame["p{}".format(j)] = distributions[:, j]
    frame.sort_values(ID_COLUMN, kind='mergesort').to_csv(path, index=False, encoding='utf-8')


def read_predictions_csv(path: str) -> Tuple[np.ndarray, np.ndarray]:
    frame = pd.read_csv(path, dtype={ID_COLUMN: str}, encoding='utf-8')
    columns = sorted((c for c in frame.columns if c.startswith('p') and c[1:].isdigit()), key=lambda c: int(c[1:]))
    if ID_COLUMN not in frame.columns or not columns:
        raise UnknownColumn("{} needs an id column and p0, p1, ... columns".format(path))
    return frame[ID_COLUMN].to_numpy(dtype=object), frame[columns].to_numpy(dtype=float)


def write_aj_csv(path: str, estimate: AjEstimate, from_states: Sequence[int]) -> None:
    K = estimate.cumulative.shape[1]
    records = []
    for t in estimate.times[estimate.start_time:]:
        for k in from_states:
            for l in range(K):
                records.append((int(t), k, l, float(estimate.cumulative[t, k, l]), int(estimate.at_risk[t, k])))
    pd.DataFrame.from_records(records, columns=[TIME_COLUMN, 'from', 'to', 'prob', 'at_risk']) \
        .to_csv(path, index=False, encoding='utf-8')


def write_counts_csv(path: str, counts: TransitionCounts) -> None:
    shares = counts.shares()
    records = [
        (k, l, int(counts.counts[k, l]), float(shares[k, l]))
        for k in range(counts.counts.shape[0]) for l in range(counts.counts.shape[1])
        if counts.counts[k, l]
    ]
    pd.DataFrame.from_records(records, columns=['from', 'to', 'count', 'share']).to_csv(path, index=False, encoding='utf-8')


def write_occupancy_csv(path: str, occupancy: StateOccupancy) -> None:
    frame = pd.DataFrame({TIME_COLUMN: occupancy.times, 'n': occupancy.n_observed})
    for j in range(occupancy.shares.shape[1]):
        frame["state{}".format(j)] = occupancy.shares[:, j]
    frame.to_csv(path, index=False, encoding='utf-8')


def write_metrics_csv(path: str, rows: Sequence[MetricRow]) -> None:
    records = [
        (r.span[0], r.span[1], r.horizon, r.model, r.n_subjects,
         r.multi_auc, r.auc_one_vs_all, r.brier, r.ece, r.accuracy, '; '.join(r.notes))
        for r in rows
    ]
    columns = ['t1', 't2', 'h', 'model', 'n'] + list(METRIC_COLUMNS) + ['notes']
    pd.DataFrame.from_records(records, columns=columns).to_csv(path, index=False, encoding='utf-8')
