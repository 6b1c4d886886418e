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
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import attr
import numpy as np
import pandas as pd

from semi_msm.errors import ValidationError, InvalidState, IllegalTransition, NonContiguousTime, \
    PostAbsorbingActivity, EmptyPanel, DegenerateLabels, UnknownColumn
from semi_msm.utils import readonly

Edge = Tuple[int, int]
Columns = Mapping[str, np.ndarray]

DEFAULT_EDGES: Tuple[Edge, ...] = ((0, 1), (1, 0), (1, 2), (2, 0), (2, 1), (2, 3))

ID_COLUMN = 'id'
TIME_COLUMN = 't'
STATE_COLUMN = 'state'
ORIGIN_COLUMN = 'origin_offset'
RESERVED_COLUMNS = (ID_COLUMN, TIME_COLUMN, STATE_COLUMN, ORIGIN_COLUMN)

# In design specs, 't' refers to the month of the transition itself,
# every other covariate is taken from the month before.
DURATION_COLUMN = TIME_COLUMN


def format_edge(edge: Edge) -> str:
    return "{}-{}".format(*edge)


def parse_edge(s: str) -> Edge:
    try:
        k, l = s.split('-')
        return int(k), int(l)
    except ValueError:
        raise ValidationError("Invalid edge '{}', expected FROM-TO, like '0-1'".format(s)) from None


@attr.s(slots=True, frozen=True, auto_attribs=True)
class StateSpace:
    K: int = 4
    absorbing: Tuple[int, ...] = (3,)
    edges: Tuple[Edge, ...] = DEFAULT_EDGES

    def __attrs_post_init__(self) -> None:
        if self.K < 2:
            raise ValidationError("A state space needs at least two states")
        for s in self.absorbing:
            if not 0 <= s < self.K:
                raise InvalidState("Absorbing state {} is outside [0, {})".format(s, self.K))
        for k, l in self.edges:
            if not (0 <= k < self.K and 0 <= l < self.K) or k == l:
                raise IllegalTransition("Invalid edge {}-{} for {} states".format(k, l, self.K))
            if k in self.absorbing:
                raise IllegalTransition("Edge {}-{} leaves absorbing state {}".format(k, l, k))
        if len(set(self.edges)) != len(self.edges):
            raise ValidationError("Duplicate edges in state space")

    def targets(self, k: int) -> Tuple[int, ...]:
        return tuple(l for kk, l in self.edges if kk == k)

    def edges_from(self, k: int) -> Tuple[Edge, ...]:
        return tuple(e for e in self.edges if e[0] == k)

    @property
    def transient_states(self) -> Tuple[int, ...]:
        return tuple(k for k in range(self.K) if k not in self.absorbing)

    def allowed_moves(self) -> np.ndarray:
        """K x K boolean matrix of moves a path may make in one month (self-loops included)."""
        result = np.eye(self.K, dtype=bool)
        for k, l in self.edges:
            result[k, l] = True
        return result


class CovariateKind(Enum):
    NUMERIC = 1
    CATEGORICAL = 2
    TIME_VARYING = 3


@attr.s(slots=True, frozen=True, auto_attribs=True)
class CovariateColumn:
    name: str
    kind: CovariateKind


@attr.s(slots=True, frozen=True, auto_attribs=True)
class CovariateSchema:
    columns: Tuple[CovariateColumn, ...] = ()

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def kind(self, name: str) -> CovariateKind:
        for c in self.columns:
            if c.name == name:
                return c.kind
        raise UnknownColumn("Unknown covariate column '{}'".format(name))

    def is_categorical(self, name: str) -> bool:
        return self.kind(name) == CovariateKind.CATEGORICAL


@attr.s(slots=True, frozen=True, auto_attribs=True, eq=False)
class SubjectPath:
    id: str
    origin_offset: int
    states: Tuple[int, ...]
    covariates: Dict[str, np.ndarray]

    def __attrs_post_init__(self) -> None:
        for name, values in self.covariates.items():
            if len(values) != len(self.states):
                raise ValidationError(
                    "Subject {}: covariate '{}' has {} rows for {} states".format(self.id, name, len(values), len(self.states))
                )

    @property
    def T(self) -> int:
        return len(self.states) - 1


@attr.s(slots=True, frozen=True, eq=False)
class Panel:
    """Subject-month rows, sorted by (id, t), stored column-wise.

    Subject i owns rows subject_starts[i]:subject_starts[i+1].
    Use build_panel or panel_from_frame to construct one, they validate.
    """
    space: StateSpace = attr.ib()
    schema: CovariateSchema = attr.ib()
    ids: np.ndarray = attr.ib()
    times: np.ndarray = attr.ib()
    states: np.ndarray = attr.ib()
    origin_offsets: np.ndarray = attr.ib()
    covariates: Dict[str, np.ndarray] = attr.ib()
    subject_starts: np.ndarray = attr.ib()

    @property
    def n_rows(self) -> int:
        return len(self.times)

    @property
    def n_subjects(self) -> int:
        return len(self.subject_starts) - 1

    @property
    def subject_ids(self) -> np.ndarray:
        return self.ids[self.subject_starts[:-1]]

    @property
    def last_rows(self) -> np.ndarray:
        return self.subject_starts[1:] - 1

    @property
    def subjects(self) -> List[SubjectPath]:
        return [self.subject(i) for i in range(self.n_subjects)]

    def subject(self, i: int) -> SubjectPath:
        start, end = int(self.subject_starts[i]), int(self.subject_starts[i + 1])
        return SubjectPath(
            id=str(self.ids[start]),
            origin_offset=int(self.origin_offsets[start]),
            states=tuple(int(s) for s in self.states[start:end]),
            covariates={k: v[start:end] for k, v in self.covariates.items()},
        )

    def subject_index(self) -> np.ndarray:
        """Index of the owning subject for every row."""
        return np.repeat(np.arange(self.n_subjects), np.diff(self.subject_starts))

    def consecutive_pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        """Row indices (prev, next) of every within-subject month-to-month step."""
        prev = np.arange(self.n_rows - 1)
        same_subject = self.ids[:-1] == self.ids[1:]
        prev = prev[same_subject]
        return prev, prev + 1

    def select_subjects(self, subject_indices: Sequence[int]) -> 'Panel':
        """Panel of the given subjects, in the given order (ids must stay unique)."""
        frame = self.frame()
        parts = [frame.iloc[self.subject_starts[i]:self.subject_starts[i + 1]] for i in subject_indices]
        if not parts:
            raise EmptyPanel("No subjects selected")
        return panel_from_frame(pd.concat(parts, ignore_index=True), self.space, self.schema)

    def frame(self) -> pd.DataFrame:
        data: Dict[str, Any] = {
            ID_COLUMN: self.ids,
            TIME_COLUMN: self.times,
            STATE_COLUMN: self.states,
        }
        if np.any(self.origin_offsets != 0):
            data[ORIGIN_COLUMN] = self.origin_offsets
        for name in self.schema.names:
            data[name] = self.covariates[name]
        return pd.DataFrame(data)

    def equals(self, other: 'Panel') -> bool:
        if self.space != other.space or self.schema != other.schema:
            return False
        for a, b in (
                (self.ids, other.ids), (self.times, other.times), (self.states, other.states),
                (self.origin_offsets, other.origin_offsets), (self.subject_starts, other.subject_starts),
        ):
            if not np.array_equal(a, b):
                return False
        for name in self.schema.names:
            a, b = self.covariates[name], other.covariates[name]
            if self.schema.is_categorical(name):
                if not np.array_equal(a, b):
                    return False
            elif not np.array_equal(a, b, equal_nan=True):
                return False
        return True


def _parse_numeric(values: np.ndarray) -> Optional[np.ndarray]:
    """Float array if every non-empty value is a number, None otherwise."""
    if values.dtype.kind in 'biuf':
        return values.astype(float)
    if len(values) == 0:
        return None
    as_str = ['nan' if v is None or (isinstance(v, float) and np.isnan(v)) or v == '' else str(v) for v in values]
    if all(v == 'nan' for v in as_str):
        return None
    try:
        return np.array(as_str, dtype=float)
    except ValueError:
        return None


def _infer_schema(frame: pd.DataFrame, columns: Iterable[str]) -> CovariateSchema:
    result = []
    for name in columns:
        numeric = _parse_numeric(frame[name].to_numpy())
        if numeric is None:
            kind = CovariateKind.CATEGORICAL
        else:
            per_subject = pd.Series(numeric).groupby(frame[ID_COLUMN].to_numpy()).nunique(dropna=False)
            kind = CovariateKind.TIME_VARYING if (per_subject > 1).any() else CovariateKind.NUMERIC
        result.append(CovariateColumn(name, kind))
    return CovariateSchema(tuple(result))


def _integer_column(frame: pd.DataFrame, name: str) -> np.ndarray:
    values = _parse_numeric(frame[name].to_numpy())
    if values is None or not np.all(np.isfinite(values)) or np.any(values != np.round(values)):
        raise ValidationError("Column '{}' must contain integers".format(name))
    return values.astype(np.int64)


def panel_from_frame(frame: pd.DataFrame, space: StateSpace, schema: Optional[CovariateSchema] = None) -> Panel:
    # pylint: disable=too-many-locals
    for name in (ID_COLUMN, TIME_COLUMN, STATE_COLUMN):
        if name not in frame.columns:
            raise UnknownColumn("Panel is missing the '{}' column".format(name))
    if len(frame) == 0:
        raise EmptyPanel("Panel has no rows")
    frame = frame.copy()
    frame[ID_COLUMN] = frame[ID_COLUMN].astype(str)
    frame[TIME_COLUMN] = _integer_column(frame, TIME_COLUMN)
    frame[STATE_COLUMN] = _integer_column(frame, STATE_COLUMN)
    if ORIGIN_COLUMN in frame.columns:
        frame[ORIGIN_COLUMN] = _integer_column(frame, ORIGIN_COLUMN)
    else:
        frame[ORIGIN_COLUMN] = 0
    frame = frame.sort_values([ID_COLUMN, TIME_COLUMN], kind='mergesort').reset_index(drop=True)

    ids = frame[ID_COLUMN].to_numpy(dtype=object)
    times = frame[TIME_COLUMN].to_numpy(dtype=np.int64)
    states = frame[STATE_COLUMN].to_numpy(dtype=np.int64)
    offsets = frame[ORIGIN_COLUMN].to_numpy(dtype=np.int64)

    new_subject = np.ones(len(frame), dtype=bool)
    new_subject[1:] = ids[1:] != ids[:-1]
    subject_starts = np.append(np.flatnonzero(new_subject), len(frame))

    bad_start = new_subject & (times != 0)
    bad_step = ~new_subject & (times != np.roll(times, 1) + 1)
    bad_time = np.flatnonzero(bad_start | bad_step)
    if len(bad_time):
        i = bad_time[0]
        raise NonContiguousTime("Subject {}: times must run 0, 1, 2, ... (found t={})".format(ids[i], times[i]))

    bad_state = np.flatnonzero((states < 0) | (states >= space.K))
    if len(bad_state):
        i = bad_state[0]
        raise InvalidState("Subject {}: state {} at t={} is outside [0, {})".format(ids[i], states[i], times[i], space.K))

    bad_offset = np.flatnonzero(~new_subject & (offsets != np.roll(offsets, 1)))
    if len(bad_offset):
        raise ValidationError("Subject {}: origin offset changes over time".format(ids[bad_offset[0]]))

    prev = np.flatnonzero(~new_subject[1:])
    nxt = prev + 1
    absorbing = np.isin(states[prev], space.absorbing)
    post_absorbing = np.flatnonzero(absorbing & (states[nxt] != states[prev]))
    if len(post_absorbing):
        i = nxt[post_absorbing[0]]
        raise PostAbsorbingActivity(
            "Subject {}: leaves absorbing state {} at t={}".format(ids[i], states[i - 1], times[i])
        )
    illegal = np.flatnonzero(~space.allowed_moves()[states[prev], states[nxt]])
    if len(illegal):
        i = nxt[illegal[0]]
        raise IllegalTransition(
            "Subject {}: {} -> {} at t={} is not a permissible transition".format(ids[i], states[i - 1], states[i], times[i])
        )

    covariate_names = [c for c in frame.columns if c not in RESERVED_COLUMNS]
    if schema is None:
        schema = _infer_schema(frame, covariate_names)
    covariates = {}
    for column in schema.columns:
        if column.name not in frame.columns:
            raise UnknownColumn("Panel is missing covariate column '{}'".format(column.name))
        raw = frame[column.name].to_numpy()
        if column.kind == CovariateKind.CATEGORICAL:
            covariates[column.name] = readonly([str(v) for v in raw], dtype=object)
        else:
            numeric = _parse_numeric(raw)
            if numeric is None:
                raise ValidationError("Covariate '{}' is declared numeric but has non-numeric values".format(column.name))
            covariates[column.name] = readonly(numeric)

    return Panel(
        space=space,
        schema=schema,
        ids=readonly(ids, dtype=object),
        times=readonly(times),
        states=readonly(states),
        origin_offsets=readonly(offsets),
        covariates=covariates,
        subject_starts=readonly(subject_starts),
    )


def build_panel(records: Iterable[Mapping[str, Any]], space: StateSpace, schema: Optional[CovariateSchema] = None) -> Panel:
    return panel_from_frame(pd.DataFrame.from_records(list(records)), space, schema)


def read_panel_csv(path: str, space: StateSpace, schema: Optional[CovariateSchema] = None) -> Panel:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    return panel_from_frame(frame, space, schema)


def write_panel_csv(panel: Panel, path: str) -> None:
    panel.frame().to_csv(path, index=False, encoding='utf-8')


@attr.s(slots=True, frozen=True, eq=False)
class TransitionDataset:
    """Binary logit training rows of one edge (k, l).

    A row exists for every month t with Z(t-1)=k and Z(t) in {k, l};
    the label is 1 iff Z(t)=l. Covariates are the ones observed at t-1.
    """
    edge: Edge = attr.ib()
    schema: CovariateSchema = attr.ib()
    subject_ids: np.ndarray = attr.ib()
    times: np.ndarray = attr.ib()
    covariates: Dict[str, np.ndarray] = attr.ib()
    labels: np.ndarray = attr.ib()

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    def columns(self) -> Dict[str, np.ndarray]:
        result = dict(self.covariates)
        result[DURATION_COLUMN] = self.times.astype(float)
        return result

    def subset(self, rows: np.ndarray) -> 'TransitionDataset':
        return TransitionDataset(
            edge=self.edge,
            schema=self.schema,
            subject_ids=self.subject_ids[rows],
            times=self.times[rows],
            covariates={k: v[rows] for k, v in self.covariates.items()},
            labels=self.labels[rows],
        )

    def check_labels(self) -> None:
        if self.n_rows == 0 or np.all(self.labels == self.labels[0]):
            raise DegenerateLabels(
                "Edge {}: labels are all identical ({} rows), a logit cannot be fitted".format(format_edge(self.edge), self.n_rows)
            )


def extract_transition_dataset(
        panel: Panel, edge: Edge, *,
        keep_competing_as_zero: bool = False,
        strict: bool = False,
) -> TransitionDataset:
    if edge not in panel.space.edges:
        raise IllegalTransition("{} is not an edge of the state space".format(format_edge(edge)))
    k, l = edge
    prev, nxt = panel.consecutive_pairs()
    from_k = panel.states[prev] == k
    if keep_competing_as_zero:
        keep = from_k
    else:
        keep = from_k & np.isin(panel.states[nxt], (k, l))
    prev, nxt = prev[keep], nxt[keep]
    result = TransitionDataset(
        edge=edge,
        schema=panel.schema,
        subject_ids=panel.ids[nxt],
        times=panel.times[nxt],
        covariates={name: values[prev] for name, values in panel.covariates.items()},
        labels=(panel.states[nxt] == l).astype(np.int64),
    )
    if strict:
        result.check_labels()
    return result


@attr.s(slots=True, frozen=True, eq=False)
class TransitionCounts:
    counts: np.ndarray = attr.ib()
    distinct_subjects: bool = attr.ib(default=False)

    def as_dict(self) -> Dict[Edge, int]:
        return {
            (int(k), int(l)): int(self.counts[k, l])
            for k, l in zip(*np.nonzero(self.counts))
        }

    def shares(self) -> np.ndarray:
        """Row-wise percentages, the way frequency tables by from-state are usually reported."""
        totals = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid='ignore', divide='ignore'):
            return np.where(totals > 0, 100.0 * self.counts / np.maximum(totals, 1), 0.0)


def transition_counts(panel: Panel, distinct_subjects: bool = False) -> TransitionCounts:
    prev, nxt = panel.consecutive_pairs()
    K = panel.space.K
    counts = np.zeros((K, K), dtype=np.int64)
    if distinct_subjects:
        kinds = pd.DataFrame({
            'id': panel.ids[nxt], 'from': panel.states[prev], 'to': panel.states[nxt],
        }).drop_duplicates()
        np.add.at(counts, (kinds['from'].to_numpy(), kinds['to'].to_numpy()), 1)
    else:
        np.add.at(counts, (panel.states[prev], panel.states[nxt]), 1)
    return TransitionCounts(readonly(counts), distinct_subjects)


@attr.s(slots=True, frozen=True, eq=False)
class StateOccupancy:
    times: np.ndarray = attr.ib()
    shares: np.ndarray = attr.ib()
    n_observed: np.ndarray = attr.ib()


def state_occupancy(panel: Panel) -> StateOccupancy:
    """Share of the subjects observed at month t that are in each state."""
    T = int(panel.times.max())
    counts = np.zeros((T + 1, panel.space.K), dtype=np.int64)
    np.add.at(counts, (panel.times, panel.states), 1)
    n = counts.sum(axis=1)
    return StateOccupancy(
        times=readonly(np.arange(T + 1)),
        shares=readonly(counts / np.maximum(n, 1)[:, None]),
        n_observed=readonly(n),
    )
