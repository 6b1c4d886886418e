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

"""Multi-edge orchestration on top of the per-edge building blocks."""

from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import attr
import numpy as np

from semi_msm.config import RunConfig
from semi_msm.core import Panel, StateSpace, Edge, TransitionDataset, DURATION_COLUMN, extract_transition_dataset, \
    format_edge
from semi_msm.design import DesignSpec, fit_woe_maps
from semi_msm.errors import SubjectNotObservedAtT1, ValidationError, EmptySpan, MissingTruth
from semi_msm.fit import TransitionModel, BootstrapSummary, fit_all_edges, bootstrap_intervals, predict_q
from semi_msm.metrics import Evaluation, CutpointRule, MetricRow, calibrate_cutpoints, metric_row
from semi_msm.sim import DgpSpec, implied_binary_q, true_cumulative, panel_covariates
from semi_msm.transitions import TransformMethod, one_step_from_q
from semi_msm.utils import rng_stream, Stream


def transition_datasets(panel: Panel, keep_competing_as_zero: bool = False) -> Dict[Edge, TransitionDataset]:
    return {
        edge: extract_transition_dataset(panel, edge, keep_competing_as_zero=keep_competing_as_zero)
        for edge in panel.space.edges
    }


def shared_woe_maps(spec: DesignSpec, datasets: Mapping[Edge, TransitionDataset]) -> Dict[str, Dict[str, float]]:
    """WOE maps fitted once, on the entry edge (0, 1) or else the first edge, and reused by every edge."""
    edge = (0, 1) if (0, 1) in datasets else sorted(datasets)[0]
    ds = datasets[edge]
    return fit_woe_maps(spec, ds.columns(), ds.labels)


@attr.s(slots=True, frozen=True, auto_attribs=True)
class FittedModels:
    models: Dict[Edge, TransitionModel]
    bootstrap: Dict[Edge, BootstrapSummary]
    shared_woe: bool


def fit_models(panel: Panel, config: RunConfig) -> FittedModels:
    datasets = transition_datasets(panel, config.keep_competing_as_zero)
    woe_maps = None if config.per_edge_woe else shared_woe_maps(config.design, datasets)
    configs = {edge: config.fit_config(edge) for edge in datasets}
    models = fit_all_edges(datasets, config.design, configs, woe_maps=woe_maps, workers=config.threads)
    bootstrap = {}
    if config.bootstrap_replicates:
        for edge in sorted(datasets):
            bootstrap[edge] = bootstrap_intervals(
                datasets[edge], config.design, configs[edge], config.bootstrap_replicates,
                woe_maps=woe_maps, workers=config.threads,
            )
    return FittedModels(models, bootstrap, woe_maps is not None)


@attr.s(slots=True, frozen=True, eq=False)
class Predictions:
    """Predicted distributions at t2 of the subjects observed at t1."""
    t1: int = attr.ib()
    t2: int = attr.ib()
    subject_ids: np.ndarray = attr.ib()
    start_states: np.ndarray = attr.ib()
    distributions: np.ndarray = attr.ib()
    skipped: Tuple[str, ...] = attr.ib(default=())


def observed_at(panel: Panel, t: int) -> np.ndarray:
    """Indices of the subjects whose path reaches month t."""
    lengths = np.diff(panel.subject_starts)
    return np.flatnonzero(lengths > t)


def prediction_rows(panel: Panel, subjects: np.ndarray, t: int) -> Dict[str, np.ndarray]:
    """Model input rows for the transition into month t: covariates of month t-1.

    Past the end of a subject's observed path the last observed row is carried forward.
    """
    starts = panel.subject_starts[subjects]
    last = panel.subject_starts[subjects + 1] - 1
    rows = np.minimum(starts + t - 1, last)
    result = {name: values[rows] for name, values in panel.covariates.items()}
    result[DURATION_COLUMN] = np.full(len(subjects), float(t))
    return result


def compound_distributions(
        start_states: np.ndarray, q_by_month: Sequence[Mapping[Edge, np.ndarray]],
        method: TransformMethod, space: StateSpace,
) -> np.ndarray:
    """Distribution after the months of q_by_month, starting from one-hot start states."""
    distribution = np.eye(space.K)[start_states]
    for q in q_by_month:
        distribution = np.einsum('ik,ikl->il', distribution, one_step_from_q(q, method, space))
    return distribution


def predict_distributions(
        models: Mapping[Edge, TransitionModel], panel: Panel, t1: int, t2: int,
        method: TransformMethod = TransformMethod.EXACT,
) -> Predictions:
    if not 0 <= t1 < t2:
        raise ValidationError("Prediction span needs 0 <= t1 < t2 (got {}..{})".format(t1, t2))
    missing = [format_edge(e) for e in panel.space.edges if e not in models]
    if missing:
        raise ValidationError("No model for edge(s) {}".format(', '.join(missing)))
    subjects = observed_at(panel, t1)
    skipped = tuple(str(i) for i in np.delete(panel.subject_ids, subjects))
    if len(subjects) == 0:
        raise SubjectNotObservedAtT1("No subject is observed at t1={}".format(t1))
    start_states = panel.states[panel.subject_starts[subjects] + t1]
    q_by_month = []
    for t in range(t1 + 1, t2 + 1):
        rows = prediction_rows(panel, subjects, t)
        q_by_month.append({edge: predict_q(model, rows) for edge, model in models.items()})
    distributions = compound_distributions(start_states, q_by_month, method, panel.space)
    return Predictions(t1, t2, panel.subject_ids[subjects], start_states, distributions, skipped)


def observed_end_states(panel: Panel, predictions: Predictions) -> Tuple[np.ndarray, np.ndarray]:
    """(mask, end states) of the predicted subjects that are still observed at t2."""
    index = {str(s): i for i, s in enumerate(panel.subject_ids)}
    subjects = np.array([index[str(s)] for s in predictions.subject_ids], dtype=np.int64)
    lengths = np.diff(panel.subject_starts)[subjects]
    mask = lengths > predictions.t2
    ends = panel.states[panel.subject_starts[subjects[mask]] + predictions.t2]
    return mask, ends


def evaluation_for_span(models: Mapping[Edge, TransitionModel], panel: Panel, span: Tuple[int, int]) -> Evaluation:
    """Evaluation of the subjects observed at both t1 and t2."""
    t1, t2 = span
    try:
        predictions = predict_distributions(models, panel, t1, t2)
    except SubjectNotObservedAtT1:
        raise EmptySpan("No subject is observed in span {}-{}".format(t1, t2)) from None
    mask, ends = observed_end_states(panel, predictions)
    if not mask.any():
        raise EmptySpan("No subject is observed in span {}-{}".format(t1, t2))
    return Evaluation(predictions.distributions[mask], ends, predictions.start_states[mask])


def evaluate_models(
        models_by_name: Mapping[str, Mapping[Edge, TransitionModel]], panel: Panel, spans: Sequence[Tuple[int, int]],
        calibration_panel: Panel, bins: int = 10,
) -> Tuple[List[MetricRow], Dict[str, Dict[str, CutpointRule]]]:
    """Metric rows per (span, model); cut-points are calibrated per span on the calibration panel."""
    rows = []
    rules: Dict[str, Dict[str, CutpointRule]] = {}
    for span in spans:
        for name in sorted(models_by_name):
            models = models_by_name[name]
            rule = calibrate_cutpoints(evaluation_for_span(models, calibration_panel, span))
            rules.setdefault(name, {})["{}-{}".format(*span)] = rule
            rows.append(metric_row(span, name, evaluation_for_span(models, panel, span), rule, bins))
    return rows, rules


@attr.s(slots=True, frozen=True, eq=False)
class TransformReplicate:
    """Cumulative distributions at t2 from state 0, truth and estimates, for one replicate."""
    true_cumulative: np.ndarray = attr.ib()
    estimates: Dict[Tuple[str, TransformMethod], np.ndarray] = attr.ib()


def compare_transforms(
        truth: DgpSpec, panel: Panel, t2: int, n_subjects: int, *,
        models: Optional[Mapping[Edge, TransitionModel]] = None,
        seed: int = 0, replicate: int = 0,
) -> TransformReplicate:
    """Exact and continuous-time transforms against the true cumulative probabilities.

    Uses the true binary q of the simulation, and also fitted q when models
    are given. Subjects are a random subset of the panel.
    """
    if t2 < 1 or t2 > truth.T:
        raise ValidationError("t2 must be in 1..{}".format(truth.T))
    if panel.n_subjects == 0:
        raise MissingTruth("Empty panel")
    n = min(n_subjects, panel.n_subjects)
    chosen = np.sort(rng_stream(seed, Stream.SUBSET, replicate).choice(panel.n_subjects, n, replace=False))
    covariates = panel_covariates(panel)[chosen]
    true_cum = true_cumulative(truth, covariates, t2)
    start = np.zeros(n, dtype=np.int64)
    estimates = {}
    true_q = [implied_binary_q(truth, covariates, t) for t in range(1, t2 + 1)]
    for method in TransformMethod:
        estimates['true_q', method] = compound_distributions(start, true_q, method, truth.space)
    if models is not None:
        fitted_q = []
        for t in range(1, t2 + 1):
            rows = prediction_rows(panel, chosen, t)
            fitted_q.append({edge: predict_q(model, rows) for edge, model in models.items()})
        for method in TransformMethod:
            estimates['fitted_q', method] = compound_distributions(start, fitted_q, method, truth.space)
    return TransformReplicate(true_cum, estimates)
