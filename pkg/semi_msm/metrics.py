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

import warnings
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Any

import attr
import numpy as np
from sklearn.metrics import roc_auc_score

from semi_msm.errors import OneClassOnly, DegenerateLabels, EmptyStartState, MissingStartState, \
    ShapeMismatch, ValidationError, ExcludedClassWarning

DEFAULT_BINS = 10
CUTPOINT_GRID = np.geomspace(1e-4, 1.0 - 1e-4, 25)
CUTPOINT_SWEEPS = 3


@attr.s(slots=True, frozen=True, eq=False)
class Evaluation:
    """Predicted distributions at t2 with the observed start (t1) and end (t2) states."""
    predictions: np.ndarray = attr.ib()
    end_states: np.ndarray = attr.ib()
    start_states: np.ndarray = attr.ib()

    def __attrs_post_init__(self) -> None:
        if self.predictions.ndim != 2 or len(self.predictions) != len(self.end_states) or \
                len(self.end_states) != len(self.start_states):
            raise ShapeMismatch("Evaluation needs (n, K) predictions and n start and end states")
        if np.any(np.abs(self.predictions.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError("Predicted distributions must sum to 1")
        for states in (self.end_states, self.start_states):
            if np.any((states < 0) | (states >= self.K)):
                raise ValidationError("States must lie in [0, {})".format(self.K))

    @property
    def n(self) -> int:
        return len(self.end_states)

    @property
    def K(self) -> int:
        return int(self.predictions.shape[1])

    def one_hot(self) -> np.ndarray:
        return np.eye(self.K)[self.end_states]

    def subset(self, rows: np.ndarray) -> 'Evaluation':
        return Evaluation(self.predictions[rows], self.end_states[rows], self.start_states[rows])


def make_evaluation(predictions: Any, end_states: Any, start_states: Any = None) -> Evaluation:
    predictions = np.asarray(predictions, dtype=float)
    end_states = np.asarray(end_states, dtype=np.int64)
    if start_states is None:
        start_states = np.zeros_like(end_states)
    return Evaluation(predictions, end_states, np.asarray(start_states, dtype=np.int64))


def binary_auc(scores: Any, labels: Any) -> float:
    """Mann-Whitney AUC, ties counted as one half."""
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise OneClassOnly("AUC needs both positive and negative labels")
    return float(roc_auc_score(labels, np.asarray(scores, dtype=float)))


def multiclass_auc(evaluation: Evaluation) -> float:
    """Hand-Till average of pairwise AUCs over the classes present at t2."""
    present = np.unique(evaluation.end_states)
    if len(present) < 2:
        raise DegenerateLabels("Multiclass AUC needs at least two observed end states")
    total = 0.0
    for i, r in enumerate(present):
        for s in present[i + 1:]:
            pair = np.isin(evaluation.end_states, (r, s))
            ends = evaluation.end_states[pair]
            auc_rs = binary_auc(evaluation.predictions[pair, r], ends == r)
            auc_sr = binary_auc(evaluation.predictions[pair, s], ends == s)
            total += (auc_rs + auc_sr) / 2.0
    n_present = len(present)
    return 2.0 * total / (n_present * (n_present - 1))


def excluded_classes(evaluation: Evaluation) -> Tuple[int, ...]:
    """Classes without both positives and negatives among the end states."""
    counts = np.bincount(evaluation.end_states, minlength=evaluation.K)
    return tuple(j for j in range(evaluation.K) if counts[j] in (0, evaluation.n))


def one_vs_all_auc(evaluation: Evaluation) -> float:
    """Prevalence-weighted one-vs-all AUC.

    Classes with only positives or only negatives are left out (with an
    ExcludedClassWarning) and the remaining weights renormalised.
    """
    excluded = excluded_classes(evaluation)
    if excluded:
        warnings.warn("Classes {} excluded from the one-vs-all AUC".format(list(excluded)), ExcludedClassWarning)
    weights = np.bincount(evaluation.end_states, minlength=evaluation.K) / evaluation.n
    included = [j for j in range(evaluation.K) if j not in excluded]
    if not included:
        return float('nan')
    aucs = np.array([binary_auc(evaluation.predictions[:, j], evaluation.end_states == j) for j in included])
    w = weights[included]
    return float(np.sum(w * aucs) / np.sum(w))


def brier_multiclass(evaluation: Evaluation) -> float:
    return float(np.mean((evaluation.predictions - evaluation.one_hot()) ** 2))


def ece(evaluation: Evaluation, bins: int = DEFAULT_BINS) -> float:
    """Expected calibration error with equal-width bins, averaged over the K classes."""
    if bins < 1:
        raise ValidationError("ECE needs at least one bin")
    labels = evaluation.one_hot()
    per_class = []
    for j in range(evaluation.K):
        p = evaluation.predictions[:, j]
        index = np.minimum(np.floor(p * bins).astype(np.int64), bins - 1)
        counts = np.bincount(index, minlength=bins)
        confidence = np.bincount(index, weights=p, minlength=bins)
        accuracy = np.bincount(index, weights=labels[:, j], minlength=bins)
        per_class.append(np.sum(np.abs(confidence - accuracy)) / evaluation.n)
    return float(np.mean(per_class))


class CutpointScore(Enum):
    RATIO = 'ratio'
    DIFFERENCE = 'difference'
    STANDARDISED = 'standardised'


@attr.s(slots=True, frozen=True, eq=False)
class CutpointRule:
    """Per start state k, the class chosen is argmax_j S_kj(p_j, c_kj).

    Rows of start states that were never calibrated are NaN.
    """
    cutpoints: np.ndarray = attr.ib()
    score: CutpointScore = attr.ib(default=CutpointScore.RATIO)
    sigma: Optional[np.ndarray] = attr.ib(default=None)

    def __attrs_post_init__(self) -> None:
        covered = self.cutpoints[self.covered]
        if np.any((covered <= 0.0) | (covered >= 1.0)):
            raise ValidationError("Cut-points must lie strictly inside (0, 1)")
        if self.score == CutpointScore.STANDARDISED and self.sigma is None:
            raise ValidationError("Standardised cut-point scores need per-class standard deviations")

    @property
    def covered(self) -> np.ndarray:
        return ~np.isnan(self.cutpoints).any(axis=1)

    def scores(self, predictions: np.ndarray, start_states: np.ndarray) -> np.ndarray:
        return _scores(self.score, predictions, self.cutpoints[start_states],
                       None if self.sigma is None else self.sigma[start_states])

    def classify(self, predictions: np.ndarray, start_states: np.ndarray) -> np.ndarray:
        missing = np.unique(start_states[~self.covered[start_states]])
        if len(missing):
            raise MissingStartState("No cut-points for start state(s) {}".format(list(missing)))
        # argmax picks the lowest class index among ties
        return np.argmax(self.scores(predictions, start_states), axis=1)


def _scores(kind: CutpointScore, p: np.ndarray, c: np.ndarray, sigma: Optional[np.ndarray]) -> np.ndarray:
    if kind == CutpointScore.RATIO:
        return (p - c) / c
    if kind == CutpointScore.DIFFERENCE:
        return p - c
    assert sigma is not None
    return (p - c) / sigma


def cutpoint_accuracy(evaluation: Evaluation, rule: CutpointRule) -> float:
    predicted = rule.classify(evaluation.predictions, evaluation.start_states)
    return float(np.mean(predicted == evaluation.end_states))


def _accuracy(kind: CutpointScore, p: np.ndarray, ends: np.ndarray, c: np.ndarray, sigma: Optional[np.ndarray]) -> float:
    return float(np.mean(np.argmax(_scores(kind, p, c, sigma), axis=1) == ends))


def _coordinate_ascent(kind: CutpointScore, p: np.ndarray, ends: np.ndarray, sigma: Optional[np.ndarray]) -> np.ndarray:
    K = p.shape[1]
    c = np.clip(np.bincount(ends, minlength=K) / len(ends), CUTPOINT_GRID[0], CUTPOINT_GRID[-1])
    best = _accuracy(kind, p, ends, c, sigma)
    for _ in range(CUTPOINT_SWEEPS):
        improved = False
        for j in range(K):
            for value in CUTPOINT_GRID:
                candidate = c.copy()
                candidate[j] = value
                accuracy = _accuracy(kind, p, ends, candidate, sigma)
                if accuracy > best:
                    best, c, improved = accuracy, candidate, True
        if not improved:
            break
    uniform = np.full(K, 1.0 / K)
    if _accuracy(kind, p, ends, uniform, sigma) >= best:
        return uniform
    return c


def calibrate_cutpoints(
        calibration: Evaluation,
        score: CutpointScore = CutpointScore.RATIO,
        start_states: Optional[Sequence[int]] = None,
) -> CutpointRule:
    """Cut-points maximising the calibration-set accuracy within each start state.

    Coordinate ascent over a 25-point log grid, three sweeps, starting at
    the class prevalences. The uniform rule (plain argmax for the ratio and
    difference scores) is kept whenever the search does not beat it.
    When start_states is None, every start state seen in the set is calibrated.
    """
    K = calibration.K
    if start_states is None:
        start_states = [int(k) for k in np.unique(calibration.start_states)]
    cutpoints = np.full((K, K), np.nan)
    sigma = None
    if score == CutpointScore.STANDARDISED:
        sigma = np.ones((K, K))
    for k in start_states:
        rows = calibration.start_states == k
        if not rows.any():
            raise EmptyStartState("No calibration subjects start in state {}".format(k))
        p, ends = calibration.predictions[rows], calibration.end_states[rows]
        row_sigma = None
        if sigma is not None:
            sd = p.std(axis=0)
            sigma[k] = np.where(sd > 0, sd, 1.0)
            row_sigma = sigma[k]
        cutpoints[k] = _coordinate_ascent(score, p, ends, row_sigma)
    return CutpointRule(cutpoints, score, sigma)


@attr.s(slots=True, frozen=True, auto_attribs=True)
class TransformErrorReport:
    """Per target state MSE/MAE, with across-replicate standard deviations when there were replicates."""
    mse: Tuple[float, ...]
    mae: Tuple[float, ...]
    mse_sd: Optional[Tuple[float, ...]] = None
    mae_sd: Optional[Tuple[float, ...]] = None
    n_replicates: int = 1


def _errors(true_cum: np.ndarray, est_cum: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    diff = est_cum - true_cum
    return np.mean(diff ** 2, axis=0), np.mean(np.abs(diff), axis=0)


def _floats(values: np.ndarray) -> Tuple[float, ...]:
    return tuple(float(v) for v in values)


def transform_error_report(true_cum: Any, est_cum: Any, groups: Any = None) -> TransformErrorReport:
    true_cum = np.asarray(true_cum, dtype=float)
    est_cum = np.asarray(est_cum, dtype=float)
    if true_cum.shape != est_cum.shape or true_cum.ndim != 2:
        raise ShapeMismatch("True and estimated probabilities differ in shape: {} vs {}".format(true_cum.shape, est_cum.shape))
    if groups is None:
        mse, mae = _errors(true_cum, est_cum)
        return TransformErrorReport(_floats(mse), _floats(mae))
    groups = np.asarray(groups)
    if len(groups) != len(true_cum):
        raise ShapeMismatch("Need one replicate group per subject")
    per_group = [_errors(true_cum[groups == g], est_cum[groups == g]) for g in np.unique(groups)]
    mses = np.array([m for m, _ in per_group])
    maes = np.array([m for _, m in per_group])
    ddof = 1 if len(per_group) > 1 else 0
    return TransformErrorReport(
        _floats(mses.mean(axis=0)), _floats(maes.mean(axis=0)),
        _floats(mses.std(axis=0, ddof=ddof)), _floats(maes.std(axis=0, ddof=ddof)),
        len(per_group),
    )


@attr.s(slots=True, frozen=True, auto_attribs=True)
class MetricRow:
    span: Tuple[int, int]
    model: str
    n_subjects: int
    multi_auc: float
    auc_one_vs_all: float
    brier: float
    ece: float
    accuracy: float
    notes: Tuple[str, ...] = ()

    @property
    def horizon(self) -> int:
        return self.span[1] - self.span[0]


@attr.s(slots=True, frozen=True, auto_attribs=True)
class MetricReport:
    rows: Tuple[MetricRow, ...]

    def models(self) -> List[str]:
        return sorted(set(r.model for r in self.rows))


def metric_row(
        span: Tuple[int, int], model: str, evaluation: Evaluation, rule: CutpointRule, bins: int = DEFAULT_BINS,
) -> MetricRow:
    notes = []
    excluded = excluded_classes(evaluation)
    if excluded:
        notes.append("classes {} excluded from AUC1vsA".format(','.join(str(j) for j in excluded)))
    try:
        multi = multiclass_auc(evaluation)
    except DegenerateLabels:
        multi = float('nan')
        notes.append("fewer than two end states observed")
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', ExcludedClassWarning)
        one_vs_all = one_vs_all_auc(evaluation)
    return MetricRow(
        span=span,
        model=model,
        n_subjects=evaluation.n,
        multi_auc=multi,
        auc_one_vs_all=one_vs_all,
        brier=brier_multiclass(evaluation),
        ece=ece(evaluation, bins),
        accuracy=cutpoint_accuracy(evaluation, rule),
        notes=tuple(notes),
    )
