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

from typing import List, Tuple

import numpy as np
import pytest

from semi_msm.errors import OneClassOnly, DegenerateLabels, EmptyStartState, MissingStartState, ShapeMismatch, \
    ValidationError, ExcludedClassWarning
from semi_msm.metrics import CutpointScore, CutpointRule, make_evaluation, binary_auc, multiclass_auc, \
    one_vs_all_auc, excluded_classes, brier_multiclass, ece, calibrate_cutpoints, cutpoint_accuracy, \
    transform_error_report, metric_row

AUC_TESTS: List[Tuple[List[float], List[int], float]] = [
    ([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1], 0.75),
    ([0.1, 0.2, 0.3, 0.4], [0, 0, 1, 1], 1.0),
    ([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1], 0.5),
    ([0.9, 0.2, 0.3], [0, 1, 1], 0.0),
]


@pytest.mark.parametrize("scores,labels,expected", AUC_TESTS)
def test_binary_auc(scores: List[float], labels: List[int], expected: float) -> None:
    assert binary_auc(scores, labels) == pytest.approx(expected)


def _brute_force_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    positives = scores[labels == 1]
    negatives = scores[labels == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in positives for n in negatives)
    return float(wins / (len(positives) * len(negatives)))


def test_binary_auc_properties() -> None:
    rng = np.random.default_rng(0)
    scores = rng.random(60)
    labels = (rng.random(60) < 0.4).astype(int)
    assert binary_auc(scores, labels) == pytest.approx(_brute_force_auc(scores, labels))
    assert binary_auc(np.exp(3 * scores), labels) == pytest.approx(binary_auc(scores, labels))
    with pytest.raises(OneClassOnly):
        binary_auc([0.1, 0.2], [1, 1])


def test_multiclass_auc() -> None:
    scores = np.array([0.1, 0.4, 0.35, 0.8])
    evaluation = make_evaluation(np.column_stack([1 - scores, scores]), [0, 0, 1, 1])
    assert multiclass_auc(evaluation) == pytest.approx(0.75)
    assert one_vs_all_auc(evaluation) == pytest.approx(0.75)

    perfect = make_evaluation(np.eye(4)[[0, 1, 2, 3, 1]] * 0.7 + 0.075, [0, 1, 2, 3, 1])
    assert multiclass_auc(perfect) == pytest.approx(1.0)

    absent = make_evaluation(np.full((6, 4), 0.25), [0, 0, 1, 1, 2, 2])
    assert multiclass_auc(absent) == pytest.approx(0.5)
    with pytest.raises(DegenerateLabels):
        multiclass_auc(make_evaluation(np.full((3, 4), 0.25), [2, 2, 2]))


def test_multiclass_auc_under_permutation() -> None:
    rng = np.random.default_rng(1)
    predictions = rng.dirichlet(np.ones(4), size=10000)
    ends = rng.integers(0, 4, 10000)
    evaluation = make_evaluation(predictions, ends)
    assert abs(multiclass_auc(evaluation) - 0.5) < 0.05
    assert abs(one_vs_all_auc(evaluation) - 0.5) < 0.05


def test_one_vs_all_auc_weights() -> None:
    predictions = np.array([[0.6, 0.2, 0.2]] * 98 + [[0.4, 0.2, 0.4]] * 2)
    evaluation = make_evaluation(predictions, [0] * 98 + [1] * 2)
    assert excluded_classes(evaluation) == (2,)
    with pytest.warns(ExcludedClassWarning):
        assert one_vs_all_auc(evaluation) == pytest.approx(0.99)


def test_one_vs_all_auc_against_brute_force() -> None:
    rng = np.random.default_rng(2)
    predictions = rng.dirichlet(np.ones(4), size=50)
    ends = np.array(list(range(4)) * 12 + [0, 1])
    evaluation = make_evaluation(predictions, ends)
    expected = sum(
        np.mean(ends == j) * _brute_force_auc(predictions[:, j], (ends == j).astype(int)) for j in range(4)
    )
    assert one_vs_all_auc(evaluation) == pytest.approx(expected)


def test_brier() -> None:
    assert brier_multiclass(make_evaluation(np.full((3, 4), 0.25), [0, 3, 1])) == pytest.approx(0.1875)
    assert brier_multiclass(make_evaluation(np.eye(4)[[2, 0]], [2, 0])) == 0.0


ECE_TESTS: List[Tuple[List[List[float]], List[int], int, float]] = [
    ([[0.5, 0.5]] * 4, [0, 1, 0, 1], 10, 0.0),
    ([[0.9, 0.1]] * 3, [1, 1, 1], 10, 0.9),
    ([[0.8, 0.2], [0.6, 0.4], [0.4, 0.6], [0.2, 0.8]], [0, 1, 1, 1], 2, 0.25),
]


@pytest.mark.parametrize("predictions,ends,bins,expected", ECE_TESTS)
def test_ece(predictions: List[List[float]], ends: List[int], bins: int, expected: float) -> None:
    assert ece(make_evaluation(predictions, ends), bins) == pytest.approx(expected)


def test_ece_single_bin() -> None:
    rng = np.random.default_rng(3)
    predictions = rng.dirichlet(np.ones(4), size=200)
    ends = rng.integers(0, 4, 200)
    evaluation = make_evaluation(predictions, ends)
    prevalence = np.bincount(ends, minlength=4) / 200
    expected = np.mean(np.abs(predictions.mean(axis=0) - prevalence))
    assert ece(evaluation, 1) == pytest.approx(expected)
    with pytest.raises(ValidationError):
        ece(evaluation, 0)


def test_evaluation_validation() -> None:
    with pytest.raises(ValidationError):
        make_evaluation([[0.5, 0.6]], [0])
    with pytest.raises(ShapeMismatch):
        make_evaluation([[0.5, 0.5]], [0, 1])
    with pytest.raises(ValidationError):
        make_evaluation([[0.5, 0.5]], [2])


def test_cutpoint_ties_choose_lowest_class() -> None:
    rule = CutpointRule(np.full((4, 4), 0.25))
    evaluation = make_evaluation(np.full((3, 4), 0.25), [0, 1, 2], [0, 1, 2])
    np.testing.assert_array_equal(rule.classify(evaluation.predictions, evaluation.start_states), [0, 0, 0])
    assert cutpoint_accuracy(evaluation, rule) == pytest.approx(1 / 3)


def test_cutpoint_rule_validation() -> None:
    cutpoints = np.full((4, 4), 0.25)
    cutpoints[1] = np.nan
    rule = CutpointRule(cutpoints)
    with pytest.raises(MissingStartState):
        rule.classify(np.full((1, 4), 0.25), np.array([1]))
    with pytest.raises(ValidationError):
        CutpointRule(np.zeros((4, 4)))
    with pytest.raises(ValidationError):
        CutpointRule(np.full((4, 4), 0.25), CutpointScore.STANDARDISED)


def test_perfect_predictions() -> None:
    ends = np.array([0, 1, 2, 3, 0, 1])
    evaluation = make_evaluation(np.eye(4)[ends] * 0.6 + 0.1, ends)
    rule = calibrate_cutpoints(evaluation)
    assert cutpoint_accuracy(evaluation, rule) == 1.0
    np.testing.assert_allclose(rule.cutpoints[0], 0.25)


def test_calibration_finds_rare_class() -> None:
    p1 = np.array([0.05, 0.05, 0.1, 0.1, 0.1, 0.15, 0.15, 0.2, 0.35, 0.4])
    ends = np.array([0] * 8 + [1] * 2)
    evaluation = make_evaluation(np.column_stack([1 - p1, p1]), ends)
    uniform = CutpointRule(np.full((2, 2), 0.5))
    assert cutpoint_accuracy(evaluation, uniform) == pytest.approx(0.8)
    assert cutpoint_accuracy(evaluation, calibrate_cutpoints(evaluation)) >= 0.9


@pytest.mark.parametrize("score", list(CutpointScore))
def test_calibration_never_worse_than_argmax(score: CutpointScore) -> None:
    rng = np.random.default_rng(4)
    predictions = rng.dirichlet([5, 2, 1, 0.5], size=300)
    ends = np.array([rng.choice(4, p=p) for p in predictions])
    starts = rng.integers(0, 3, 300)
    evaluation = make_evaluation(predictions, ends, starts)
    rule = calibrate_cutpoints(evaluation, score)
    assert sorted(np.flatnonzero(rule.covered)) == [0, 1, 2]
    uniform = CutpointRule(np.full((4, 4), 0.25), score, rule.sigma)
    for k in range(3):
        subset = evaluation.subset(evaluation.start_states == k)
        assert cutpoint_accuracy(subset, rule) >= cutpoint_accuracy(subset, uniform)
    if score != CutpointScore.STANDARDISED:
        plain = np.mean(np.argmax(predictions, axis=1) == ends)
        assert cutpoint_accuracy(evaluation, rule) >= plain
    with pytest.raises(EmptyStartState):
        calibrate_cutpoints(evaluation, score, start_states=[3])


def test_transform_errors() -> None:
    rng = np.random.default_rng(5)
    truth = rng.dirichlet(np.ones(4), size=20)
    assert transform_error_report(truth, truth).mse == (0.0, 0.0, 0.0, 0.0)
    shifted = truth.copy()
    shifted[:, 3] += 0.01
    report = transform_error_report(truth, shifted)
    assert report.mse[3] == pytest.approx(1e-4)
    assert report.mae[3] == pytest.approx(0.01)
    assert report.mae[:3] == (0.0, 0.0, 0.0)
    assert report.mse_sd is None

    groups = np.repeat([0, 1], 10)
    shifted = truth.copy()
    shifted[:, 0] += np.where(groups == 0, 0.01, 0.03)
    grouped = transform_error_report(truth, shifted, groups)
    assert grouped.n_replicates == 2
    assert grouped.mse[0] == pytest.approx(5e-4)
    assert grouped.mae[0] == pytest.approx(0.02)
    assert grouped.mae_sd is not None and grouped.mae_sd[0] == pytest.approx(np.sqrt(2) * 0.01)

    with pytest.raises(ShapeMismatch):
        transform_error_report(truth, truth[:5])
    with pytest.raises(ShapeMismatch):
        transform_error_report(truth, truth, groups[:5])


def test_metric_row() -> None:
    predictions = np.array([[0.7, 0.2, 0.1, 0.0], [0.2, 0.6, 0.2, 0.0], [0.1, 0.3, 0.6, 0.0], [0.6, 0.3, 0.1, 0.0]])
    evaluation = make_evaluation(predictions, [0, 1, 2, 0])
    rule = calibrate_cutpoints(evaluation)
    row = metric_row((6, 12), 'semi', evaluation, rule)
    assert row.horizon == 6
    assert row.n_subjects == 4
    assert row.multi_auc == pytest.approx(1.0)
    assert row.accuracy == 1.0
    assert row.notes == ("classes 3 excluded from AUC1vsA",)

    degenerate = make_evaluation(predictions, [0, 0, 0, 0])
    row = metric_row((6, 12), 'semi', degenerate, rule)
    assert np.isnan(row.multi_auc)
    assert np.isnan(row.auc_one_vs_all)
    assert "fewer than two end states observed" in row.notes
