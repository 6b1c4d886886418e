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

import functools
from typing import Dict, Tuple

import attr
import numpy as np
import pytest

from semi_msm.config import SIMULATION_DESIGN, RunConfig
from semi_msm.core import StateSpace
from semi_msm.fit import FitConfig, FitMode, fit_transition, predict_q, decompose
from semi_msm.metrics import TransformErrorReport, transform_error_report
from semi_msm.parallel import parallel_map
from semi_msm.pipeline import transition_datasets, fit_models, compare_transforms
from semi_msm.sim import default_dgp, simulate_panel, aalen_johansen, true_cumulative, panel_covariates, \
    recovery_errors, RecoveryErrors
from semi_msm.transitions import TransformMethod, exact_state1, exact_state2, exact_transform


def test_exact_transform_on_random_q() -> None:
    rng = np.random.default_rng(20)
    n = 1000000
    q20, q21, q23 = rng.uniform(0.001, 0.999, (3, n))
    closed = exact_state2(q20, q21, q23)
    oracle = exact_transform(StateSpace(), 2, {0: q20, 1: q21, 3: q23})
    np.testing.assert_allclose(closed.probs, oracle.probs, rtol=0, atol=1e-12)
    np.testing.assert_allclose(closed.probs.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    for l, q in ((0, q20), (1, q21), (3, q23)):
        np.testing.assert_allclose(closed[l] / closed.stay, q / (1.0 - q), rtol=1e-10)

    q10, q12 = rng.uniform(0.001, 0.999, (2, n))
    row = exact_state1(q10, q12)
    np.testing.assert_allclose(row.probs.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(row[0] / row.stay, q10 / (1.0 - q10), rtol=1e-10)
    np.testing.assert_allclose(row[2] / row.stay, q12 / (1.0 - q12), rtol=1e-10)


def test_transform_comparison_with_true_q() -> None:
    spec = default_dgp(10000, T=36, seed=11)
    panel, _ = simulate_panel(spec)
    result = compare_transforms(spec, panel, 36, 10000)
    exact = transform_error_report(result.true_cumulative, result.estimates['true_q', TransformMethod.EXACT])
    continuous = transform_error_report(result.true_cumulative, result.estimates['true_q', TransformMethod.CONTINUOUS])
    assert max(exact.mse) < 1e-20
    for j in range(4):
        assert continuous.mse[j] > exact.mse[j]
        assert continuous.mae[j] > exact.mae[j]


FITTED_Q_REPLICATES = 20
FITTED_Q_CONFIG = FitConfig(
    hidden_widths=(32, 16), dropout_rate=0.0, batch_size=512, max_epochs=30, patience=5, learning_rate=0.005,
)
# cumulative 0 -> 3 MSE at N=10,000 with semi-structured fits
REFERENCE_MSE_TO_ABSORBING = {TransformMethod.EXACT: 0.0018, TransformMethod.CONTINUOUS: 0.0060}
STUDY_WORKERS = 4


def _fitted_q_replicate(replicate: int) -> Dict[TransformMethod, TransformErrorReport]:
    spec = default_dgp(10000, T=36, seed=100 + replicate)
    panel, _ = simulate_panel(spec)
    config = RunConfig(design=SIMULATION_DESIGN, fit=attr.evolve(FITTED_Q_CONFIG, seed=replicate), seed=replicate)
    models = fit_models(panel, config).models
    result = compare_transforms(spec, panel, 36, 1000, models=models, seed=replicate, replicate=replicate)
    return {
        method: transform_error_report(result.true_cumulative, result.estimates['fitted_q', method])
        for method in TransformMethod
    }


@functools.lru_cache(maxsize=None)
def fitted_q_study() -> Tuple[Dict[TransformMethod, TransformErrorReport], ...]:
    return tuple(parallel_map(_fitted_q_replicate, list(range(FITTED_Q_REPLICATES)), workers=STUDY_WORKERS))


@pytest.mark.parametrize("target", range(4))
def test_exact_transform_wins_with_fitted_q(target: int) -> None:
    study = fitted_q_study()
    exact = [r[TransformMethod.EXACT] for r in study]
    continuous = [r[TransformMethod.CONTINUOUS] for r in study]
    assert sum(e.mse[target] < c.mse[target] for e, c in zip(exact, continuous)) >= 18
    assert sum(e.mae[target] < c.mae[target] for e, c in zip(exact, continuous)) >= 18


@pytest.mark.parametrize("method", list(TransformMethod))
def test_fitted_q_error_magnitude(method: TransformMethod) -> None:
    mse = np.mean([r[method].mse[3] for r in fitted_q_study()])
    assert mse < 3.0 * REFERENCE_MSE_TO_ABSORBING[method]


def test_aalen_johansen_matches_truth() -> None:
    spec = default_dgp(20000, T=12, seed=5)
    panel, _ = simulate_panel(spec)
    estimate = aalen_johansen(panel)
    expected = true_cumulative(spec, panel_covariates(panel), 12).mean(axis=0)
    se = np.sqrt(expected * (1.0 - expected) / panel.n_subjects)
    assert np.all(np.abs(estimate.cumulative[12, 0] - expected) <= 3.0 * se + 1e-12)
    np.testing.assert_allclose(estimate.cumulative.sum(axis=2), 1.0, atol=1e-9)
    absorbed = estimate.cumulative[:, 0, 3]
    assert np.all(np.diff(absorbed) >= -1e-12)


def test_structured_recovery() -> None:
    spec = default_dgp(10000, T=36, seed=3, include_interaction=False)
    panel, _ = simulate_panel(spec)
    dataset = transition_datasets(panel)[0, 1]
    model = fit_transition(dataset, SIMULATION_DESIGN, FitConfig(mode=FitMode.STRUCTURED_ONLY))
    errors = recovery_errors(model, spec)
    assert errors.coefficient_errors['x1'] < 0.15
    assert errors.coefficient_errors['x2'] < 0.15
    assert errors.nonlinear_ise < 0.05


def test_semi_structured_recovery() -> None:
    spec = default_dgp(5000, T=12, seed=4, include_interaction=False, rw_sigma=0.0)
    panel, _ = simulate_panel(spec)
    dataset = transition_datasets(panel)[0, 1]
    config = FitConfig(hidden_widths=(16, 8), dropout_rate=0.0, max_epochs=20, patience=5, learning_rate=0.001, seed=4)
    model = fit_transition(dataset, SIMULATION_DESIGN, config)
    errors = recovery_errors(model, spec)
    assert errors.coefficient_errors['x1'] < 0.25
    assert errors.coefficient_errors['x2'] < 0.25

    rows = dataset.columns()
    structured, unstructured = decompose(model, rows)
    assert np.linalg.norm(unstructured) < 0.2 * np.linalg.norm(structured)
    assert np.all((predict_q(model, rows) > 0) & (predict_q(model, rows) < 1))


RECOVERY_SEEDS = 20


def _recovery_point(job: Tuple[int, int]) -> RecoveryErrors:
    n_subjects, seed = job
    spec = default_dgp(n_subjects, T=36, seed=seed, include_interaction=False)
    panel, _ = simulate_panel(spec)
    dataset = transition_datasets(panel)[0, 1]
    return recovery_errors(fit_transition(dataset, SIMULATION_DESIGN, FitConfig(mode=FitMode.STRUCTURED_ONLY)), spec)


def test_recovery_improves_with_sample_size() -> None:
    jobs = [(n, seed) for n in (10000, 50000) for seed in range(RECOVERY_SEEDS)]
    errors = parallel_map(_recovery_point, jobs, workers=STUDY_WORKERS)
    small, large = errors[:RECOVERY_SEEDS], errors[RECOVERY_SEEDS:]

    for name in ('x1', 'x2'):
        small_errors = [e.coefficient_errors[name] for e in small]
        large_errors = [e.coefficient_errors[name] for e in large]
        assert np.median(large_errors) < 0.15
        assert np.mean(large_errors) < np.mean(small_errors)
    for curve in ('baseline_ise', 'nonlinear_ise'):
        assert np.mean([getattr(e, curve) for e in large]) < np.mean([getattr(e, curve) for e in small])
        # paired by seed, so both sample sizes share the true curves
        assert sum(getattr(l, curve) < getattr(s, curve) for s, l in zip(small, large)) >= 16
