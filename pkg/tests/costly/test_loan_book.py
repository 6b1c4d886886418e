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

import os

import numpy as np
import pandas as pd

from semi_msm.cli import MsmCommand
from semi_msm.config import RunConfig
from semi_msm.core import StateSpace, read_panel_csv, write_panel_csv
from semi_msm.fit import FitConfig, FitMode
from semi_msm.loans import simulate_loan_book, LOAN_BOOK_DESIGN, COVID_COLUMN
from semi_msm.pipeline import fit_models, predict_distributions, evaluate_models

from tests.cheap.utils import tiny_fit_config


def test_loan_book_pipeline(tmpdir: str) -> None:
    panel = simulate_loan_book(200, 36, seed=0)
    path = os.path.join(str(tmpdir), 'loans.csv')
    write_panel_csv(panel, path)
    panel = read_panel_csv(path, StateSpace())
    assert set(panel.covariates[COVID_COLUMN]) == {0.0, 1.0}

    structured = fit_models(panel, RunConfig(design=LOAN_BOOK_DESIGN, fit=FitConfig(mode=FitMode.STRUCTURED_ONLY)))
    semi = fit_models(panel, RunConfig(design=LOAN_BOOK_DESIGN, fit=tiny_fit_config(hidden_widths=(8,), max_epochs=3)))
    assert structured.shared_woe and semi.shared_woe
    for model in semi.models.values():
        assert model.network is not None

    predictions = predict_distributions(semi.models, panel, 6, 12)
    np.testing.assert_allclose(predictions.distributions.sum(axis=1), 1.0, atol=1e-9)

    rows, rules = evaluate_models(
        {'semi': semi.models, 'structured': structured.models}, panel, [(6, 12), (12, 18)], panel,
    )
    assert [(r.span, r.model) for r in rows] == [
        ((6, 12), 'semi'), ((6, 12), 'structured'), ((12, 18), 'semi'), ((12, 18), 'structured'),
    ]
    for row in rows:
        assert 0.0 <= row.accuracy <= 1.0
        assert np.isnan(row.multi_auc) or 0.0 <= row.multi_auc <= 1.0
    assert sorted(rules['semi']) == ['12-18', '6-12']


def test_loan_book_command_line(tmpdir: str) -> None:
    panel = os.path.join(str(tmpdir), 'loans.csv')
    config = os.path.join(str(tmpdir), 'loans.json')
    models = os.path.join(str(tmpdir), 'models')
    metrics = os.path.join(str(tmpdir), 'metrics.csv')
    command = MsmCommand()
    assert command.run(['simulate', '--loan-book', '--n', '200', '--out', panel, '--write-config', config]) == 0
    assert command.run(['--config', config, 'fit', '--panel', panel, '--out', models, '--mode', 'structured_only']) == 0
    assert command.run(['--config', config, 'evaluate', '--model', 'structured=' + models, '--panel', panel,
                        '--spans', '6-12,12-24', '--csv', metrics]) == 0
    assert pd.read_csv(metrics)['model'].tolist() == ['structured', 'structured']
