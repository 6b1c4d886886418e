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
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from semi_msm.config import RunConfig
from semi_msm.core import Panel, StateSpace, Edge, TransitionDataset, CovariateSchema, build_panel
from semi_msm.design import DesignSpec
from semi_msm.fit import FitConfig, FitMode, TransitionModel
from semi_msm.pipeline import fit_models
from semi_msm.sim import DgpSpec, default_dgp, simulate_panel


def panel_from_paths(
        paths: Sequence[Sequence[int]],
        space: Optional[StateSpace] = None,
        covariates: Optional[Mapping[str, Sequence[Any]]] = None,
        schema: Optional[CovariateSchema] = None,
) -> Panel:
    """One subject per path, ids s0, s1, ...; covariates are given per subject and held constant."""
    covariates = covariates or {}
    records = []
    for i, states in enumerate(paths):
        for t, state in enumerate(states):
            record = {'id': "s{}".format(i), 't': t, 'state': state}
            for name, values in covariates.items():
                record[name] = values[i]
            records.append(record)
    return build_panel(records, space or StateSpace(), schema)


def dataset_from_labels(labels: Sequence[int], rows_per_subject: int = 5, **covariates: Sequence[Any]) -> TransitionDataset:
    n = len(labels)
    return TransitionDataset(
        edge=(0, 1),
        schema=CovariateSchema(),
        subject_ids=np.array(["s{}".format(i // rows_per_subject) for i in range(n)], dtype=object),
        times=np.array([1 + i % rows_per_subject for i in range(n)], dtype=np.int64),
        covariates={k: np.asarray(v) for k, v in covariates.items()},
        labels=np.asarray(labels, dtype=np.int64),
    )


def tiny_fit_config(mode: FitMode = FitMode.SEMI_STRUCTURED, **kwargs: Any) -> FitConfig:
    defaults = dict(
        mode=mode,
        batch_size=64,
        max_epochs=4,
        patience=2,
        hidden_widths=(6, 3),
        dropout_rate=0.0,
        learning_rate=0.01,
    )
    defaults.update(kwargs)
    return FitConfig(**defaults)  # type: ignore


SMALL_RUN_CONFIG = RunConfig(
    design=DesignSpec(linear_terms=('x1', 'x2'), standardise=False),
    fit=FitConfig(mode=FitMode.STRUCTURED_ONLY),
    seed=1,
)


@functools.lru_cache(maxsize=None)
def fitted_simulation() -> Tuple[Panel, DgpSpec, Dict[Edge, TransitionModel]]:
    """Structured-only models of every edge on a small simulated panel, fitted once per test session."""
    spec = default_dgp(600, T=12, seed=1)
    panel, _ = simulate_panel(spec)
    return panel, spec, fit_models(panel, SMALL_RUN_CONFIG).models
