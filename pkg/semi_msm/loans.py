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

"""Preprocessing primitives for credit (mortgage delinquency) panels and a synthetic loan book."""

from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.stats import norm

from semi_msm.core import Panel, StateSpace, CovariateSchema, CovariateColumn, CovariateKind, panel_from_frame, \
    ID_COLUMN, TIME_COLUMN, STATE_COLUMN, ORIGIN_COLUMN, DEFAULT_EDGES, Edge
from semi_msm.design import DesignSpec, SplineTerm, Encoding
from semi_msm.errors import UnknownColumn, ValidationError
from semi_msm.utils import rng_stream, Stream

DTI_CUTPOINTS = (20.0, 30.0, 40.0, 65.0)
DTI_LABELS = ('dti1', 'dti2', 'dti3', 'dti4', 'dti5')
DTI_MISSING_LABEL = 'dti5'
DTI_REFERENCE_LABEL = 'dti4'

CALENDAR_COLUMN = 'calendar_month'
COVID_COLUMN = 'cov_dummy'
COVID_FIRST_MONTH = (2020 - 2000) * 12 + 2
COVID_LAST_MONTH = (2020 - 2000) * 12 + 11


def calendar_month(year: int, month: int) -> int:
    """Months since January 2000, which is month 0."""
    if not 1 <= month <= 12:
        raise ValidationError("Invalid month {}".format(month))
    return (year - 2000) * 12 + month - 1


def bucketize_dti(values: Any) -> np.ndarray:
    """DTI percentages to dti1 (<=20), dti2 (<=30), dti3 (<=40), dti4 (<=65) and dti5 (above 65 or missing)."""
    numeric = pd.to_numeric(pd.Series(np.asarray(values, dtype=object)), errors='coerce').to_numpy(dtype=float)
    index = np.searchsorted(DTI_CUTPOINTS, numeric, side='left')
    index[np.isnan(numeric)] = DTI_LABELS.index(DTI_MISSING_LABEL)
    return np.array(DTI_LABELS, dtype=object)[index]


def covid_indicator(calendar_months: Any) -> np.ndarray:
    months = np.asarray(calendar_months)
    return ((months >= COVID_FIRST_MONTH) & (months <= COVID_LAST_MONTH)).astype(float)


def _with_columns(panel: Panel, columns: Dict[str, np.ndarray]) -> Panel:
    frame = panel.frame()
    frame[ORIGIN_COLUMN] = panel.origin_offsets
    schema_columns = list(panel.schema.columns)
    for name, values in columns.items():
        frame[name] = values
        if name not in panel.schema.names:
            schema_columns.append(CovariateColumn(name, CovariateKind.TIME_VARYING))
    return panel_from_frame(frame, panel.space, CovariateSchema(tuple(schema_columns)))


def row_calendar_months(panel: Panel) -> np.ndarray:
    return panel.origin_offsets + panel.times


def attach_calendar_covariates(panel: Panel, table: pd.DataFrame, lag: int = 0) -> Panel:
    """Adds every column of `table` as a time-varying covariate.

    Row t of a subject gets the table row of calendar month origin_offset + t - lag.
    """
    if CALENDAR_COLUMN not in table.columns:
        raise UnknownColumn("Calendar table is missing the '{}' column".format(CALENDAR_COLUMN))
    indexed = table.set_index(CALENDAR_COLUMN)
    if not indexed.index.is_unique:
        raise ValidationError("Calendar table has duplicate months")
    wanted = row_calendar_months(panel) - lag
    missing = np.setdiff1d(wanted, indexed.index.to_numpy())
    if len(missing):
        raise ValidationError("Calendar table has no row for month {}".format(int(missing[0])))
    rows = indexed.loc[wanted]
    return _with_columns(panel, {name: rows[name].to_numpy(dtype=float) for name in indexed.columns})


def add_covid_dummy(panel: Panel) -> Panel:
    return _with_columns(panel, {COVID_COLUMN: covid_indicator(row_calendar_months(panel))})


LOAN_BOOK_SCHEMA = CovariateSchema((
    CovariateColumn('fico', CovariateKind.NUMERIC),
    CovariateColumn('ltv', CovariateKind.NUMERIC),
    CovariateColumn('int_rt', CovariateKind.NUMERIC),
    CovariateColumn('dti', CovariateKind.CATEGORICAL),
    CovariateColumn('seller_name', CovariateKind.CATEGORICAL),
    CovariateColumn('us_state', CovariateKind.CATEGORICAL),
    CovariateColumn(COVID_COLUMN, CovariateKind.TIME_VARYING),
))

LOAN_BOOK_DESIGN = DesignSpec(
    linear_terms=('fico', 'ltv', 'int_rt', 'dti', 'seller_name', 'us_state', COVID_COLUMN),
    spline_terms=(SplineTerm(TIME_COLUMN, basis_dim=6),),
    categorical_encodings={'seller_name': Encoding.WOE, 'us_state': Encoding.WOE},
    reference_levels={'dti': DTI_REFERENCE_LABEL},
)

N_SELLERS = 30
US_STATES = ('CA', 'TX', 'FL', 'NY', 'IL', 'PA', 'OH', 'GA', 'NC', 'MI',
             'NJ', 'VA', 'WA', 'AZ', 'MA', 'TN', 'IN', 'MO', 'MD', 'CO')

# intercept and effects of (fico, ltv, int_rt, covid), on standardised scales
_LOAN_BOOK_EFFECTS: Dict[Edge, Tuple[float, float, float, float, float]] = {
    (0, 1): (-2.3, -0.6, 0.3, 0.3, 0.8),
    (1, 0): (-0.3, 0.4, -0.2, -0.2, -0.3),
    (1, 2): (-0.6, -0.2, 0.3, 0.2, 0.8),
    (2, 0): (-1.2, 0.3, -0.3, -0.2, -0.3),
    (2, 1): (-1.2, 0.1, -0.1, 0.1, 0.2),
    (2, 3): (-1.0, -0.3, 0.2, 0.2, 0.6),
}
_DETERIORATION = ((0, 1), (1, 2), (2, 3))
_CURE = ((1, 0), (2, 0))
_DTI_EFFECTS = np.array([-0.2, -0.1, 0.0, 0.1, 0.2])
FIRST_ORIGINATION = calendar_month(2019, 1)
LAST_ORIGINATION = calendar_month(2020, 6)


def _loan_characteristics(n_loans: int, seed: int) -> pd.DataFrame:
    draws = np.array([rng_stream(seed, Stream.LOAN_BOOK, 0, i).random(8) for i in range(n_loans)]).reshape(n_loans, 8)
    seller_weights = 1.0 / np.arange(1, N_SELLERS + 1)
    seller_cdf = np.cumsum(seller_weights) / seller_weights.sum()
    raw_dti = np.where(draws[:, 4] < 0.05, np.nan, 5.0 + 65.0 * draws[:, 3])
    return pd.DataFrame({
        ID_COLUMN: ["L{:05d}".format(i) for i in range(n_loans)],
        ORIGIN_COLUMN: FIRST_ORIGINATION + np.floor(draws[:, 5] * (LAST_ORIGINATION - FIRST_ORIGINATION + 1)).astype(np.int64),
        'fico': np.clip(np.round(740.0 + 50.0 * norm.ppf(draws[:, 0])), 300, 850),
        'ltv': np.round(40.0 + 57.0 * draws[:, 1]),
        'int_rt': np.round(np.clip(4.0 + norm.ppf(draws[:, 2]), 2.0, 8.0), 3),
        'dti': bucketize_dti(raw_dti),
        'seller_name': ["seller_{:02d}".format(i + 1) for i in np.searchsorted(seller_cdf, draws[:, 6])],
        'us_state': [US_STATES[int(i)] for i in np.floor(draws[:, 7] * len(US_STATES))],
    })


def _market_effects(seed: int) -> Tuple[Dict[str, float], Dict[str, float]]:
    rng = rng_stream(seed, Stream.LOAN_BOOK, 1)
    sellers = {"seller_{:02d}".format(i + 1): float(v) for i, v in enumerate(rng.normal(0.0, 0.3, N_SELLERS))}
    states = {s: float(v) for s, v in zip(US_STATES, rng.normal(0.0, 0.3, len(US_STATES)))}
    return sellers, states


def simulate_loan_book(n_loans: int = 200, T: int = 36, seed: int = 0, space: Optional[StateSpace] = None) -> Panel:
    """Synthetic mortgage panel with the delinquency state space and credit covariates.

    Transition rates are far higher than in real portfolios so that every
    edge is observed even in small books.
    """
    # pylint: disable=too-many-locals
    if n_loans < 1 or T < 1:
        raise ValidationError("A loan book needs at least one loan and one month")
    space = space or StateSpace()
    if space.edges != DEFAULT_EDGES:
        raise ValidationError("The synthetic loan book uses the default delinquency graph")
    loans = _loan_characteristics(n_loans, seed)
    seller_effects, state_effects = _market_effects(seed)
    fico = (loans['fico'].to_numpy() - 740.0) / 50.0
    ltv = (loans['ltv'].to_numpy() - 70.0) / 15.0
    int_rt = loans['int_rt'].to_numpy() - 4.0
    dti = _DTI_EFFECTS[np.searchsorted(DTI_LABELS, loans['dti'].to_numpy().astype(str))]
    market = loans['seller_name'].map(seller_effects).to_numpy() + loans['us_state'].map(state_effects).to_numpy()
    origins = loans[ORIGIN_COLUMN].to_numpy()
    draws = np.array([rng_stream(seed, Stream.LOAN_BOOK, 2, i).random(T) for i in range(n_loans)]).reshape(n_loans, T)

    states = np.full((n_loans, T + 1), -1, dtype=np.int64)
    states[:, 0] = 0
    current = np.zeros(n_loans, dtype=np.int64)
    active = np.ones(n_loans, dtype=bool)
    for t in range(1, T + 1):
        active &= ~np.isin(current, space.absorbing)
        if not active.any():
            break
        covid = covid_indicator(origins + t - 1)
        rows = np.zeros((n_loans, space.K))
        rows[np.arange(n_loans), current] = 1.0
        for k in space.transient_states:
            in_k = active & (current == k)
            exp_eta = {}
            for edge in space.edges_from(k):
                intercept, b_fico, b_ltv, b_rate, b_covid = _LOAN_BOOK_EFFECTS[edge]
                eta = intercept + b_fico * fico + b_ltv * ltv + b_rate * int_rt + b_covid * covid
                if edge in _DETERIORATION:
                    eta = eta + dti + market
                elif edge in _CURE:
                    eta = eta - market
                exp_eta[edge[1]] = np.exp(eta[in_k])
            denominator = 1.0 + sum(exp_eta.values())
            rows[in_k, k] = 1.0 / denominator
            for l, value in exp_eta.items():
                rows[in_k, l] = value / denominator
        cumulative = np.cumsum(rows[active], axis=1)
        cumulative[:, -1] = 1.0
        nxt = np.argmax(draws[active, t - 1][:, None] < cumulative, axis=1)
        current[active] = nxt
        states[active, t] = nxt

    observed = states >= 0
    counts = observed.sum(axis=1)
    frame = loans.loc[np.repeat(np.arange(n_loans), counts)].reset_index(drop=True)
    frame[TIME_COLUMN] = np.concatenate([np.arange(c) for c in counts])
    frame[STATE_COLUMN] = states[observed]
    frame[COVID_COLUMN] = covid_indicator(frame[ORIGIN_COLUMN].to_numpy() + frame[TIME_COLUMN].to_numpy())
    return panel_from_frame(frame, space, LOAN_BOOK_SCHEMA)
