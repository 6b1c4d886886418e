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
from typing import Callable, Dict, Optional, Tuple, Any

import attr
import numpy as np
import pandas as pd
from scipy.special import expit

from semi_msm.core import Panel, StateSpace, Edge, DEFAULT_EDGES, panel_from_frame, \
    ID_COLUMN, TIME_COLUMN, STATE_COLUMN, CovariateSchema, CovariateColumn, CovariateKind
from semi_msm.design import INTERCEPT_NAME, spline_effect
from semi_msm.errors import ValidationError, UnknownId, EmptyPanel, MissingTruth
from semi_msm.utils import rng_stream, Stream, readonly

NONLINEAR_CATALOGUE_VERSION = 1
NONLINEAR_GRID = np.linspace(-1.0, 1.0, 1001)
COVARIATE_NAMES = ('x1', 'x2', 'z')
SIMULATION_SCHEMA = CovariateSchema(tuple(CovariateColumn(name, CovariateKind.NUMERIC) for name in COVARIATE_NAMES))

_RAW_NONLINEAR: Dict[int, Callable[[np.ndarray], np.ndarray]] = {
    1: lambda x: np.sin(np.pi * x),
    2: lambda x: np.cos(np.pi * x),
    3: lambda x: 2.0 * x ** 3,
    4: lambda x: 2.0 * np.exp(-8.0 * x ** 2),
    5: lambda x: np.tanh(3.0 * x),
    6: lambda x: 2.0 * expit(12.0 * (x - 0.3)),
    7: lambda x: np.exp(-x) * np.sin(4.0 * x),
    8: lambda x: 2.0 * x ** 2,
    9: lambda x: 2.0 * np.sqrt(x ** 2 + 0.01),
    10: lambda x: 2.0 * np.exp(-2.0 * (x + 1.0)),
}
_NONLINEAR_OFFSETS = {i: float(np.mean(f(NONLINEAR_GRID))) for i, f in _RAW_NONLINEAR.items()}


def _centred_nonlinear(function_id: int, x: Any) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return _RAW_NONLINEAR[function_id](x) - _NONLINEAR_OFFSETS[function_id]


def nonlinear_library(function_id: int) -> Callable[[Any], np.ndarray]:
    """One of ten frozen smooth functions on [-1, 1], each with zero mean on the 1001-point grid.

    1 sine, 2 cosine, 3 cubic, 4 bump, 5 tanh ramp, 6 sigmoid step,
    7 damped oscillation, 8 quadratic, 9 smoothed |x|, 10 exponential decay.
    """
    if function_id not in _RAW_NONLINEAR:
        raise UnknownId("No nonlinear function with id {} (catalogue has 1..10)".format(function_id))
    return functools.partial(_centred_nonlinear, function_id)


def gen_baseline(T: int, sigma: float, seed: int, key: int = 0, *, centre: bool = True) -> np.ndarray:
    """Second order random walk f(0..T) with f0 = f1 = 0, shifted to mean zero."""
    if sigma < 0:
        raise ValidationError("Random walk sigma must be non-negative")
    if T < 1:
        raise ValidationError("A baseline needs T >= 1")
    noise = rng_stream(seed, Stream.BASELINE, key).normal(0.0, 1.0, T + 1) * sigma
    f = np.zeros(T + 1)
    for t in range(2, T + 1):
        f[t] = 2.0 * f[t - 1] - f[t - 2] + noise[t]
    if centre:
        f = f - f.mean()
    return f


@attr.s(slots=True, frozen=True, auto_attribs=True)
class EdgeDgp:
    edge: Tuple[int, int]
    intercept: float
    beta1: float
    beta2: float
    baseline: Tuple[float, ...]
    nonlinear_id: int

    def __attrs_post_init__(self) -> None:
        if abs(sum(self.baseline)) > 1e-9:
            raise ValidationError("Baseline of edge {}-{} does not sum to zero".format(*self.edge))
        nonlinear_library(self.nonlinear_id)


@attr.s(slots=True, frozen=True, auto_attribs=True)
class DgpSpec:
    n_subjects: int
    edges: Tuple[EdgeDgp, ...]
    T: int = 36
    include_interaction: bool = True
    rw_sigma: float = 0.05
    seed: int = 0

    def __attrs_post_init__(self) -> None:
        if self.T < 2:
            raise ValidationError("Simulations need T >= 2")
        if self.n_subjects < 1:
            raise ValidationError("Simulations need at least one subject")
        for e in self.edges:
            if len(e.baseline) != self.T + 1:
                raise ValidationError("Baseline of edge {}-{} must have T + 1 values".format(*e.edge))
        StateSpace(edges=self.space_edges)

    @property
    def space_edges(self) -> Tuple[Edge, ...]:
        return tuple(e.edge for e in self.edges)

    @property
    def space(self) -> StateSpace:
        return StateSpace(edges=self.space_edges)

    def edge(self, edge: Edge) -> EdgeDgp:
        for e in self.edges:
            if e.edge == edge:
                return e
        raise MissingTruth("The simulation has no edge {}-{}".format(*edge))


# Illustrative (intercept, beta1, beta2, nonlinear id) per edge. They give plausible
# monthly delinquency rates and are not estimates from any data; pass `effects`
# to default_dgp to simulate other values.
DEFAULT_EDGE_EFFECTS: Dict[Edge, Tuple[float, float, float, int]] = {
    (0, 1): (-3.0, 0.5, -0.5, 1),
    (1, 0): (-0.5, -0.5, 0.5, 2),
    (1, 2): (-1.0, 0.5, 0.5, 3),
    (2, 0): (-1.5, -0.5, 0.3, 4),
    (2, 1): (-1.5, 0.3, -0.3, 5),
    (2, 3): (-0.5, 0.8, 0.5, 6),
}


def default_dgp(
        n_subjects: int, T: int = 36, *, seed: int = 0, rw_sigma: float = 0.05,
        include_interaction: bool = True,
        effects: Optional[Dict[Edge, Tuple[float, float, float, int]]] = None,
) -> DgpSpec:
    effects = effects if effects is not None else DEFAULT_EDGE_EFFECTS
    edges = []
    for key, edge in enumerate(DEFAULT_EDGES):
        intercept, beta1, beta2, nonlinear_id = effects[edge]
        baseline = gen_baseline(T, rw_sigma, seed, key) if rw_sigma > 0 else np.zeros(T + 1)
        edges.append(EdgeDgp(edge, intercept, beta1, beta2, tuple(float(v) for v in baseline), nonlinear_id))
    return DgpSpec(n_subjects, tuple(edges), T, include_interaction, rw_sigma, seed)


def dgp_eta(spec: DgpSpec, covariates: np.ndarray, t: int) -> Dict[Edge, np.ndarray]:
    """Linear predictor of every edge at month t; covariates is (n, 3) of x1, x2, z."""
    x1, x2, z = covariates[:, 0], covariates[:, 1], covariates[:, 2]
    result = {}
    for e in spec.edges:
        eta = e.intercept + e.beta1 * x1 + e.beta2 * x2 + e.baseline[t] + nonlinear_library(e.nonlinear_id)(z)
        if spec.include_interaction:
            eta = eta + x1 * x2
        result[e.edge] = eta
    return result


def implied_binary_q(spec: DgpSpec, covariates: np.ndarray, t: int) -> Dict[Edge, np.ndarray]:
    """q_kl = pi_kl / (pi_kl + pi_kk), which under the multinomial logit is expit(eta_kl)."""
    return {edge: expit(eta) for edge, eta in dgp_eta(spec, covariates, t).items()}


def true_one_step_matrices(spec: DgpSpec, covariates: np.ndarray, t: int) -> np.ndarray:
    """(n, K, K) multinomial logit transition matrices of month t, with eta_kk = 0."""
    space = spec.space
    etas = dgp_eta(spec, covariates, t)
    n = len(covariates)
    result = np.broadcast_to(np.eye(space.K), (n, space.K, space.K)).copy()
    for k in space.transient_states:
        targets = space.targets(k)
        if not targets:
            continue
        exp_eta = np.column_stack([np.exp(etas[k, l]) for l in targets])
        denominator = 1.0 + exp_eta.sum(axis=1)
        result[:, k, k] = 1.0 / denominator
        for j, l in enumerate(targets):
            result[:, k, l] = exp_eta[:, j] / denominator
    return result


def true_cumulative(spec: DgpSpec, covariates: np.ndarray, t2: int, start_state: int = 0) -> np.ndarray:
    """Distribution at t2 of subjects in `start_state` at 0, compounding the true matrices."""
    if t2 > spec.T:
        raise ValidationError("t2={} is beyond the simulated horizon {}".format(t2, spec.T))
    K = spec.space.K
    distribution = np.zeros((len(covariates), K))
    distribution[:, start_state] = 1.0
    for t in range(1, t2 + 1):
        distribution = np.einsum('ik,ikl->il', distribution, true_one_step_matrices(spec, covariates, t))
    return distribution


def subject_ids(n: int) -> np.ndarray:
    width = len(str(max(n - 1, 0)))
    return np.array(["{:0{}d}".format(i, width) for i in range(n)], dtype=object)


@attr.s(slots=True, frozen=True, auto_attribs=True, eq=False)
class SimulationTruth:
    spec: DgpSpec
    subject_ids: np.ndarray
    covariates: np.ndarray


def _draw_subject_uniforms(seed: int, n: int, width: int) -> np.ndarray:
    result = np.empty((n, width))
    for i in range(n):
        result[i] = rng_stream(seed, Stream.SUBJECT, i).random(width)
    return result


def simulate_panel(spec: DgpSpec) -> Tuple[Panel, SimulationTruth]:
    """Simulates every subject from state 0 until T or absorption.

    Subject i uses its own stream keyed by (seed, i): three uniforms for the
    covariates, then one per month for the next state.
    """
    n, T = spec.n_subjects, spec.T
    space = spec.space
    uniforms = _draw_subject_uniforms(spec.seed, n, len(COVARIATE_NAMES) + T)
    covariates = 2.0 * uniforms[:, :len(COVARIATE_NAMES)] - 1.0
    draws = uniforms[:, len(COVARIATE_NAMES):]

    states = np.full((n, T + 1), -1, dtype=np.int64)
    states[:, 0] = 0
    current = np.zeros(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    for t in range(1, T + 1):
        active &= ~np.isin(current, space.absorbing)
        if not active.any():
            break
        rows = true_one_step_matrices(spec, covariates[active], t)[np.arange(active.sum()), current[active]]
        cumulative = np.cumsum(rows, axis=1)
        cumulative[:, -1] = 1.0
        nxt = np.argmax(draws[active, t - 1][:, None] < cumulative, axis=1)
        current[active] = nxt
        states[active, t] = nxt

    ids = subject_ids(n)
    observed = states >= 0
    counts = observed.sum(axis=1)
    frame = pd.DataFrame({
        ID_COLUMN: np.repeat(ids, counts),
        TIME_COLUMN: np.concatenate([np.arange(c) for c in counts]),
        STATE_COLUMN: states[observed],
    })
    for j, name in enumerate(COVARIATE_NAMES):
        frame[name] = np.repeat(covariates[:, j], counts)
    panel = panel_from_frame(frame, space, SIMULATION_SCHEMA)
    return panel, SimulationTruth(spec, readonly(ids, dtype=object), readonly(covariates))


def panel_covariates(panel: Panel) -> np.ndarray:
    """(n_subjects, 3) x1, x2, z of a simulated panel, in panel subject order."""
    first_rows = panel.subject_starts[:-1]
    try:
        return np.column_stack([panel.covariates[name][first_rows] for name in COVARIATE_NAMES])
    except KeyError:
        raise MissingTruth("Panel lacks the simulation covariates {}".format(COVARIATE_NAMES)) from None


@attr.s(slots=True, frozen=True, eq=False)
class AjEstimate:
    """cumulative[t] = P(start_time, t); one_step[t] = empirical matrix of month t."""
    start_time: int = attr.ib()
    times: np.ndarray = attr.ib()
    cumulative: np.ndarray = attr.ib()
    one_step: np.ndarray = attr.ib()
    at_risk: np.ndarray = attr.ib()


def aalen_johansen(panel: Panel, start_time: int = 0) -> AjEstimate:
    """Discrete-time product-limit estimate of the cumulative transition probabilities.

    The risk set of month t is every subject observed at both t-1 and t.
    """
    if panel.n_rows == 0:
        raise EmptyPanel("Aalen-Johansen needs a non-empty panel")
    K = panel.space.K
    T = int(panel.times.max())
    prev, nxt = panel.consecutive_pairs()
    moves = np.zeros((T + 1, K, K))
    np.add.at(moves, (panel.times[nxt], panel.states[prev], panel.states[nxt]), 1)
    at_risk = moves.sum(axis=2)
    one_step = np.broadcast_to(np.eye(K), (T + 1, K, K)).copy()
    observed = at_risk > 0
    one_step[observed] = moves[observed] / at_risk[observed][:, None]
    for s in panel.space.absorbing:
        one_step[:, s, :] = np.eye(K)[s]
    cumulative = np.broadcast_to(np.eye(K), (T + 1, K, K)).copy()
    for t in range(start_time + 1, T + 1):
        cumulative[t] = cumulative[t - 1] @ one_step[t]
    return AjEstimate(start_time, np.arange(T + 1), cumulative, one_step, at_risk.astype(np.int64))


@attr.s(slots=True, frozen=True, auto_attribs=True)
class RecoveryErrors:
    edge: Tuple[int, int]
    coefficient_errors: Dict[str, float]
    baseline_ise: float
    nonlinear_ise: float


def recovery_errors(model: Any, spec: DgpSpec, *, duration_column: str = 't', nonlinear_column: str = 'z') -> RecoveryErrors:
    """How far a fitted edge model is from the simulation truth.

    Linear coefficients are compared directly (the model must not standardise
    them); curves and the intercept are compared after centring both sides
    on the evaluation grids.
    """
    truth = spec.edge(model.edge)
    params = model.preprocess
    t_grid = np.arange(1, spec.T + 1, dtype=float)
    z_grid = np.linspace(-1.0, 1.0, 101)
    fitted_baseline = spline_effect(params, duration_column, t_grid, model.block_coefficients('s({})['.format(duration_column)))
    fitted_nonlinear = spline_effect(params, nonlinear_column, z_grid, model.block_coefficients('s({})['.format(nonlinear_column)))
    true_baseline = np.asarray(truth.baseline)[1:]
    true_nonlinear = nonlinear_library(truth.nonlinear_id)(z_grid)

    def centred(values: np.ndarray) -> np.ndarray:
        return values - values.mean()

    fitted_level = model.coefficient(INTERCEPT_NAME) + fitted_baseline.mean() + fitted_nonlinear.mean()
    true_level = truth.intercept + true_baseline.mean() + true_nonlinear.mean()
    return RecoveryErrors(
        edge=model.edge,
        coefficient_errors={
            INTERCEPT_NAME: abs(fitted_level - true_level),
            'x1': abs(model.coefficient('x1') - truth.beta1),
            'x2': abs(model.coefficient('x2') - truth.beta2),
        },
        baseline_ise=float(np.mean((centred(fitted_baseline) - centred(true_baseline)) ** 2)),
        nonlinear_ise=float(np.mean((centred(fitted_nonlinear) - centred(true_nonlinear)) ** 2)),
    )
