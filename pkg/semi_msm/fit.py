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
import warnings
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Any

import attr
import numpy as np
import scipy.linalg
from scipy.special import expit
from sklearn.model_selection import train_test_split

from semi_msm.core import TransitionDataset, Columns, Edge, format_edge
from semi_msm.design import DesignSpec, DesignMatrix, PreprocessParams, build_design, network_inputs
from semi_msm.errors import MsmError, ValidationError, NumericalError, Diverged, BootstrapFailed, \
    UnknownColumn, BootstrapReplicateWarning
from semi_msm.neural import Activation, Mode, MlpConfig, MlpParams, MlpGradients, LrSchedule, AdamState, \
    init_params, forward, backward, adam_update, l2_term
from semi_msm.parallel import parallel_map
from semi_msm.utils import rng_stream, Stream, logit_loss

EVAL_CHUNK_ROWS = 1 << 16


class FitMode(Enum):
    SEMI_STRUCTURED = 1
    STRUCTURED_ONLY = 2


@attr.s(slots=True, frozen=True, auto_attribs=True)
class FitConfig:
    mode: FitMode = FitMode.SEMI_STRUCTURED
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 20
    validation_fraction: float = 0.1
    learning_rate: float = 0.001
    decay_rate: float = 0.9
    decay_steps: int = 10000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    hidden_widths: Tuple[int, ...] = (100, 50)
    activation: Activation = Activation.RELU
    dropout_rate: float = 0.25
    l2_penalty: float = 0.0
    spline_lambdas: Dict[str, float] = attr.Factory(dict)
    default_lambda: float = 1.0
    warm_start: bool = True
    newton_max_iter: int = 100
    newton_tolerance: float = 1e-10
    divergence_factor: float = 10.0
    divergence_epochs: int = 3
    seed: int = 0

    def __attrs_post_init__(self) -> None:
        if not 0 < self.validation_fraction < 1:
            raise ValidationError("validation_fraction must be in (0, 1)")
        if self.patience < 1:
            raise ValidationError("patience must be at least 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValidationError("batch_size and max_epochs must be positive")
        if self.default_lambda < 0 or any(v < 0 for v in self.spline_lambdas.values()):
            raise ValidationError("Smoothing parameters must be non-negative")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        # Validates the schedule fields as well
        self.schedule()

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.learning_rate, self.decay_rate, self.decay_steps)


@attr.s(slots=True, frozen=True, auto_attribs=True)
class FitMetadata:
    epochs_run: int
    best_epoch: int
    train_loss: float
    validation_loss: float
    orthogonality: float
    converged: bool
    n_rows: int
    n_train: int
    seed: int


@attr.s(slots=True, frozen=True, auto_attribs=True, eq=False)
class TransitionModel:
    """A fitted binary logit of one edge.

    `coefficients` are the structured coefficients after the part of the
    network output lying in the structured column space has been moved
    into them; `raw_coefficients` are the ones the optimiser ended with.
    Both give identical predictions.
    """
    edge: Tuple[int, int]
    mode: FitMode
    spec: DesignSpec
    preprocess: PreprocessParams
    coefficients: Tuple[float, ...]
    raw_coefficients: Tuple[float, ...]
    network: Optional[MlpParams]
    metadata: FitMetadata

    def __attrs_post_init__(self) -> None:
        m = len(self.preprocess.column_names)
        if len(self.coefficients) != m or len(self.raw_coefficients) != m:
            raise ValidationError("Edge {}: {} design columns but {} coefficients".format(
                format_edge(self.edge), m, len(self.coefficients)))
        if not np.all(np.isfinite(self.coefficients)) or not np.all(np.isfinite(self.raw_coefficients)):
            raise Diverged("Edge {}: non-finite coefficients".format(format_edge(self.edge)))
        if (self.network is None) != (self.mode == FitMode.STRUCTURED_ONLY):
            raise ValidationError("Only semi-structured models have a network")

    @property
    def column_names(self) -> Tuple[str, ...]:
        return self.preprocess.column_names

    def coefficient(self, name: str) -> float:
        try:
            return self.coefficients[self.column_names.index(name)]
        except ValueError:
            raise UnknownColumn("Edge {} has no coefficient '{}'".format(format_edge(self.edge), name)) from None

    def block_coefficients(self, prefix: str) -> np.ndarray:
        """Coefficients whose column name starts with `prefix`, e.g. 's(t)['."""
        return np.array([c for n, c in zip(self.column_names, self.coefficients) if n.startswith(prefix)])


def network_output(net: MlpParams, inputs: np.ndarray) -> np.ndarray:
    """Eval-mode network output, computed in chunks."""
    if len(inputs) == 0:
        return np.zeros(0)
    return np.concatenate([
        forward(net, inputs[i:i + EVAL_CHUNK_ROWS], Mode.EVAL).output
        for i in range(0, len(inputs), EVAL_CHUNK_ROWS)
    ])


def loss_and_gradients(
        beta: np.ndarray, net: Optional[MlpParams], X: np.ndarray, U: Optional[np.ndarray], y: np.ndarray,
        penalty: np.ndarray, n_total: int,
        mode: Mode = Mode.EVAL, rng: Optional[np.random.Generator] = None,
) -> Tuple[float, np.ndarray, Optional[MlpGradients]]:
    """Objective on a batch and its gradients.

    mean logit NLL + beta' penalty beta / n_total + l2 * sum(W^2). `penalty`
    already includes the smoothing parameters.
    """
    eta = X @ beta
    cache = None
    if net is not None:
        assert U is not None
        cache = forward(net, U, mode, rng)
        eta = eta + cache.output
    loss = logit_loss(y, eta) + float(beta @ penalty @ beta) / n_total
    upstream = (expit(eta) - y) / len(y)
    grad_beta = X.T @ upstream + 2.0 * (penalty @ beta) / n_total
    net_grads = None
    if net is not None:
        assert cache is not None
        loss += l2_term(net)
        net_grads = backward(net, cache, upstream)
    return loss, grad_beta, net_grads


def penalised_newton(
        X: np.ndarray, y: np.ndarray, penalty: np.ndarray, *,
        max_iter: int = 100, tolerance: float = 1e-10, beta0: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, int, bool]:
    """Minimises mean logit NLL + beta' penalty beta / n by damped Newton steps.

    Returns (beta, iterations, converged).
    """
    n, m = X.shape
    beta = np.zeros(m) if beta0 is None else np.array(beta0, dtype=float)
    scaled_penalty = penalty / n

    def objective(b: np.ndarray) -> float:
        return logit_loss(y, X @ b) + float(b @ scaled_penalty @ b)

    current = objective(beta)
    for iteration in range(1, max_iter + 1):
        p = expit(X @ beta)
        gradient = X.T @ (p - y) / n + 2.0 * scaled_penalty @ beta
        hessian = (X.T * (p * (1.0 - p))) @ X / n + 2.0 * scaled_penalty
        try:
            step = scipy.linalg.solve(hessian, gradient, assume_a='sym')
        except (scipy.linalg.LinAlgError, ValueError) as e:
            raise Diverged("Newton step failed: {}".format(e)) from e
        t = 1.0
        candidate = beta - step
        value = objective(candidate)
        while value > current and t > 1e-10:
            t *= 0.5
            candidate = beta - t * step
            value = objective(candidate)
        if not np.all(np.isfinite(candidate)) or not np.isfinite(value):
            raise Diverged("Newton iterations left the finite range")
        beta, current = candidate, value
        if np.max(np.abs(t * step)) < tolerance:
            return beta, iteration, True
    return beta, max_iter, False


def split_by_subject(subject_ids: np.ndarray, labels: np.ndarray, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row indices (train, validation); subjects never straddle the split.

    Stratified on whether a subject has any positive row, when both strata
    are large enough for that.
    """
    subjects, inverse = np.unique(np.asarray(subject_ids, dtype=str), return_inverse=True)
    if len(subjects) < 2:
        raise ValidationError("A validation split needs at least two subjects")
    has_event = np.zeros(len(subjects), dtype=bool)
    np.logical_or.at(has_event, inverse, labels == 1)
    random_state = int(rng_stream(seed, Stream.VALIDATION_SPLIT).integers(2 ** 31 - 1))
    indices = np.arange(len(subjects))
    try:
        _, validation_subjects = train_test_split(indices, test_size=fraction, random_state=random_state, stratify=has_event)
    except ValueError:
        _, validation_subjects = train_test_split(indices, test_size=fraction, random_state=random_state)
    is_validation = np.isin(inverse, validation_subjects)
    return np.flatnonzero(~is_validation), np.flatnonzero(is_validation)


def _objective(beta: np.ndarray, net: Optional[MlpParams], X: np.ndarray, U: Optional[np.ndarray], y: np.ndarray,
               penalty: np.ndarray, n_total: int) -> float:
    eta = X @ beta
    if net is not None:
        assert U is not None
        eta = eta + network_output(net, U)
        return logit_loss(y, eta) + float(beta @ penalty @ beta) / n_total + l2_term(net)
    return logit_loss(y, eta) + float(beta @ penalty @ beta) / n_total


def _validation_loss(beta: np.ndarray, net: Optional[MlpParams], X: np.ndarray, U: Optional[np.ndarray], y: np.ndarray) -> float:
    eta = X @ beta
    if net is not None:
        assert U is not None
        eta = eta + network_output(net, U)
    return logit_loss(y, eta)


def _initial_beta(X: np.ndarray, y: np.ndarray, penalty: np.ndarray, cfg: FitConfig) -> np.ndarray:
    if cfg.warm_start:
        try:
            beta, _, _ = penalised_newton(X, y, penalty, max_iter=cfg.newton_max_iter, tolerance=cfg.newton_tolerance)
            return beta
        except Diverged:
            pass
    beta = np.zeros(X.shape[1])
    # Without a warm start, the intercept (always the first column when present) starts at the base rate
    if X.shape[1] and np.all(X[:, 0] == 1.0):
        rate = float(np.clip(np.mean(y), 1e-6, 1 - 1e-6))
        beta[0] = np.log(rate / (1.0 - rate))
    return beta


def _fit_semi_structured(
        X: np.ndarray, U: np.ndarray, y: np.ndarray, train: np.ndarray, validation: np.ndarray,
        penalty: np.ndarray, cfg: FitConfig,
) -> Tuple[np.ndarray, MlpParams, Dict[str, Any]]:
    # pylint: disable=too-many-locals
    if U.shape[1] == 0:
        raise ValidationError("Semi-structured fits need at least one network input")
    n_train = len(train)
    X_tr, U_tr, y_tr = X[train], U[train], y[train]
    X_val, U_val, y_val = X[validation], U[validation], y[validation]

    beta = _initial_beta(X_tr, y_tr, penalty, cfg)
    net = init_params(MlpConfig(
        layer_widths=(U.shape[1],) + tuple(cfg.hidden_widths) + (1,),
        activation=cfg.activation,
        dropout_rate=cfg.dropout_rate,
        l2_penalty=cfg.l2_penalty,
        seed=cfg.seed,
    ))
    dropout_rng = rng_stream(cfg.seed, Stream.DROPOUT)
    shuffle_rng = rng_stream(cfg.seed, Stream.SHUFFLE)
    schedule = cfg.schedule()

    arrays = [beta] + net.arrays()
    state = AdamState.zeros_like(arrays)
    initial_loss = _objective(beta, net, X_tr, U_tr, y_tr, penalty, n_train)
    best_loss = _validation_loss(beta, net, X_val, U_val, y_val)
    best_arrays = list(arrays)
    best_epoch = 0
    epochs_without_improvement = 0
    diverging_epochs = 0
    train_loss = initial_loss
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            loss, grad_beta, grad_net = loss_and_gradients(
                beta, net, X_tr[rows], U_tr[rows], y_tr[rows], penalty, n_train, Mode.TRAIN, dropout_rng,
            )
            if not np.isfinite(loss):
                raise Diverged("Non-finite training loss in epoch {}".format(epoch))
            assert grad_net is not None
            arrays, state = adam_update(
                arrays, [grad_beta] + grad_net.arrays(), state, schedule, cfg.beta1, cfg.beta2, cfg.epsilon,
            )
            beta = arrays[0]
            net = net.with_arrays(arrays[1:])

        train_loss = _objective(beta, net, X_tr, U_tr, y_tr, penalty, n_train)
        if not np.isfinite(train_loss):
            raise Diverged("Non-finite training loss after epoch {}".format(epoch))
        if train_loss > cfg.divergence_factor * initial_loss:
            diverging_epochs += 1
            if diverging_epochs >= cfg.divergence_epochs:
                raise Diverged("Training loss above {} times its initial value for {} epochs".format(
                    cfg.divergence_factor, diverging_epochs))
        else:
            diverging_epochs = 0

        validation_loss = _validation_loss(beta, net, X_val, U_val, y_val)
        if validation_loss < best_loss:
            best_loss = validation_loss
            best_arrays = list(arrays)
            best_epoch = epoch
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= cfg.patience:
                break

    beta = best_arrays[0]
    net = net.with_arrays(best_arrays[1:])
    return beta, net, {
        'epochs_run': epoch,
        'best_epoch': best_epoch,
        'train_loss': _objective(beta, net, X_tr, U_tr, y_tr, penalty, n_train),
        'validation_loss': best_loss,
        'converged': epoch < cfg.max_epochs,
    }


def reattribute(design: DesignMatrix, network_values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Splits network outputs into the least squares fit on X and the remainder.

    Returns (delta, orthogonal remainder); X delta + remainder == network_values.
    """
    assert design.Q is not None and design.R is not None
    delta = scipy.linalg.solve_triangular(design.R, design.Q.T @ network_values)
    return delta, network_values - design.X @ delta


def orthogonality(X: np.ndarray, unstructured: np.ndarray) -> float:
    """max |X' eta_unstr|, relative to the row count and the magnitudes involved."""
    if len(unstructured) == 0:
        return 0.0
    scale = max(float(np.max(np.abs(X))), 1.0) * max(float(np.max(np.abs(unstructured))), 1.0)
    return float(np.max(np.abs(X.T @ unstructured))) / (len(unstructured) * scale)


def _estimate(
        design: DesignMatrix, U: Optional[np.ndarray], ds: TransitionDataset, cfg: FitConfig,
) -> Tuple[np.ndarray, np.ndarray, Optional[MlpParams], FitMetadata]:
    """(coefficients, raw coefficients, network, metadata) on an already built design."""
    # pylint: disable=too-many-locals
    penalty = design.scaled_penalty(cfg.spline_lambdas, cfg.default_lambda)
    y = ds.labels.astype(float)
    X = design.X
    train, validation = split_by_subject(ds.subject_ids, ds.labels, cfg.validation_fraction, cfg.seed)

    if cfg.mode == FitMode.STRUCTURED_ONLY:
        beta, iterations, converged = penalised_newton(
            X, y, penalty, max_iter=cfg.newton_max_iter, tolerance=cfg.newton_tolerance,
        )
        metadata = FitMetadata(
            epochs_run=iterations,
            best_epoch=iterations,
            train_loss=_objective(beta, None, X, None, y, penalty, len(y)),
            validation_loss=_validation_loss(beta, None, X[validation], None, y[validation]),
            orthogonality=0.0,
            converged=converged,
            n_rows=len(y),
            n_train=len(y),
            seed=cfg.seed,
        )
        return beta, beta, None, metadata

    if U is None:
        raise ValidationError("Semi-structured fits need network inputs")
    raw_beta, net, stats = _fit_semi_structured(X, U, y, train, validation, penalty, cfg)
    delta, unstructured = reattribute(design, network_output(net, U))
    metadata = FitMetadata(
        n_rows=len(y),
        n_train=len(train),
        seed=cfg.seed,
        orthogonality=orthogonality(X, unstructured),
        **stats,
    )
    return raw_beta + delta, raw_beta, attr.evolve(net, adam=None), metadata


def fit_transition(
        ds: TransitionDataset, spec: DesignSpec, cfg: FitConfig,
        woe_maps: Optional[Mapping[str, Dict[str, float]]] = None,
        params: Optional[PreprocessParams] = None,
) -> TransitionModel:
    """Fits one edge. Preprocessing is fitted on `ds` unless `params` are given."""
    ds.check_labels()
    data = ds.columns()
    design, params = build_design(spec, data, params, target=ds.labels, woe_maps=woe_maps)
    U = network_inputs(spec, params, data) if cfg.mode == FitMode.SEMI_STRUCTURED else None
    coefficients, raw, net, metadata = _estimate(design, U, ds, cfg)
    return TransitionModel(
        edge=ds.edge,
        mode=cfg.mode,
        spec=spec,
        preprocess=params,
        coefficients=tuple(float(b) for b in coefficients),
        raw_coefficients=tuple(float(b) for b in raw),
        network=net,
        metadata=metadata,
    )


def _linear_predictors(model: TransitionModel, rows: Columns) -> Tuple[np.ndarray, np.ndarray]:
    design, _ = build_design(model.spec, rows, model.preprocess, factorize=False)
    if model.network is None:
        return design.X, np.zeros(len(design.X))
    return design.X, network_output(model.network, network_inputs(model.spec, model.preprocess, rows))


def predict_q(model: TransitionModel, rows: Columns) -> np.ndarray:
    """q = P(Z(t)=l | Z(t-1)=k, Z(t) in {k, l}) for every row."""
    X, network_values = _linear_predictors(model, rows)
    return expit(X @ np.asarray(model.raw_coefficients) + network_values)


def decompose(model: TransitionModel, rows: Columns) -> Tuple[np.ndarray, np.ndarray]:
    """(eta_str, eta_unstr) with the re-attributed coefficients; they sum to the predictor."""
    X, network_values = _linear_predictors(model, rows)
    coefficients = np.asarray(model.coefficients)
    delta = coefficients - np.asarray(model.raw_coefficients)
    return X @ coefficients, network_values - X @ delta


@attr.s(slots=True, frozen=True, auto_attribs=True)
class BootstrapSummary:
    column_names: Tuple[str, ...]
    mean: Tuple[float, ...]
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    n_replicates: int
    n_success: int
    failures: Tuple[Tuple[int, str], ...] = ()
    n_estimable: Tuple[int, ...] = ()

    def interval(self, name: str) -> Tuple[float, float]:
        i = self.column_names.index(name)
        return self.lower[i], self.upper[i]


def _subject_rows(ds: TransitionDataset) -> Tuple[np.ndarray, List[np.ndarray]]:
    subjects, inverse = np.unique(np.asarray(ds.subject_ids, dtype=str), return_inverse=True)
    order = np.argsort(inverse, kind='stable')
    bounds = np.searchsorted(inverse[order], np.arange(len(subjects) + 1))
    return subjects, [order[bounds[i]:bounds[i + 1]] for i in range(len(subjects))]


def resample_subjects(ds: TransitionDataset, draw: np.ndarray) -> TransitionDataset:
    """Dataset made of the paths of the drawn subject indices; repeated draws become distinct subjects."""
    _, rows_per_subject = _subject_rows(ds)
    parts = [rows_per_subject[s] for s in draw]
    rows = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    resampled = ds.subset(rows)
    new_ids = np.repeat(np.array([str(i) for i in range(len(draw))], dtype=object), [len(p) for p in parts])
    return attr.evolve(resampled, subject_ids=new_ids)


def _bootstrap_replicate(
        job: Tuple[int, np.ndarray], ds: TransitionDataset, spec: DesignSpec, cfg: FitConfig,
        params: PreprocessParams,
) -> Tuple[Optional[Tuple[float, ...]], str]:
    """Coefficients of one resample, fitted with the full-data preprocessing.

    Columns that are identically zero in the resample (e.g. a one-hot level
    none of the drawn subjects has) are left out of the fit and come back as NaN.
    """
    b, draw = job
    resampled = resample_subjects(ds, draw)
    try:
        resampled.check_labels()
        data = resampled.columns()
        design, _ = build_design(spec, data, params, factorize=False)
        present = np.flatnonzero(np.any(design.X != 0.0, axis=0))
        U = network_inputs(spec, params, data) if cfg.mode == FitMode.SEMI_STRUCTURED else None
        coefficients, _, _, _ = _estimate(design.restrict(present), U, resampled, attr.evolve(cfg, seed=cfg.seed + b))
        if not np.all(np.isfinite(coefficients)):
            raise Diverged("Non-finite coefficients")
    except MsmError as e:
        return None, "{}: {}".format(type(e).__name__, e)
    full = np.full(design.m, np.nan)
    full[present] = coefficients
    return tuple(float(c) for c in full), ''


def bootstrap_intervals(
        ds: TransitionDataset, spec: DesignSpec, cfg: FitConfig, B: int, *,
        woe_maps: Optional[Mapping[str, Dict[str, float]]] = None,
        workers: int = 1,
) -> BootstrapSummary:
    """Percentile intervals of the coefficients over B subject-level resamples.

    Preprocessing (levels, scaling, knots, WOE maps) is fitted once on `ds`
    and shared by every replicate, so the coefficients stay comparable.
    A coefficient is summarised over the replicates in which its column
    was non-empty; `n_estimable` counts them.
    """
    # pylint: disable=too-many-locals
    if B < 2:
        raise ValidationError("The bootstrap needs at least two replicates")
    ds.check_labels()
    params = build_design(spec, ds.columns(), target=ds.labels, woe_maps=woe_maps, factorize=False)[1]
    subjects, _ = _subject_rows(ds)
    rng = rng_stream(cfg.seed, Stream.BOOTSTRAP)
    jobs = [(b, rng.integers(0, len(subjects), len(subjects))) for b in range(B)]
    results = parallel_map(
        functools.partial(_bootstrap_replicate, ds=ds, spec=spec, cfg=cfg, params=params),
        jobs, workers=workers,
    )
    failures = tuple((b, message) for b, (coefficients, message) in enumerate(results) if coefficients is None)
    for b, message in failures:
        warnings.warn("Bootstrap replicate {} failed: {}".format(b, message), BootstrapReplicateWarning)
    n_success = len(results) - len(failures)
    if n_success < 0.9 * B:
        raise BootstrapFailed("Only {} of {} bootstrap replicates succeeded".format(n_success, B))
    samples = np.array([coefficients for coefficients, _ in results if coefficients is not None], dtype=float)
    n_estimable = np.sum(np.isfinite(samples), axis=0)
    with warnings.catch_warnings():
        # all-NaN columns summarise to NaN
        warnings.simplefilter('ignore', RuntimeWarning)
        lower, upper = np.nanpercentile(samples, [2.5, 97.5], axis=0)
        mean = np.nanmean(samples, axis=0)
    return BootstrapSummary(
        column_names=params.column_names,
        mean=tuple(float(v) for v in mean),
        lower=tuple(float(v) for v in lower),
        upper=tuple(float(v) for v in upper),
        n_replicates=B,
        n_success=n_success,
        failures=failures,
        n_estimable=tuple(int(n) for n in n_estimable),
    )


@attr.s(slots=True, frozen=True, auto_attribs=True)
class GridSearchResult:
    best: FitConfig
    best_index: int
    scores: Tuple[float, ...]
    replicate_scores: Tuple[Tuple[float, ...], ...]


def _grid_point_score(
        job: Tuple[int, int], ds: TransitionDataset, spec: DesignSpec, grid: Sequence[FitConfig],
        woe_maps: Optional[Mapping[str, Dict[str, float]]],
) -> float:
    index, replicate = job
    cfg = grid[index]
    try:
        model = fit_transition(ds, spec, attr.evolve(cfg, seed=cfg.seed + replicate), woe_maps)
    except NumericalError:
        return float('inf')
    loss = model.metadata.validation_loss
    return loss if np.isfinite(loss) else float('inf')


def grid_search(
        ds: TransitionDataset, spec: DesignSpec, grid: Sequence[FitConfig], replicates: int = 2, *,
        woe_maps: Optional[Mapping[str, Dict[str, float]]] = None,
        workers: int = 1,
) -> GridSearchResult:
    """Picks the configuration with the lowest validation loss, averaged over replicate seeds.

    Configurations whose fit diverges score infinity.
    """
    if not grid:
        raise ValidationError("Grid search needs at least one configuration")
    if replicates < 1:
        raise ValidationError("Grid search needs at least one replicate")
    jobs = [(i, r) for i in range(len(grid)) for r in range(replicates)]
    flat = parallel_map(
        functools.partial(_grid_point_score, ds=ds, spec=spec, grid=grid, woe_maps=woe_maps),
        jobs, workers=workers,
    )
    per_config = tuple(tuple(flat[i * replicates:(i + 1) * replicates]) for i in range(len(grid)))
    scores = tuple(float(np.mean(s)) for s in per_config)
    best_index = int(np.argmin(scores))
    return GridSearchResult(grid[best_index], best_index, scores, per_config)


@attr.s(slots=True, frozen=True, auto_attribs=True)
class SearchSpace:
    learning_rates: Tuple[float, ...] = tuple(float(v) for v in np.logspace(-2, -4, 7))
    decay_steps: Tuple[int, ...] = (5000, 10000, 15000)
    decay_rates: Tuple[float, ...] = (0.8, 0.9, 0.95, 0.99)
    beta1s: Tuple[float, ...] = (0.8, 0.9, 0.99)
    batch_sizes: Tuple[int, ...] = (32, 128)

    def size(self) -> int:
        return len(self.learning_rates) * len(self.decay_steps) * len(self.decay_rates) * len(self.beta1s) * len(self.batch_sizes)


def sample_configs(space: SearchSpace, n: int, seed: int, base: Optional[FitConfig] = None) -> List[FitConfig]:
    """n configurations drawn uniformly from the search space, other fields from `base`."""
    base = base if base is not None else FitConfig()
    rng = rng_stream(seed, Stream.SEARCH)
    result = []
    for _ in range(n):
        result.append(attr.evolve(
            base,
            learning_rate=float(rng.choice(space.learning_rates)),
            decay_steps=int(rng.choice(space.decay_steps)),
            decay_rate=float(rng.choice(space.decay_rates)),
            beta1=float(rng.choice(space.beta1s)),
            batch_size=int(rng.choice(space.batch_sizes)),
        ))
    return result


def fit_all_edges(
        datasets: Mapping[Edge, TransitionDataset], spec: DesignSpec, configs: Mapping[Edge, FitConfig], *,
        woe_maps: Optional[Mapping[str, Dict[str, float]]] = None,
        workers: int = 1,
) -> Dict[Edge, TransitionModel]:
    edges = sorted(datasets)
    models = parallel_map(
        functools.partial(_fit_edge, datasets=datasets, spec=spec, configs=configs, woe_maps=woe_maps),
        edges, workers=workers,
    )
    return dict(zip(edges, models))


def _fit_edge(
        edge: Edge, datasets: Mapping[Edge, TransitionDataset], spec: DesignSpec, configs: Mapping[Edge, FitConfig],
        woe_maps: Optional[Mapping[str, Dict[str, float]]],
) -> TransitionModel:
    try:
        return fit_transition(datasets[edge], spec, configs[edge], woe_maps)
    except MsmError as e:
        # Keep the error class, but say which edge failed
        raise type(e)("Edge {}: {}".format(format_edge(edge), e)) from e
