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
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Any

import attr
import numpy as np
import pandas as pd
import scipy.linalg
from scipy.interpolate import BSpline

from semi_msm.core import Columns, DURATION_COLUMN
from semi_msm.errors import ValidationError, InvalidRange, DimTooSmall, AllSameTarget, RankDeficient, \
    UnknownColumn, ShapeMismatch
from semi_msm.utils import readonly

INTERCEPT_NAME = '(Intercept)'
UNSEEN_CATEGORY = '__unseen__'
SPLINE_DEGREE = 3
RANK_TOLERANCE = 1e-9


class Encoding(Enum):
    ONE_HOT = 1
    WOE = 2


@attr.s(slots=True, frozen=True, auto_attribs=True)
class SplineTerm:
    column: str
    basis_dim: int = 10
    penalty_order: int = 2

    def __attrs_post_init__(self) -> None:
        if self.basis_dim < 4:
            raise DimTooSmall("Spline of '{}' needs basis_dim >= 4 (got {})".format(self.column, self.basis_dim))
        if self.penalty_order not in (1, 2):
            raise ValidationError("Spline of '{}': penalty order must be 1 or 2".format(self.column))


@attr.s(slots=True, frozen=True, auto_attribs=True)
class DesignSpec:
    linear_terms: Tuple[str, ...] = ()
    spline_terms: Tuple[SplineTerm, ...] = ()
    categorical_encodings: Dict[str, Encoding] = attr.Factory(dict)
    standardise: bool = True
    include_intercept: bool = True
    # Inputs of the network. Empty means every structured covariate except the duration.
    network_terms: Tuple[str, ...] = ()
    woe_smoothing: float = 0.5
    # One-hot reference level per column, default is the first sorted level
    reference_levels: Dict[str, str] = attr.Factory(dict)

    def __attrs_post_init__(self) -> None:
        spline_columns = [s.column for s in self.spline_terms]
        overlap = set(self.linear_terms) & set(spline_columns)
        if overlap:
            raise ValidationError("Columns used both as linear and spline terms: {}".format(sorted(overlap)))
        if len(set(spline_columns)) != len(spline_columns) or len(set(self.linear_terms)) != len(self.linear_terms):
            raise ValidationError("Duplicate terms in design spec")
        if self.woe_smoothing <= 0:
            raise ValidationError("WOE smoothing must be positive")

    @property
    def spline_columns(self) -> Tuple[str, ...]:
        return tuple(s.column for s in self.spline_terms)

    def effective_network_terms(self) -> Tuple[str, ...]:
        if self.network_terms:
            return self.network_terms
        return tuple(c for c in self.linear_terms + self.spline_columns if c != DURATION_COLUMN)

    def encoding(self, column: str) -> Encoding:
        return self.categorical_encodings.get(column, Encoding.ONE_HOT)


@attr.s(slots=True, frozen=True, auto_attribs=True)
class Standardisation:
    mean: float
    sd: float

    def __attrs_post_init__(self) -> None:
        if not self.sd > 0:
            raise ValidationError("Standard deviations must be positive")

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.sd


@attr.s(slots=True, frozen=True, auto_attribs=True, eq=False)
class SplineParams:
    """Knots and identifiability constraint of one spline term.

    The term evaluates a (basis_dim + 1)-function B-spline basis and keeps
    the basis_dim dimensional null space of the training column sums
    (the columns of `constraint`), so the block never contains the constant.
    """
    knots: Tuple[float, ...]
    basis_dim: int
    penalty_order: int
    constraint: np.ndarray

    def __attrs_post_init__(self) -> None:
        if np.any(np.diff(self.knots) <= 0):
            raise InvalidRange("Spline knots must be strictly increasing")
        if self.constraint.shape != (self.basis_dim + 1, self.basis_dim):
            raise ShapeMismatch("Spline constraint has shape {}".format(self.constraint.shape))

    @property
    def value_range(self) -> Tuple[float, float]:
        return self.knots[SPLINE_DEGREE], self.knots[-SPLINE_DEGREE - 1]

    def raw_basis(self, x: np.ndarray) -> np.ndarray:
        return _bspline_matrix(x, np.asarray(self.knots))

    def basis(self, x: np.ndarray) -> np.ndarray:
        return self.raw_basis(x) @ self.constraint

    def penalty(self) -> np.ndarray:
        s = difference_penalty(self.basis_dim + 1, self.penalty_order)
        return self.constraint.T @ s @ self.constraint


@attr.s(slots=True, frozen=True, auto_attribs=True)
class PreprocessParams:
    standardisation: Dict[str, Standardisation]
    woe_maps: Dict[str, Dict[str, float]]
    one_hot_levels: Dict[str, Tuple[str, ...]]
    splines: Dict[str, SplineParams]
    column_names: Tuple[str, ...]
    network_columns: Tuple[str, ...]


class BlockKind(Enum):
    INTERCEPT = 1
    LINEAR = 2
    SPLINE = 3


@attr.s(slots=True, frozen=True, auto_attribs=True)
class ColumnBlock:
    name: str
    kind: BlockKind
    start: int
    stop: int


@attr.s(slots=True, frozen=True, eq=False)
class DesignMatrix:
    X: np.ndarray = attr.ib()
    column_names: Tuple[str, ...] = attr.ib()
    column_blocks: Tuple[ColumnBlock, ...] = attr.ib()
    penalty: np.ndarray = attr.ib()
    Q: Optional[np.ndarray] = attr.ib(default=None)
    R: Optional[np.ndarray] = attr.ib(default=None)

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def block(self, name: str) -> ColumnBlock:
        for b in self.column_blocks:
            if b.name == name:
                return b
        raise UnknownColumn("No design block named '{}'".format(name))

    def restrict(self, keep: Sequence[int]) -> 'DesignMatrix':
        """The design on the `keep` columns only, refactorized. Emptied blocks disappear."""
        columns = np.asarray(keep, dtype=np.int64)
        blocks = []
        start = 0
        for b in self.column_blocks:
            width = int(np.count_nonzero((columns >= b.start) & (columns < b.stop)))
            if width:
                blocks.append(ColumnBlock(b.name, b.kind, start, start + width))
                start += width
        X = self.X[:, columns]
        Q, R = thin_qr(X, blocks)
        return DesignMatrix(
            X=X,
            column_names=tuple(self.column_names[i] for i in columns),
            column_blocks=tuple(blocks),
            penalty=self.penalty[np.ix_(columns, columns)],
            Q=Q,
            R=R,
        )

    def scaled_penalty(self, lambdas: Mapping[str, float], default: float = 1.0) -> np.ndarray:
        """Penalty with each spline block multiplied by its smoothing parameter."""
        result = np.zeros_like(self.penalty)
        for b in self.column_blocks:
            if b.kind == BlockKind.SPLINE:
                lam = lambdas.get(b.name, default)
                result[b.start:b.stop, b.start:b.stop] = lam * self.penalty[b.start:b.stop, b.start:b.stop]
        return result


def difference_penalty(dim: int, order: int = 2) -> np.ndarray:
    d = np.diff(np.eye(dim), n=order, axis=0)
    return d.T @ d


def spline_knots(value_range: Tuple[float, float], dim: int) -> np.ndarray:
    """dim + 4 evenly spaced knots; the inner ones coincide with the range ends."""
    lo, hi = value_range
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise InvalidRange("Invalid spline range [{}, {}]".format(lo, hi))
    if dim < 4:
        raise DimTooSmall("Spline basis dimension must be at least 4 (got {})".format(dim))
    step = (hi - lo) / (dim - SPLINE_DEGREE)
    knots = lo + step * np.arange(-SPLINE_DEGREE, dim + 1)
    knots[SPLINE_DEGREE] = lo
    knots[dim] = hi
    return knots


def _bspline_matrix(x: Any, knots: np.ndarray) -> np.ndarray:
    lo, hi = knots[SPLINE_DEGREE], knots[-SPLINE_DEGREE - 1]
    x = np.clip(np.asarray(x, dtype=float), lo, hi)
    if len(x) == 0:
        return np.zeros((0, len(knots) - SPLINE_DEGREE - 1))
    return BSpline.design_matrix(x, knots, SPLINE_DEGREE).toarray()


def spline_basis(x: Any, dim: int, value_range: Tuple[float, float], penalty_order: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """Cubic B-spline basis on evenly spaced knots, and its difference penalty.

    Values outside the range are clamped to it.
    """
    knots = spline_knots(value_range, dim)
    return _bspline_matrix(x, knots), difference_penalty(dim, penalty_order)


def woe_encode(column: Any, target: Any, smoothing: float = 0.5) -> Tuple[Dict[str, float], np.ndarray]:
    """Weight of evidence of every category, smoothed by `smoothing` pseudo-counts."""
    if smoothing <= 0:
        raise ValidationError("WOE smoothing must be positive")
    categories_per_row = np.asarray([str(v) for v in column], dtype=object)
    target = np.asarray(target)
    if len(target) != len(categories_per_row):
        raise ShapeMismatch("WOE column and target differ in length")
    if not np.all((target == 0) | (target == 1)):
        raise ValidationError("WOE target must be binary")
    pos = float(target.sum())
    neg = float(len(target) - pos)
    if pos == 0 or neg == 0:
        raise AllSameTarget("WOE target contains a single class")
    categories, inverse = np.unique(categories_per_row, return_inverse=True)
    n_categories = len(categories)
    pos_c = np.bincount(inverse, weights=target.astype(float), minlength=n_categories)
    neg_c = np.bincount(inverse, minlength=n_categories) - pos_c
    s = smoothing
    woe = np.log(((pos_c + s) / (pos + s * n_categories)) / ((neg_c + s) / (neg + s * n_categories)))
    mapping = {str(c): float(w) for c, w in zip(categories, woe)}
    mapping[UNSEEN_CATEGORY] = 0.0
    return mapping, apply_woe(mapping, categories_per_row)


def apply_woe(mapping: Mapping[str, float], column: Any) -> np.ndarray:
    fallback = mapping.get(UNSEEN_CATEGORY, 0.0)
    return pd.Series(np.asarray(column, dtype=object)).astype(str).map(mapping).fillna(fallback).to_numpy(dtype=float)


def _column(data: Columns, name: str) -> np.ndarray:
    if name not in data:
        raise UnknownColumn("Covariate column '{}' is missing".format(name))
    return np.asarray(data[name])


def _is_categorical(spec: DesignSpec, data: Columns, name: str) -> bool:
    return name in spec.categorical_encodings or _column(data, name).dtype.kind in 'OUS'


def fit_woe_maps(spec: DesignSpec, data: Columns, target: Any) -> Dict[str, Dict[str, float]]:
    """WOE maps of every WOE-encoded column the spec uses, fitted against `target`."""
    result = {}
    for name in spec.linear_terms + spec.effective_network_terms():
        if name in result or not _is_categorical(spec, data, name) or spec.encoding(name) != Encoding.WOE:
            continue
        result[name], _ = woe_encode(_column(data, name), target, spec.woe_smoothing)
    return result


def fit_preprocess(
        spec: DesignSpec, data: Columns, *,
        target: Any = None,
        woe_maps: Optional[Mapping[str, Dict[str, float]]] = None,
) -> PreprocessParams:
    # pylint: disable=too-many-locals
    standardisation = {}
    fitted_woe: Dict[str, Dict[str, float]] = {}
    one_hot_levels = {}
    used = list(dict.fromkeys(spec.linear_terms + spec.effective_network_terms()))
    for name in used:
        values = _column(data, name)
        if _is_categorical(spec, data, name):
            if spec.encoding(name) == Encoding.WOE:
                if woe_maps is not None and name in woe_maps:
                    fitted_woe[name] = dict(woe_maps[name])
                else:
                    if target is None:
                        raise ValidationError("WOE encoding of '{}' needs a target".format(name))
                    fitted_woe[name], _ = woe_encode(values, target, spec.woe_smoothing)
            else:
                levels = sorted(set(str(v) for v in values))
                reference = spec.reference_levels.get(name, levels[0] if levels else None)
                one_hot_levels[name] = tuple(level for level in levels if level != reference)
        else:
            values = values.astype(float)
            mean = float(np.mean(values)) if len(values) else 0.0
            sd = float(np.std(values)) if len(values) else 0.0
            if not spec.standardise:
                standardisation[name] = Standardisation(0.0, 1.0)
            else:
                # a constant column becomes all zeros and is caught by the rank check
                standardisation[name] = Standardisation(mean, sd if sd > 0 else 1.0)

    splines = {}
    for term in spec.spline_terms:
        values = _column(data, term.column).astype(float)
        if len(values) == 0:
            raise InvalidRange("Spline of '{}' has no data".format(term.column))
        knots = spline_knots((float(values.min()), float(values.max())), term.basis_dim + 1)
        column_sums = _bspline_matrix(values, knots).sum(axis=0)
        q, _ = scipy.linalg.qr(column_sums.reshape(-1, 1))
        splines[term.column] = SplineParams(
            knots=tuple(float(k) for k in knots),
            basis_dim=term.basis_dim,
            penalty_order=term.penalty_order,
            constraint=readonly(q[:, 1:]),
        )

    params = PreprocessParams(
        standardisation=standardisation,
        woe_maps=fitted_woe,
        one_hot_levels=one_hot_levels,
        splines=splines,
        column_names=(),
        network_columns=(),
    )
    names: List[str] = []
    if spec.include_intercept:
        names.append(INTERCEPT_NAME)
    for name in spec.linear_terms:
        names.extend(_encoded_names(params, name))
    for term in spec.spline_terms:
        names.extend("s({})[{}]".format(term.column, j + 1) for j in range(term.basis_dim))
    network_names: List[str] = []
    for name in spec.effective_network_terms():
        network_names.extend(_encoded_names(params, name))
    return attr.evolve(params, column_names=tuple(names), network_columns=tuple(network_names))


def _encoded_names(params: PreprocessParams, name: str) -> List[str]:
    if name in params.one_hot_levels:
        return ["{}[{}]".format(name, level) for level in params.one_hot_levels[name]]
    return [name]


def _encode(params: PreprocessParams, data: Columns, name: str) -> np.ndarray:
    """Columns representing covariate `name`, as an n x w matrix."""
    values = _column(data, name)
    if name in params.woe_maps:
        return apply_woe(params.woe_maps[name], values).reshape(-1, 1)
    if name in params.one_hot_levels:
        as_str = np.asarray([str(v) for v in values], dtype=object)
        levels = params.one_hot_levels[name]
        return np.column_stack([as_str == level for level in levels]).astype(float) if levels \
            else np.zeros((len(values), 0))
    if name not in params.standardisation:
        raise UnknownColumn("Covariate '{}' was not part of the fitted design".format(name))
    if values.dtype.kind in 'OUS':
        raise ValidationError("Covariate '{}' must be numeric".format(name))
    return params.standardisation[name].apply(values.astype(float)).reshape(-1, 1)


def _n_rows(data: Columns) -> int:
    for values in data.values():
        return len(values)
    return 0


def apply_preprocess(spec: DesignSpec, params: PreprocessParams, data: Columns) -> Tuple[np.ndarray, Tuple[ColumnBlock, ...], np.ndarray]:
    n = _n_rows(data)
    parts: List[np.ndarray] = []
    blocks: List[ColumnBlock] = []
    penalties: List[np.ndarray] = []
    start = 0

    def add(name: str, kind: BlockKind, matrix: np.ndarray, penalty: Optional[np.ndarray] = None) -> None:
        nonlocal start
        width = matrix.shape[1]
        parts.append(matrix)
        blocks.append(ColumnBlock(name, kind, start, start + width))
        penalties.append(penalty if penalty is not None else np.zeros((width, width)))
        start += width

    if spec.include_intercept:
        add(INTERCEPT_NAME, BlockKind.INTERCEPT, np.ones((n, 1)))
    for name in spec.linear_terms:
        add(name, BlockKind.LINEAR, _encode(params, data, name))
    for term in spec.spline_terms:
        spline = params.splines[term.column]
        values = _column(data, term.column).astype(float)
        add(term.column, BlockKind.SPLINE, spline.basis(values), spline.penalty())
    X = np.column_stack(parts) if parts else np.zeros((n, 0))
    return X, tuple(blocks), scipy.linalg.block_diag(*penalties) if penalties else np.zeros((0, 0))


def thin_qr(X: np.ndarray, blocks: Sequence[ColumnBlock] = ()) -> Tuple[np.ndarray, np.ndarray]:
    """Thin QR without pivoting, signs fixed so that diag(R) >= 0."""
    n, m = X.shape
    if n < m:
        raise RankDeficient("Design has {} columns but only {} rows".format(m, n))
    Q, R = scipy.linalg.qr(X, mode='economic')
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    Q = Q * signs
    R = signs[:, None] * R
    diag = np.abs(np.diag(R))
    if m and diag.max() > 0:
        small = np.flatnonzero(diag < RANK_TOLERANCE * diag.max())
    else:
        small = np.arange(m)
    if len(small):
        column = int(small[0])
        block_name = next((b.name for b in blocks if b.start <= column < b.stop), '?')
        raise RankDeficient(
            "Design column {} (block '{}') is collinear with the preceding columns".format(column, block_name)
        )
    return Q, R


def build_design(
        spec: DesignSpec, data: Columns, params: Optional[PreprocessParams] = None, *,
        target: Any = None,
        woe_maps: Optional[Mapping[str, Dict[str, float]]] = None,
        factorize: bool = True,
) -> Tuple[DesignMatrix, PreprocessParams]:
    """Structured design [1 | linear | splines] and its thin QR factor.

    With `params` given (the predict path) they are applied as they are;
    otherwise they are fitted on `data` first. `factorize=False` skips the QR,
    which prediction does not need.
    """
    if params is None:
        params = fit_preprocess(spec, data, target=target, woe_maps=woe_maps)
    X, blocks, penalty = apply_preprocess(spec, params, data)
    Q, R = thin_qr(X, blocks) if factorize else (None, None)
    return DesignMatrix(
        X=X, column_names=params.column_names, column_blocks=blocks, penalty=penalty, Q=Q, R=R,
    ), params


def network_inputs(spec: DesignSpec, params: PreprocessParams, data: Columns) -> np.ndarray:
    parts = [_encode(params, data, name) for name in spec.effective_network_terms()]
    if not parts:
        return np.zeros((_n_rows(data), 0))
    return np.column_stack(parts)


def project_out(Q: np.ndarray, U: Any) -> np.ndarray:
    """U with its component in span(Q) removed, U - Q (Q^T U)."""
    U = np.asarray(U, dtype=float)
    if U.shape[0] != Q.shape[0]:
        raise ShapeMismatch("Projector has {} rows, input has {}".format(Q.shape[0], U.shape[0]))
    return U - Q @ (Q.T @ U)


def spline_effect(params: PreprocessParams, column: str, grid: Any, coefficients: Any) -> np.ndarray:
    """Fitted smooth of `column` on `grid`, from its block of coefficients."""
    if column not in params.splines:
        raise UnknownColumn("No spline term on '{}'".format(column))
    return params.splines[column].basis(np.asarray(grid, dtype=float)) @ np.asarray(coefficients, dtype=float)
