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

import json
import os
from typing import Any, Dict, Mapping, Optional, TextIO, Tuple, Type, TypeVar

import attr

from semi_msm import dict2object
from semi_msm.config import ArtifactHeader, FORMAT_VERSION
from semi_msm.core import StateSpace, Edge, format_edge
from semi_msm.errors import ValidationError, MissingTruth
from semi_msm.fit import TransitionModel, FitMetadata, FitMode, BootstrapSummary, GridSearchResult
from semi_msm.metrics import MetricRow, CutpointRule, TransformErrorReport
from semi_msm.sim import DgpSpec, NONLINEAR_CATALOGUE_VERSION
from semi_msm.transitions import TransformMethod

FIT_REPORT_NAME = 'fit_report.json'


@attr.s(slots=True, frozen=True, auto_attribs=True)
class ModelFile:
    header: ArtifactHeader
    model: TransitionModel


@attr.s(slots=True, frozen=True, auto_attribs=True)
class EdgeFitSummary:
    edge: Tuple[int, int]
    mode: FitMode
    n_columns: int
    metadata: FitMetadata
    bootstrap: Optional[BootstrapSummary] = None


@attr.s(slots=True, frozen=True, auto_attribs=True)
class FitReport:
    header: ArtifactHeader
    edges: Tuple[EdgeFitSummary, ...]
    shared_woe: bool


@attr.s(slots=True, frozen=True, auto_attribs=True)
class TruthFile:
    header: ArtifactHeader
    dgp: DgpSpec
    nonlinear_catalogue_version: int


@attr.s(slots=True, frozen=True, auto_attribs=True)
class MetricReportFile:
    header: ArtifactHeader
    rows: Tuple[MetricRow, ...]
    # model name -> span 't1-t2' -> rule
    cutpoints: Dict[str, Dict[str, CutpointRule]]


@attr.s(slots=True, frozen=True, auto_attribs=True)
class TransformErrorRow:
    source: str
    method: TransformMethod
    report: TransformErrorReport


@attr.s(slots=True, frozen=True, auto_attribs=True)
class TransformComparisonFile:
    header: ArtifactHeader
    t2: int
    n_subjects: int
    rows: Tuple[TransformErrorRow, ...]


@attr.s(slots=True, frozen=True, auto_attribs=True)
class GridSearchFile:
    header: ArtifactHeader
    edge: Tuple[int, int]
    result: GridSearchResult


_T = TypeVar('_T')


def serialize_to_json_file(artifact: Any, f: TextIO) -> None:
    json.dump(
        dict2object.to_dict(artifact, type(artifact)),
        f,
        indent='  ',
        ensure_ascii=False,
    )


def write_artifact(artifact: Any, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        serialize_to_json_file(artifact, f)
        f.write('\n')


def read_artifact(path: str, the_type: Type[_T]) -> _T:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ValidationError("No such file: {}".format(path)) from None
    except json.JSONDecodeError as e:
        raise ValidationError("{} is not valid JSON: {}".format(path, e)) from e
    header = data.get('header', {}) if isinstance(data, dict) else {}
    if header.get('format_version') != FORMAT_VERSION:
        raise ValidationError("{} has format version {}, expected {}".format(
            path, header.get('format_version'), FORMAT_VERSION))
    try:
        return dict2object.to_object(data, the_type)  # type: ignore
    except (dict2object.ConversionError, TypeError, KeyError) as e:
        raise ValidationError("{} is not a valid {}: {}".format(path, the_type.__name__, e)) from e


def model_filename(edge: Edge) -> str:
    return "model_{}.json".format(format_edge(edge))


def save_models(models: Mapping[Edge, TransitionModel], directory: str, header: ArtifactHeader) -> Dict[Edge, str]:
    os.makedirs(directory, exist_ok=True)
    result = {}
    for edge in sorted(models):
        path = os.path.join(directory, model_filename(edge))
        write_artifact(ModelFile(header, models[edge]), path)
        result[edge] = path
    return result


def load_models(directory: str, space: StateSpace) -> Dict[Edge, TransitionModel]:
    result = {}
    for edge in space.edges:
        path = os.path.join(directory, model_filename(edge))
        if not os.path.exists(path):
            raise ValidationError("Model directory {} has no model for edge {}".format(directory, format_edge(edge)))
        result[edge] = read_artifact(path, ModelFile).model
        if result[edge].edge != edge:
            raise ValidationError("{} holds the model of edge {}".format(path, format_edge(result[edge].edge)))
    return result


def load_truth(path: str) -> DgpSpec:
    try:
        truth = read_artifact(path, TruthFile)
    except ValidationError as e:
        raise MissingTruth("Cannot use {} as simulation truth: {}".format(path, e)) from e
    if truth.nonlinear_catalogue_version != NONLINEAR_CATALOGUE_VERSION:
        raise MissingTruth("{} uses nonlinear catalogue version {}".format(path, truth.nonlinear_catalogue_version))
    return truth.dgp


@attr.s(slots=True, frozen=True, auto_attribs=True)
class CsvMetadata:
    """Sidecar of a CSV artifact, which cannot carry a header itself."""
    header: ArtifactHeader
    csv_file: str


def csv_metadata_path(csv_path: str) -> str:
    return csv_path + '.meta.json'


def write_csv_metadata(csv_path: str, header: ArtifactHeader) -> str:
    path = csv_metadata_path(csv_path)
    write_artifact(CsvMetadata(header, os.path.basename(csv_path)), path)
    return path


def read_csv_metadata(csv_path: str) -> ArtifactHeader:
    metadata = read_artifact(csv_metadata_path(csv_path), CsvMetadata)
    if metadata.csv_file != os.path.basename(csv_path):
        raise ValidationError("{} describes {}".format(csv_metadata_path(csv_path), metadata.csv_file))
    return metadata.header
