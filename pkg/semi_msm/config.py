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

import hashlib
import json
from typing import Any, Dict, Optional, TextIO

import attr

from semi_msm import dict2object
from semi_msm.core import StateSpace, Edge, format_edge, TIME_COLUMN
from semi_msm.design import DesignSpec, SplineTerm
from semi_msm.errors import InvalidConfig, MsmError
from semi_msm.fit import FitConfig, SearchSpace

FORMAT_VERSION = 1

SIMULATION_DESIGN = DesignSpec(
    linear_terms=('x1', 'x2'),
    spline_terms=(SplineTerm(TIME_COLUMN), SplineTerm('z')),
    standardise=False,
)


@attr.s(slots=True, frozen=True, auto_attribs=True)
class RunConfig:
    """Everything that determines the result of a run, besides the input files.

    `edge_fit` overrides `fit` for single edges and is keyed like '0-1'.
    """
    space: StateSpace = StateSpace()
    design: DesignSpec = SIMULATION_DESIGN
    fit: FitConfig = FitConfig()
    edge_fit: Dict[str, FitConfig] = attr.Factory(dict)
    search_space: Optional[SearchSpace] = None
    seed: int = 0
    threads: int = 1
    keep_competing_as_zero: bool = False
    per_edge_woe: bool = False
    bootstrap_replicates: int = 0

    def __attrs_post_init__(self) -> None:
        edge_names = {format_edge(e) for e in self.space.edges}
        unknown = sorted(set(self.edge_fit) - edge_names)
        if unknown:
            raise InvalidConfig("edge_fit has entries for unknown edges: {}".format(unknown))
        if self.threads < 1:
            raise InvalidConfig("threads must be at least 1")
        if self.seed < 0:
            raise InvalidConfig("seed must be non-negative")
        if self.bootstrap_replicates == 1 or self.bootstrap_replicates < 0:
            raise InvalidConfig("bootstrap_replicates must be 0 (off) or at least 2")

    def fit_config(self, edge: Edge) -> FitConfig:
        """Effective fit configuration of an edge; the run seed always wins."""
        return attr.evolve(self.edge_fit.get(format_edge(edge), self.fit), seed=self.seed)


@attr.s(slots=True, frozen=True, auto_attribs=True)
class ArtifactHeader:
    format_version: int
    kind: str
    seed: int
    config_hash: str


def config_to_dict(config: RunConfig) -> Any:
    return dict2object.to_dict(config, RunConfig)


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def make_header(kind: str, config: RunConfig) -> ArtifactHeader:
    return ArtifactHeader(FORMAT_VERSION, kind, config.seed, config_hash(config))


def config_from_dict(data: Any) -> RunConfig:
    try:
        return dict2object.to_object(data, RunConfig)  # type: ignore
    except InvalidConfig:
        raise
    except (dict2object.ConversionError, MsmError, TypeError, KeyError, ValueError) as e:
        raise InvalidConfig("Invalid run configuration: {}".format(e)) from e


def load_config(f: TextIO) -> RunConfig:
    try:
        data = json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidConfig("Run configuration is not valid JSON: {}".format(e)) from e
    return config_from_dict(data)


def save_config(config: RunConfig, f: TextIO) -> None:
    json.dump(config_to_dict(config), f, indent='  ', ensure_ascii=False, sort_keys=True)


def with_overrides(config: RunConfig, **overrides: Optional[Any]) -> RunConfig:
    """Command line flags win over file values; None means the flag was not given."""
    given: Dict[str, Any] = {k: v for k, v in overrides.items() if v is not None}
    try:
        return attr.evolve(config, **given)
    except MsmError as e:
        raise InvalidConfig(str(e)) from e
