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

# Everything raised on purpose by this package derives from MsmError.
# The CLI maps ValidationError to exit code 2 and NumericalError to 3.


class MsmError(Exception):
    pass


class ValidationError(MsmError, ValueError):
    pass


class NumericalError(MsmError, ArithmeticError):
    pass


# Panel construction

class InvalidState(ValidationError):
    pass


class IllegalTransition(ValidationError):
    pass


class NonContiguousTime(ValidationError):
    pass


class PostAbsorbingActivity(ValidationError):
    pass


class EmptyPanel(ValidationError):
    pass


class DegenerateLabels(ValidationError):
    pass


# Design

class InvalidRange(ValidationError):
    pass


class DimTooSmall(ValidationError):
    pass


class AllSameTarget(ValidationError):
    pass


class RankDeficient(ValidationError):
    pass


class UnknownColumn(ValidationError, KeyError):
    def __str__(self) -> str:
        # KeyError would quote the message otherwise
        return str(self.args[0]) if self.args else ''


class ShapeMismatch(ValidationError):
    pass


# Metrics

class OneClassOnly(ValidationError):
    pass


class EmptyStartState(ValidationError):
    pass


class MissingStartState(ValidationError):
    pass


# Simulation and orchestration

class UnknownId(ValidationError):
    pass


class MissingTruth(ValidationError):
    pass


class EmptySpan(ValidationError):
    pass


class SubjectNotObservedAtT1(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


# Numerical failures

class NonFiniteActivation(NumericalError):
    pass


class Diverged(NumericalError):
    pass


class BootstrapFailed(NumericalError):
    pass


# Recoverable anomalies, reported through the warnings machinery

class NegativeStayProbabilityWarning(RuntimeWarning):
    pass


class ExcludedClassWarning(RuntimeWarning):
    pass


class BootstrapReplicateWarning(RuntimeWarning):
    pass
