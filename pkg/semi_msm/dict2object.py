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

"""Conversion between attrs records and JSON-compatible plain data.

Converters are created per type by ConverterFactory and cached, so
recursive types work. numpy arrays become nested lists of numbers.
"""

from typing import Type, List, Tuple, Union, Dict, Any, Iterable, Optional, Generic, TypeVar
from abc import ABC, abstractmethod
from inspect import isclass
from enum import Enum

import attr
import numpy as np

TypeOrGeneric = Any


def _origin(t: TypeOrGeneric) -> Any:
    return getattr(t, '__origin__', None)


def is_list_type(t: TypeOrGeneric) -> bool:
    return t is list or _origin(t) in (list, List)


def is_tuple_type(t: TypeOrGeneric) -> bool:
    return t is tuple or _origin(t) in (tuple, Tuple)


def is_dict_type(t: TypeOrGeneric) -> bool:
    return t is dict or _origin(t) in (dict, Dict)


def is_union_type(t: TypeOrGeneric) -> bool:
    # pylint: disable=comparison-with-callable
    return t is Union or _origin(t) == Union


class ConversionError(ValueError):
    pass


_T = TypeVar('_T')


class Converter(ABC, Generic[_T]):
    __slots__ = ()

    # Separate from __init__: the converter must already be in the
    # factory cache when its subconverters are created.
    @abstractmethod
    def setup(self, the_type: Type[_T], converter_factory: 'ConverterFactory') -> None:
        pass

    @abstractmethod
    def to_object(self, data: Any) -> _T:
        pass

    @abstractmethod
    def to_dict(self, data: _T) -> Any:
        pass

    @abstractmethod
    def input_types(self) -> Iterable[Type]:
        pass

    @abstractmethod
    def converted_type(self) -> Type:
        pass


class ScalarConverter(Converter):
    """bool, int, float, str and None. Numbers are coerced, so numpy scalars serialize too."""
    __slots__ = ('the_type',)
    the_type: Type

    def setup(self, the_type: TypeOrGeneric, converter_factory: 'ConverterFactory') -> None:
        self.the_type = the_type

    def to_object(self, data: Any) -> Any:
        if self.the_type is float and isinstance(data, int) and not isinstance(data, bool):
            return float(data)
        if self.the_type is not type(None) and not isinstance(data, self.the_type):
            raise ConversionError("Expected {}, got {!r}".format(self.the_type.__name__, data))
        return data

    def to_dict(self, data: Any) -> Any:
        if self.the_type in (int, float, bool):
            return self.the_type(data)
        return data

    def input_types(self) -> Iterable[Type]:
        if self.the_type is float:
            return (float, np.float64, np.float32)
        if self.the_type is int:
            return (int, np.int64, np.int32)
        if self.the_type is bool:
            return (bool, np.bool_)
        return (self.the_type,)

    def converted_type(self) -> Type:
        return self.the_type


class NdarrayConverter(Converter):
    __slots__ = ()

    def setup(self, the_type: TypeOrGeneric, converter_factory: 'ConverterFactory') -> None:
        pass

    def to_object(self, data: Any) -> Any:
        result = np.array(data, dtype=float)
        result.setflags(write=False)
        return result

    def to_dict(self, data: Any) -> Any:
        return np.asarray(data, dtype=float).tolist()

    def input_types(self) -> Iterable[Type]:
        return (np.ndarray,)

    def converted_type(self) -> Type:
        return list


class ListConverter(Converter):
    __slots__ = ('subconverter', 'result_type')
    subconverter: Converter
    result_type: Type

    def setup(self, the_type: TypeOrGeneric, converter_factory: 'ConverterFactory') -> None:
        args = getattr(the_type, '__args__', None)
        if not args or len(args) != 1:
            raise TypeError("Untyped lists cannot be converted")
        self.subconverter = converter_factory.create(args[0])
        self.result_type = list

    def to_object(self, data: Any) -> Any:
        return self.result_type(self.subconverter.to_object(v) for v in data)

    def to_dict(self, data: Any) -> Any:
        return [self.subconverter.to_dict(v) for v in data]

    def input_types(self) -> Iterable[Type]:
        return (self.result_type,)

    def converted_type(self) -> Type:
        return list


class VarLenTupleConverter(ListConverter):
    __slots__ = ()

    def setup(self, the_type: TypeOrGeneric, converter_factory: 'ConverterFactory') -> None:
        self.subconverter = converter_factory.create(the_type.__args__[0])
        self.result_type = tuple


class TupleConverter(Converter):
    __slots__ = ('subconverters',)
    subconverters: Tuple[Converter, ...]

    def setup(self, the_type: TypeOrGeneric, converter_factory: 'ConverterFactory') -> None:
        self.subconverters = tuple(converter_factory.create(t) for t in the_type.__args__)

    def to_object(self, data: Any) -> Any:
        if len(data) != len(self.subconverters):
            raise ConversionError("Expected {} items, got {}".format(len(self.subconverters), len(data)))
        return tuple(c.to_object(v) for c, v in zip(self.subconverters, data))

    def to_dict(self, data: Any) -> Any:
        return [c.to_dict(v) for c, v in zip(self.subconverters, data)]

    def input_types(self) -> Iterable[Type]:
        return (tuple,)

    def converted_type(self) -> Type:
        return list


class DictConverter(Converter):
    """Dict[str, X] only: JSON object keys are strings."""
    __slots__ = ('subconverter',)
    subconverter: Converter

    def setup(self, the_type: TypeOrGeneric, converter_factory: 'ConverterFactory') -> None:
        key_type, value_type = the_type.__args__
        if key_type is not str:
            raise TypeError("Only str keyed dicts can be converted (got {})".format(key_type))
        self.subconverter = converter_factory.create(value_type)

    def to_object(self, data: Any) -> Any:
        if not isinstance(data, dict):
            raise ConversionError("Expected an object, got {!r}".format(data))
        return {str(k): self.subconverter.to_object(v) for k, v in data.items()}

    def to_dict(self, data: Any) -> Any:
        return {k: self.subconverter.to_dict(v) for k, v in sorted(data.items())}

    def input_types(self) -> Iterable[Type]:
        return (dict,)

    def converted_type(self) -> Type:
        # Keeps DictDisambiguator away from plain mappings
        return Dict


class EnumConverter(Converter):
    __slots__ = ('the_type',)
    the_type: Type

    def setup(self, the_type: TypeOrGeneric, converter_factory: 'ConverterFactory') -> None:
        self.the_type = the_type

    def to_object(self, data: Any) -> Any:
        try:
            return self.the_type[data]
        except KeyError:
            raise ConversionError(
                "'{}' is not one of {}".format(data, ', '.join(m.name for m in self.the_type))
            ) from None

    def to_dict(self, data: Any) -> Any:
        return data.name

    def input_types(self) -> Iterable[Type]:
        return (self.the_type, )

    def converted_type(self) -> Type:
        return str


def _is_default(field: Any, value: Any) -> bool:
    if field.default is attr.NOTHING or isinstance(field.default, attr.Factory):  # type: ignore
        return False
    if isinstance(value, np.ndarray) or isinstance(field.default, np.ndarray):
        return False
    return bool(type(value) is type(field.default) and value == field.default)


class AttrsClassConverter(Converter):
    __slots__ = ('the_class', 'subconverters',)
    the_class: TypeOrGeneric
    subconverters: Dict[str, Converter]

    def setup(self, the_type: TypeOrGeneric, converter_factory: 'ConverterFactory') -> None:
        self.the_class = the_type
        self.subconverters = {}
        attr.resolve_types(self.the_class)
        for field in attr.fields(self.the_class):
            if not field.init:
                continue
            assert field.type is not None
            self.subconverters[field.name] = converter_factory.create(field.type)

    def to_object(self, data: Any) -> Any:
        if not isinstance(data, dict):
            raise ConversionError("Expected an object for {}, got {!r}".format(self.the_class.__name__, data))
        converted_data = {}
        for k, v in data.items():
            if k == '__type__':
                continue
            if k not in self.subconverters:
                raise ConversionError("Unknown key '{}' for {}".format(k, self.the_class.__name__))
            converted_data[k.lstrip('_')] = self.subconverters[k].to_object(v)
        return self.the_class(**converted_data)

    def to_dict(self, data: Any) -> Any:
        dct = attr.asdict(
            data,
            recurse=False,
            filter=lambda a, v: a.init and not _is_default(a, v),
        )
        return {k: self.subconverters[k].to_dict(v) for k, v in dct.items()}

    def input_types(self) -> Iterable[Type]:
        return (self.the_class,)

    def converted_type(self) -> Type:
        return dict


class UnionConverter(Converter):
    """Union members are told apart by their JSON type; attrs classes by a '__type__' tag."""
    __slots__ = ('by_input_type', 'by_json_type', 'records')
    by_input_type: Dict[Type, Converter]
    by_json_type: Dict[Type, Converter]
    records: Dict[str, Converter]

    def setup(self, the_type: TypeOrGeneric, converter_factory: 'ConverterFactory') -> None:
        self.by_input_type = {}
        self.by_json_type = {}
        self.records = {}
        for member in the_type.__args__:
            subconverter = converter_factory.create(member)
            if subconverter.converted_type() is dict:
                self.records[member.__name__] = subconverter
            elif subconverter.converted_type() in self.by_json_type:
                raise TypeError("Cannot disambiguate {} within {}".format(member, the_type))
            else:
                self.by_json_type[subconverter.converted_type()] = subconverter
            for t in subconverter.input_types():
                self.by_input_type[t] = subconverter

    def to_object(self, data: Any) -> Any:
        if isinstance(data, dict) and self.records:
            if len(self.records) == 1:
                return next(iter(self.records.values())).to_object(data)
            return self.records[data['__type__']].to_object(data)
        json_type = Dict if isinstance(data, dict) else type(data)
        if json_type is int and int not in self.by_json_type and float in self.by_json_type:
            json_type = float
        if json_type not in self.by_json_type:
            raise ConversionError("Value {!r} matches no member of the union".format(data))
        return self.by_json_type[json_type].to_object(data)

    def to_dict(self, data: Any) -> Any:
        if type(data) not in self.by_input_type:
            raise TypeError(
                "Data is of unknown type {}. (Known types:{})"
                .format(type(data), tuple(self.by_input_type.keys()))
            )
        result = self.by_input_type[type(data)].to_dict(data)
        if len(self.records) > 1 and isinstance(result, dict) and type(data).__name__ in self.records:
            result['__type__'] = type(data).__name__
        return result

    def input_types(self) -> Iterable[Type]:
        raise TypeError("Nesting Unions is not supported")

    def converted_type(self) -> Type:
        raise TypeError("Nesting Unions is not supported")


class ConverterFactory:
    __slots__ = ('cache',)
    cache: Dict[TypeOrGeneric, Converter]

    def __init__(self) -> None:
        self.cache = {}

    def create(self, the_type: Type[_T]) -> Converter[_T]:
        # pylint: disable=too-many-branches
        if the_type in self.cache:
            return self.cache[the_type]

        converter: Converter
        if the_type in (bool, int, float, str, type(None)):
            converter = ScalarConverter()
        elif the_type is np.ndarray:
            converter = NdarrayConverter()
        elif is_list_type(the_type):
            converter = ListConverter()
        elif is_tuple_type(the_type):
            if ... in the_type.__args__:  # type: ignore
                converter = VarLenTupleConverter()
            else:
                converter = TupleConverter()
        elif is_dict_type(the_type):
            converter = DictConverter()
        elif isclass(the_type) and issubclass(the_type, Enum):
            converter = EnumConverter()
        elif attr.has(the_type):
            converter = AttrsClassConverter()
        elif is_union_type(the_type):
            converter = UnionConverter()
        else:
            raise TypeError("Dict2object cannot handle type {}".format(the_type))

        self.cache[the_type] = converter
        converter.setup(the_type, self)
        return converter


def to_object(data: Any, the_type: TypeOrGeneric) -> Any:
    return get_converter(the_type).to_object(data)


def to_dict(data: Any, the_type: TypeOrGeneric) -> Any:
    return get_converter(the_type).to_dict(data)


def get_converter(the_type: Type[_T]) -> Converter[_T]:
    # pylint: disable=unsubscriptable-object
    return ConverterFactory().create(the_type)
