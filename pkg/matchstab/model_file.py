"""
    Reading and writing model files (JSON, UTF-8).

    A model file is an object with keys ``customers``, ``servers``, ``edges``
    and ``mu``, plus optional ``arrival_edges`` and ``priorities``:

    .. code-block:: json

        {
          "customers": ["1", "2", "3"],
          "servers": ["1'", "2'", "3'"],
          "edges": [["1", "2'"], ["1", "3'"], ["2", "1'"], ["2", "2'"], ["3", "1'"]],
          "mu": {"1|1'": "4/25", "1|2'": "4/25", "...": "..."},
          "priorities": {"A": [[0, 2, 1], [2, 1, 0], [1, 0, 0]],
                         "B": [[0, 2, 1], [2, 1, 0], [1, 0, 0]]}
        }

    Probabilities are ``"p/q"`` strings. When ``arrival_edges`` is omitted,
    the arrival edges are the support of ``mu``.
"""

from __future__ import annotations

from importlib import resources
import json
import os
import sys
import typing
from typing import Any, Optional, Union

if sys.version_info[1] >= 11:
    from typing import Self
else:
    from typing_extensions import Self

from typing_extensions import TypedDict
from typing_validation import validate, get_validation_failure

from .errors import MatchstabError, ModelFileError
from .model import (
    ArrivalMeasure,
    MatchingStructure,
    format_rational,
    parse_rational,
)

PriorityMatrix = typing.Tuple[typing.Tuple[int, ...], ...]


class PrioritiesDict(TypedDict):
    """Schema of the ``priorities`` block."""

    A: typing.List[typing.List[int]]
    B: typing.List[typing.List[int]]


class _ModelFileRequired(TypedDict):
    customers: typing.List[str]
    servers: typing.List[str]
    edges: typing.List[typing.List[str]]
    mu: typing.Dict[str, str]


class ModelFileDict(_ModelFileRequired, total=False):
    """Schema of a decoded model file."""

    arrival_edges: typing.List[typing.List[str]]
    priorities: PrioritiesDict


class Model:
    """
    A structure, a measure on it and (optionally) priority matrices, as read
    from a model file.
    """

    _measure: ArrivalMeasure
    _priorities: Optional[typing.Tuple[PriorityMatrix, PriorityMatrix]]

    __slots__ = ("_measure", "_priorities")

    def __new__(
        cls,
        measure: ArrivalMeasure,
        priorities: Optional[typing.Tuple[PriorityMatrix, PriorityMatrix]] = None,
    ) -> Self:
        instance = super().__new__(cls)
        instance._measure = measure
        instance._priorities = priorities
        return instance

    @property
    def structure(self) -> MatchingStructure:
        """The structure of the model."""
        return self._measure.structure

    @property
    def measure(self) -> ArrivalMeasure:
        """The arrival measure of the model."""
        return self._measure

    @property
    def priorities(self) -> Optional[typing.Tuple[PriorityMatrix, PriorityMatrix]]:
        """Priority matrices ``(A, B)``, if the file has any."""
        return self._priorities

    def __eq__(self, other: Any) -> bool:
        if not isinstance(other, Model):
            return NotImplemented
        return self._measure == other._measure and self._priorities == other._priorities

    def __hash__(self) -> int:
        return hash((self._measure, self._priorities))

    def __repr__(self) -> str:
        return f"Model({self._measure!r}, priorities={self._priorities!r})"


def _split_key(key: str) -> typing.Tuple[str, str]:
    parts = key.split("|")
    if len(parts) != 2:
        raise ModelFileError(f"Invalid mu key {key!r}, expected 'customer|server'.")
    return parts[0], parts[1]


def model_from_dict(data: Any) -> Model:
    """
    Builds a :class:`Model` from a decoded JSON object, validating it against
    :class:`ModelFileDict` first.

    Raises :class:`~matchstab.errors.ModelFileError` on schema violations,
    and the errors of :class:`~matchstab.model.MatchingStructure` and
    :class:`~matchstab.model.ArrivalMeasure` on invalid contents.
    """
    try:
        validate(data, ModelFileDict)
    except TypeError as e:
        failure = get_validation_failure(e)
        raise ModelFileError(f"Malformed model file.\n{failure}") from None
    for edge in data["edges"] + data.get("arrival_edges", []):
        if len(edge) != 2:
            raise ModelFileError(f"Edge {edge!r} is not a pair.")
    table = {_split_key(k): parse_rational(v) for k, v in data["mu"].items()}
    arrival_edges = data.get("arrival_edges")
    structure = MatchingStructure(
        data["customers"],
        data["servers"],
        data["edges"],
        arrival_edges if arrival_edges is not None else [k for k, v in table.items() if v != 0],
    )
    measure = ArrivalMeasure(structure, table)
    priorities: Optional[typing.Tuple[PriorityMatrix, PriorityMatrix]] = None
    if "priorities" in data:
        a = tuple(tuple(row) for row in data["priorities"]["A"])
        b = tuple(tuple(row) for row in data["priorities"]["B"])
        priorities = (a, b)
    return Model(measure, priorities)


def model_to_dict(
    model: Union[Model, ArrivalMeasure]
) -> ModelFileDict:
    """
    Encodes a model (or a bare measure) as a JSON-ready object.
    Arrival edges are always written explicitly.
    """
    if isinstance(model, ArrivalMeasure):
        model = Model(model)
    structure = model.structure
    data: ModelFileDict = {
        "customers": list(structure.customers),
        "servers": list(structure.servers),
        "edges": [list(e) for e in structure.matching_edges],
        "mu": {
            f"{c}|{s}": format_rational(r) for (c, s), r in model.measure.table.items()
        },
        "arrival_edges": [list(f) for f in structure.arrival_edges],
    }
    if model.priorities is not None:
        a, b = model.priorities
        data["priorities"] = {
            "A": [list(row) for row in a],
            "B": [list(row) for row in b],
        }
    return data


def loads_model(text: str) -> Model:
    """Parses a model from a JSON string."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFileError(f"Invalid JSON: {e}") from None
    return model_from_dict(data)


def dumps_model(model: Union[Model, ArrivalMeasure]) -> str:
    """Serializes a model to a JSON string."""
    return json.dumps(model_to_dict(model), indent=2, ensure_ascii=False) + "\n"


def load_model(path: Union[str, os.PathLike[str]]) -> Model:
    """
    Reads a model file. The special names ``nn``, ``nnn``, ``nn-fdiag`` and
    ``nn-fanti`` (optionally with a ``.json`` suffix) resolve to the bundled
    fixtures when no such file exists.
    """
    if not os.path.exists(path):
        name = os.path.basename(os.fspath(path))
        if name.endswith(".json"):
            name = name[:-5]
        if name in FIXTURES:
            return load_fixture(name)
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ModelFileError(f"Cannot read model file {os.fspath(path)!r}: {e}") from None
    return loads_model(text)


def dump_model(model: Union[Model, ArrivalMeasure], path: Union[str, os.PathLike[str]]) -> None:
    """Writes a model file."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_model(model))


FIXTURES = ("nn", "nnn", "nn-fdiag", "nn-fanti")
"""
    Names of the bundled model files.
"""


def load_fixture(name: str) -> Model:
    """Loads one of the bundled model files listed in :data:`FIXTURES`."""
    if name not in FIXTURES:
        raise MatchstabError(f"Unknown fixture {name!r}, expected one of {FIXTURES}.")
    text = resources.files("matchstab").joinpath("fixtures").joinpath(f"{name}.json").read_text(
        encoding="utf-8"
    )
    return loads_model(text)
