"""
    Parameter sweeps over the symmetric product family
    ``mu_C = mu_S = (x, y, 1 - x - y)`` of a three-class structure, with one
    CSV row per grid cell and replication.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
import csv
from fractions import Fraction
import logging
import sys
import typing
from typing import Any, Optional, TextIO

if sys.version_info[1] >= 9:
    from collections.abc import Iterator
else:
    from typing import Iterator

if sys.version_info[1] >= 11:
    from typing import Self
else:
    from typing_extensions import Self

from . import config
from .analysis import check_scond
from .errors import MatchstabError, MissingPrioritiesError
from .flow import check_ncond
from .model import RationalLike, parse_rational, product_measure
from .model_file import Model, model_from_dict, model_to_dict
from .policies import POLICY_NAMES, PolicySpec, flow_policy_table
from .simulation import simulate

_log = logging.getLogger(__name__)

COLUMNS = (
    "x",
    "y",
    "policy",
    "seed",
    "horizon",
    "avg_buffer",
    "max_buffer",
    "empty_visits",
    "ncond",
    "scond",
)
"""
    Columns of the sweep CSV.
"""


class SweepSpec:
    """
    A sweep: the structure (three customer and three server classes), the
    policy, the grid step, the simulation horizon, the number of
    replications per cell and the base seed.
    """

    # pylint: disable = too-many-instance-attributes

    _model: Model
    _policy: str
    _grid_step: Fraction
    _horizon: int
    _seeds: int
    _base_seed: int

    __slots__ = ("_model", "_policy", "_grid_step", "_horizon", "_seeds", "_base_seed")

    def __new__(
        cls,
        model: Model,
        policy: str,
        grid_step: RationalLike,
        horizon: int,
        seeds: int = 1,
        base_seed: int = 0,
    ) -> Self:
        # pylint: disable = too-many-arguments
        structure = model.structure
        if structure.num_customers != 3 or structure.num_servers != 3:
            raise MatchstabError("Sweeps need three customer and three server classes.")
        step = parse_rational(grid_step)
        if step <= 0:
            raise MatchstabError("Grid step must be positive.")
        if horizon < 1 or seeds < 1:
            raise MatchstabError("Horizon and seeds must be positive.")
        if policy.lower() not in POLICY_NAMES:
            raise MatchstabError(f"Unknown policy {policy!r}, expected one of {POLICY_NAMES}.")
        if policy.lower() == "pr" and model.priorities is None:
            raise MissingPrioritiesError("The priority policy needs matrices A and B in the model.")
        instance = super().__new__(cls)
        instance._model = model
        instance._policy = policy.lower()
        instance._grid_step = step
        instance._horizon = horizon
        instance._seeds = seeds
        instance._base_seed = base_seed
        return instance

    @property
    def model(self) -> Model:
        """Model providing the structure (and priority matrices)."""
        return self._model

    @property
    def policy(self) -> str:
        """Policy name."""
        return self._policy

    @property
    def grid_step(self) -> Fraction:
        """Grid step."""
        return self._grid_step

    @property
    def horizon(self) -> int:
        """Simulation horizon per run."""
        return self._horizon

    @property
    def seeds(self) -> int:
        """Replications per cell."""
        return self._seeds

    @property
    def base_seed(self) -> int:
        """Base seed shared by all streams."""
        return self._base_seed

    def cells(self) -> typing.List[typing.Tuple[Fraction, Fraction]]:
        """Grid points with ``x, y > 0`` and ``x + y < 1``, in row-major order."""
        step = self._grid_step
        n = int(1 / step) + 1
        return [
            (k * step, l * step)
            for k in range(1, n + 1)
            for l in range(1, n + 1)
            if k * step + l * step < 1
        ]


def format_decimal(r: Fraction) -> str:
    """
    Exact decimal expansion when the denominator only has factors 2 and 5,
    ``p/q`` otherwise.
    """
    d = r.denominator
    digits = 0
    while d % 10 == 0:
        d //= 10
        digits += 1
    while d % 2 == 0 or d % 5 == 0:
        d //= 2 if d % 2 == 0 else 5
        digits += 1
    if d != 1:
        return f"{r.numerator}/{r.denominator}"
    if digits == 0:
        return str(r.numerator)
    scaled = r.numerator * 10**digits // r.denominator
    sign = "-" if scaled < 0 else ""
    text = str(abs(scaled)).rjust(digits + 1, "0")
    return f"{sign}{text[:-digits]}.{text[-digits:]}"


def _policy_for(model: Model, name: str, measure: Any) -> PolicySpec:
    if name == "flow":
        return PolicySpec.flow(flow_policy_table(model.structure, measure))
    return PolicySpec.from_name(name, priorities=model.priorities)


def _run_cell(task: typing.Tuple[Any, ...]) -> typing.List[typing.List[str]]:
    """Worker: all replications of one cell, from plain picklable data."""
    data, policy_name, x_text, y_text, cell, seeds, base_seed, horizon = task
    model = model_from_dict(data)
    structure = model.structure
    x, y = Fraction(x_text), Fraction(y_text)
    marginal = (x, y, 1 - x - y)
    measure = product_measure(structure, marginal, marginal)
    structure = measure.structure
    ncond = check_ncond(structure, measure.customer_marginal, measure.server_marginal)
    scond, _ = check_scond(structure, measure)
    try:
        policy = _policy_for(model, policy_name, measure)
    except MatchstabError as e:
        _log.warning("Cell (%s, %s) skipped: %s", x, y, e)
        return [
            [format_decimal(x), format_decimal(y), policy_name, str(r), str(horizon),
             "nan", "", "", str(ncond).lower(), str(scond).lower()]
            for r in range(seeds)
        ]
    rows = []
    for r in range(seeds):
        report = simulate(
            structure, measure, policy, horizon, base_seed, cell=cell, replication=r
        )
        rows.append(
            [
                format_decimal(x),
                format_decimal(y),
                policy_name,
                str(r),
                str(horizon),
                repr(report.avg_buffer),
                str(report.max_buffer),
                str(report.empty_visits),
                str(ncond).lower(),
                str(scond).lower(),
            ]
        )
    return rows


def sweep_rows(spec: SweepSpec, workers: Optional[int] = None) -> Iterator[typing.List[str]]:
    """
    CSV rows of a sweep, in grid order then replication order. Cells run
    on a pool of ``config.worker_count(workers)`` processes; the order of
    rows does not depend on completion order.
    """
    data = model_to_dict(spec.model)
    tasks = [
        (data, spec.policy, str(x), str(y), cell, spec.seeds, spec.base_seed, spec.horizon)
        for cell, (x, y) in enumerate(spec.cells())
    ]
    n_workers = config.worker_count(workers)
    _log.info("Sweeping %d cells on %d workers.", len(tasks), n_workers)
    if n_workers == 1 or len(tasks) <= 1:
        for task in tasks:
            yield from _run_cell(task)
        return
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        for rows in pool.map(_run_cell, tasks):
            yield from rows


def run_sweep(spec: SweepSpec, out: TextIO, workers: Optional[int] = None) -> int:
    """
    Writes the sweep CSV (header included) to ``out``; returns the number
    of data rows.
    """
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(COLUMNS)
    count = 0
    for row in sweep_rows(spec, workers):
        writer.writerow(row)
        count += 1
    return count

