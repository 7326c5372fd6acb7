# pylint: disable = missing-docstring

import csv
from fractions import Fraction
import io
import typing

import pytest

from matchstab import config
from matchstab.analysis import check_scond
from matchstab.errors import MatchstabError, MissingPrioritiesError
from matchstab.flow import check_ncond
from matchstab.model import NN, product_measure
from matchstab.model_file import Model, load_fixture
from matchstab.sweep import COLUMNS, SweepSpec, format_decimal, run_sweep

_f = Fraction


def _rows(spec: SweepSpec) -> typing.List[typing.Dict[str, str]]:
    out = io.StringIO()
    count = run_sweep(spec, out, workers=1)
    rows = list(csv.DictReader(io.StringIO(out.getvalue())))
    assert len(rows) == count
    return rows


def test_cells() -> None:
    spec = SweepSpec(load_fixture("nn"), "ml", "1/5", 10)
    assert spec.cells() == [
        (_f(1, 5), _f(1, 5)),
        (_f(1, 5), _f(2, 5)),
        (_f(1, 5), _f(3, 5)),
        (_f(2, 5), _f(1, 5)),
        (_f(2, 5), _f(2, 5)),
        (_f(3, 5), _f(1, 5)),
    ]
    assert len(SweepSpec(load_fixture("nn"), "ml", "0.25", 10).cells()) == 3
    assert SweepSpec(load_fixture("nn"), "ml", 2, 10).cells() == []


def test_sweep_rows() -> None:
    spec = SweepSpec(load_fixture("nn"), "ML", "1/5", 200, seeds=2, base_seed=3)
    rows = _rows(spec)
    assert len(rows) == 12
    assert list(rows[0]) == list(COLUMNS)
    assert [(r["x"], r["y"], r["seed"]) for r in rows[:3]] == [
        ("0.2", "0.2", "0"),
        ("0.2", "0.2", "1"),
        ("0.2", "0.4", "0"),
    ]
    for row in rows:
        assert row["policy"] == "ml"
        assert row["horizon"] == "200"
        x, y = _f(row["x"]), _f(row["y"])
        marginal = (x, y, 1 - x - y)
        measure = product_measure(NN, marginal, marginal)
        ncond = check_ncond(NN, measure.customer_marginal, measure.server_marginal)
        assert row["ncond"] == str(ncond).lower()
        if 2 * x + y <= 1:
            assert row["ncond"] == "false"
        scond, _ = check_scond(NN, measure)
        assert row["scond"] == str(scond).lower()
        if scond:
            assert ncond
        assert 0 <= float(row["avg_buffer"]) <= int(row["max_buffer"])


def test_sweep_deterministic() -> None:
    spec = SweepSpec(load_fixture("nn"), "random", "1/4", 300, seeds=2)
    first, second = io.StringIO(), io.StringIO()
    run_sweep(spec, first, workers=1)
    run_sweep(spec, second, workers=1)
    assert first.getvalue() == second.getvalue()


def test_sweep_empty_grid() -> None:
    out = io.StringIO()
    assert run_sweep(SweepSpec(load_fixture("nn"), "ml", 2, 10), out, workers=1) == 0
    assert out.getvalue() == ",".join(COLUMNS) + "\n"


def test_sweep_flow_marks_skipped_cells() -> None:
    rows = _rows(SweepSpec(load_fixture("nn"), "flow", "1/4", 50))
    for row in rows:
        if row["ncond"] == "false":
            assert row["avg_buffer"] == "nan"
        else:
            assert row["avg_buffer"] != "nan"


def test_sweep_spec_errors() -> None:
    nn = load_fixture("nn")
    without_priorities = Model(nn.measure)
    with pytest.raises(MissingPrioritiesError):
        SweepSpec(without_priorities, "pr", "0.1", 10)
    with pytest.raises(MatchstabError):
        SweepSpec(load_fixture("nnn"), "ml", "0.1", 10)
    with pytest.raises(MatchstabError):
        SweepSpec(nn, "nope", "0.1", 10)
    with pytest.raises(MatchstabError):
        SweepSpec(nn, "ml", 0, 10)
    with pytest.raises(MatchstabError):
        SweepSpec(nn, "ml", "0.1", 0)


@pytest.mark.parametrize(
    "value, text",
    [
        (_f(1, 5), "0.2"),
        (_f(-1, 4), "-0.25"),
        (_f(1, 20), "0.05"),
        (_f(3), "3"),
        (_f(0), "0"),
        (_f(1, 3), "1/3"),
        (_f(7, 8), "0.875"),
    ],
)
def test_format_decimal(value: Fraction, text: str) -> None:
    assert format_decimal(value) == text


def test_worker_count(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("MATCHSTAB_THREADS", "3")
    assert config.worker_count() == 3
    assert config.worker_count(8) == 3
    assert config.worker_count(2) == 2
    assert config.worker_count(0) == 1
    monkeypatch.setenv("MATCHSTAB_THREADS", "many")
    with pytest.raises(ValueError):
        config.worker_count()


def test_limits_context() -> None:
    default = config.limit("max_states")
    with config.limits(max_states=10):
        assert config.limit("max_states") == 10
        with config.limits(max_states=20, max_classes=5):
            assert config.current_limits()["max_states"] == 20
        assert config.limit("max_states") == 10
        assert config.limit("max_classes") == 20
    assert config.limit("max_states") == default
    with pytest.raises(KeyError):
        with config.limits(max_widgets=1):
            pass


def test_log_level_from_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("MATCHSTAB_LOG_LEVEL", raising=False)
    assert config.log_level_from_env() == "WARNING"
    monkeypatch.setenv("MATCHSTAB_LOG_LEVEL", "debug")
    assert config.log_level_from_env() == "DEBUG"
