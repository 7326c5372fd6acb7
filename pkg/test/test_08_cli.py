# pylint: disable = missing-docstring

import csv
import io
import pathlib
import typing

import pytest

from matchstab.analysis import construct_stable_measure
from matchstab.cli import EXIT_INPUT, EXIT_NO, EXIT_OK, run_command
from matchstab.model import NN_FDIAG
from matchstab.model_file import dump_model, load_fixture, loads_model


def _run(capsys: pytest.CaptureFixture[str], *argv: str) -> typing.Tuple[int, str]:
    code = run_command(list(argv))
    return code, capsys.readouterr().out


def test_check(capsys: pytest.CaptureFixture[str]) -> None:
    code, out = _run(capsys, "check", "nn")
    assert code == EXIT_OK
    assert out.splitlines()[0] == "NCond: yes"
    code, out = _run(capsys, "check", "nn-fanti")
    assert code == EXIT_NO
    assert out.splitlines()[0] == "NCond: no"


def test_check_scond(capsys: pytest.CaptureFixture[str]) -> None:
    code, out = _run(capsys, "check", "nn", "--scond")
    assert code == EXIT_NO
    lines = out.splitlines()
    assert lines[:2] == ["NCond: yes", "SCond: no"]
    rows = list(csv.DictReader(io.StringIO("\n".join(lines[2:]))))
    failing = [(r["bullet_C"], r["bullet_S"]) for r in rows if r["scond_ok"] == "false"]
    assert failing == [("3", "3'")]


def test_facets(capsys: pytest.CaptureFixture[str]) -> None:
    code, out = _run(capsys, "facets", "nnn")
    assert code == EXIT_OK
    lines = out.splitlines()
    assert len(lines) == 25
    assert all(line.count(" | ") == 2 for line in lines)
    assert sum(line.endswith(" | saturated:true") for line in lines) == 13


def test_facets_nn_lines(capsys: pytest.CaptureFixture[str]) -> None:
    code, out = _run(capsys, "facets", "nn")
    assert code == EXIT_OK
    assert out.splitlines() == [
        "{} | {} | saturated:false",
        "{1} | {1'} | saturated:true",
        "{2} | {3'} | saturated:true",
        "{3} | {2'} | saturated:true",
        "{3} | {3'} | saturated:false",
        "{3} | {2',3'} | saturated:true",
        "{2,3} | {3'} | saturated:true",
    ]


def test_counterexample(capsys: pytest.CaptureFixture[str]) -> None:
    code, out = _run(capsys, "counterexample", "nn-priority", "--horizon", "1000")
    assert code == EXIT_OK
    lines = out.splitlines()
    assert "composite drift = 29/915" in lines
    assert "pi(0) = 25/61" in lines
    assert "a[-1] = 8/75" in lines
    assert "beta = 13/75" in lines
    code, out = _run(capsys, "counterexample", "nn-ms", "--horizon", "1000")
    assert code == EXIT_OK
    assert "policy=ms" in out


def test_structure(capsys: pytest.CaptureFixture[str]) -> None:
    code, out = _run(capsys, "structure", "nn-fanti")
    assert code == EXIT_NO
    assert out.startswith("stable-structure: no")
    code, out = _run(capsys, "structure", "nn-fdiag")
    assert code == EXIT_OK


def test_measure(capsys: pytest.CaptureFixture[str]) -> None:
    code, out = _run(capsys, "measure", "nn-fdiag")
    assert code == EXIT_OK
    assert loads_model(out).measure == construct_stable_measure(NN_FDIAG)
    code, out = _run(capsys, "measure", "nn-fanti")
    assert code == EXIT_NO


def test_drain(capsys: pytest.CaptureFixture[str]) -> None:
    code, out = _run(capsys, "drain", "nn-fdiag", "--state", "1,0,0;1,0,0")
    assert code == EXIT_OK
    assert out == "2,2'\n"
    code, _ = _run(capsys, "drain", "nn-fdiag", "--state", "1,0;")
    assert code == EXIT_INPUT
    code, _ = _run(capsys, "drain", "nn-fdiag", "--state", "a;b")
    assert code == EXIT_INPUT
    code, _ = _run(capsys, "drain", "nn-fanti", "--state", "0,0,1;0,0,1")
    assert code == EXIT_NO


def test_simulate(capsys: pytest.CaptureFixture[str]) -> None:
    code, out = _run(capsys, "simulate", "nn", "--policy", "pr", "--horizon", "500", "--seed", "2")
    assert code == EXIT_OK
    assert out.startswith("policy=pr seed=2 horizon=500")
    code, out = _run(capsys, "simulate", "nn", "--horizon", "50", "--trace", "csv")
    assert code == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [int(r["step"]) for r in rows] == list(range(1, 51))


def test_stationary(capsys: pytest.CaptureFixture[str]) -> None:
    code, out = _run(capsys, "stationary", "nn", "--cap", "3", "--top", "2")
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0].startswith("states: ")
    assert len(lines) == 4


def test_sweep_to_file(capsys: pytest.CaptureFixture[str], tmp_path: pathlib.Path) -> None:
    path = tmp_path / "sweep.csv"
    code, _ = _run(
        capsys, "--out", str(path), "sweep", "nn", "--grid", "0.25", "--horizon", "100", "--workers", "1"
    )
    assert code == EXIT_OK
    rows = list(csv.DictReader(path.open(encoding="utf-8")))
    assert len(rows) == 3


def test_model_file(capsys: pytest.CaptureFixture[str], tmp_path: pathlib.Path) -> None:
    path = tmp_path / "model.json"
    dump_model(load_fixture("nn"), path)
    code, out = _run(capsys, "check", str(path))
    assert code == EXIT_OK
    assert out.startswith("NCond: yes")
    code, _ = _run(capsys, "check", str(tmp_path / "missing.json"))
    assert code == EXIT_INPUT


def test_input_errors(capsys: pytest.CaptureFixture[str]) -> None:
    assert _run(capsys, "frobnicate")[0] == EXIT_INPUT
    assert _run(capsys, "simulate", "nn", "--policy", "nope")[0] == EXIT_INPUT
    assert _run(capsys, "simulate", "nn", "--horizon", "0")[0] == EXIT_INPUT
