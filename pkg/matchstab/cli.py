"""
    Command-line interface: ``matchstab <command> ...``.

    Exit code 0 on success, 1 when the analysis answers "no" (necessary or
    sufficient conditions failing, unstable structure), 2 on input errors.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
from fractions import Fraction
import logging
import sys
import typing
from typing import Optional, TextIO

if sys.version_info[1] >= 9:
    from collections.abc import Iterator, Sequence
else:
    from typing import Iterator, Sequence

from rich.console import Console
from rich.logging import RichHandler

from . import __version__, config
from .analysis import (
    check_scond,
    construct_stable_measure,
    drain_to_empty,
    stable_structure_certificate,
)
from .certificates import Certificate, get_certificate
from .chains import (
    mean_buffer,
    nn_counterexample_drift,
    truncated_stationary,
    z_chain_params_nn,
    z_chain_stationary,
)
from .errors import (
    MatchstabError,
    NCondViolatedError,
    NotPositiveRecurrentError,
    NotStronglyConnectedError,
    UnstableStructureError,
)
from .facets import Facet, enumerate_facets
from .flow import ncond_certificate
from .model import NN, NN_PRIORITIES, format_rational, product_measure
from .model_file import Model, dumps_model, load_model
from .policies import POLICY_NAMES, CommutativeState, PolicySpec, flow_policy_table
from .simulation import simulate
from .sweep import SweepSpec, run_sweep

_log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NO = 1
EXIT_INPUT = 2

COUNTEREXAMPLE_MARGINAL = (Fraction(1, 3), Fraction(2, 5), Fraction(4, 15))
"""
    Marginal of the NN measure for which the priority policy is unstable
    although the necessary conditions hold.
"""


class InputError(MatchstabError):
    """Invalid command-line input."""


_NO_ERRORS = (
    NCondViolatedError,
    NotPositiveRecurrentError,
    NotStronglyConnectedError,
    UnstableStructureError,
)


def _setup_logging(verbosity: int) -> None:
    if verbosity >= 2:
        level = "DEBUG"
    elif verbosity == 1:
        level = "INFO"
    else:
        level = config.log_level_from_env()
    handler = RichHandler(console=Console(stderr=True), show_path=False)
    logging.basicConfig(level=level, format="%(message)s", handlers=[handler], force=True)


@contextlib.contextmanager
def _output(path: Optional[str]) -> Iterator[TextIO]:
    if path is None or path == "-":
        yield sys.stdout
        return
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        yield f


def _yes_no(flag: bool) -> str:
    return "yes" if flag else "no"


def _labels(labels: Sequence[str]) -> str:
    return " ".join(labels)


def _print_certificate(certificate: Certificate, out: TextIO) -> None:
    for line in str(certificate).split("\n"):
        print(f"  {line}", file=out)


def _policy(model: Model, name: str) -> PolicySpec:
    if name == "flow":
        return PolicySpec.flow(flow_policy_table(model.structure, model.measure))
    return PolicySpec.from_name(name, priorities=model.priorities)


def _parse_state(text: str) -> CommutativeState:
    try:
        xs, ys = text.split(";")
        return CommutativeState(
            [int(k) for k in xs.split(",") if k.strip()],
            [int(k) for k in ys.split(",") if k.strip()],
        )
    except ValueError:
        raise InputError(f"Invalid state {text!r}, expected 'x1,...,xn;y1,...,ym'.") from None


def cmd_facets(args: argparse.Namespace, out: TextIO) -> int:
    """Lists all facets of the model structure, one ``bullet_C | bullet_S | saturated:...`` line each."""
    structure = load_model(args.model).structure
    for facet in enumerate_facets(structure):
        customers = "{" + ",".join(facet.bullet_customers) + "}"
        servers = "{" + ",".join(facet.bullet_servers) + "}"
        saturated = str(facet.is_saturated()).lower()
        print(f"{customers} | {servers} | saturated:{saturated}", file=out)
    return EXIT_OK


def cmd_check(args: argparse.Namespace, out: TextIO) -> int:
    """Checks the strict necessary conditions, and optionally the sufficient ones."""
    model = load_model(args.model)
    structure, measure = model.structure, model.measure
    certificate = ncond_certificate(structure, measure.customer_marginal, measure.server_marginal)
    print(f"NCond: {_yes_no(certificate is None)}", file=out)
    if certificate is not None:
        _print_certificate(certificate, out)
    ok = certificate is None
    if args.scond:
        scond, reports = check_scond(structure, measure)
        print(f"SCond: {_yes_no(scond)}", file=out)
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["bullet_C", "bullet_S", "saturated", "drift", "scond_ok"])
        for r in reports:
            writer.writerow(
                [
                    _labels(r.facet.bullet_customers),
                    _labels(r.facet.bullet_servers),
                    str(r.facet.is_saturated()).lower(),
                    format_rational(r.linear_drift),
                    str(r.scond_satisfied).lower(),
                ]
            )
        ok = ok and scond
    return EXIT_OK if ok else EXIT_NO


def cmd_structure(args: argparse.Namespace, out: TextIO) -> int:
    """Tests whether the structure admits a stable measure."""
    structure = load_model(args.model).structure
    certificate = stable_structure_certificate(structure)
    print(f"stable-structure: {_yes_no(certificate is None)}", file=out)
    if certificate is not None:
        _print_certificate(certificate, out)
        return EXIT_NO
    return EXIT_OK


def cmd_measure(args: argparse.Namespace, out: TextIO) -> int:
    """Prints a stable measure for the structure, as a model file."""
    model = load_model(args.model)
    try:
        measure = construct_stable_measure(model.structure)
    except MatchstabError as e:
        print("stable-structure: no", file=out)
        _print_certificate(get_certificate(e), out)
        return EXIT_NO
    out.write(dumps_model(Model(measure, model.priorities)))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, out: TextIO) -> int:
    """Runs one simulation and prints its summary (or a CSV trace)."""
    model = load_model(args.model)
    policy = _policy(model, args.policy)
    report = simulate(
        model.structure,
        model.measure,
        policy,
        args.horizon,
        args.seed,
        trace=args.trace == "csv",
    )
    if report.trace is not None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["step", "buffer", "facet_key"])
        for step, buffer, key in report.trace:
            writer.writerow([step, buffer, Facet(model.structure, *key).label()])
        print(report.summary(), file=sys.stderr)
    else:
        print(report.summary(), file=out)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, out: TextIO) -> int:
    """Runs a parameter sweep over the symmetric product family."""
    model = load_model(args.model)
    spec = SweepSpec(
        model, args.policy, Fraction(args.grid), args.horizon, args.seeds, args.seed
    )
    rows = run_sweep(spec, out, args.workers)
    _log.info("Wrote %d sweep rows.", rows)
    return EXIT_OK


def cmd_stationary(args: argparse.Namespace, out: TextIO) -> int:
    """Prints the truncated stationary distribution (most likely states first)."""
    model = load_model(args.model)
    policy = _policy(model, args.policy)
    distribution = truncated_stationary(model.structure, model.measure, policy, args.cap)
    print(f"states: {len(distribution)}", file=out)
    print(f"mean buffer: {mean_buffer(distribution):.10g}", file=out)
    top = sorted(distribution.items(), key=lambda kv: -kv[1])[: args.top]
    for state, p in top:
        print(f"{p:.10g}\t{state!r}", file=out)
    return EXIT_OK


def cmd_counterexample(args: argparse.Namespace, out: TextIO) -> int:
    """Exact drift numbers of the NN counterexample and a confirming simulation."""
    measure = product_measure(NN, COUNTEREXAMPLE_MARGINAL, COUNTEREXAMPLE_MARGINAL)
    if args.which == "nn-priority":
        params = z_chain_params_nn(measure)
        for name, triple in (("a", params.a), ("b", params.b), ("c", params.c)):
            for k, p in zip((-1, 0, 1), triple):
                print(f"{name}[{k}] = {format_rational(p)}", file=out)
        st = z_chain_stationary(params)
        print(f"pi(0) = {format_rational(st.pi_zero)}", file=out)
        print(f"pi(Z+) = {format_rational(st.pi_pos)}", file=out)
        print(f"pi(Z-) = {format_rational(st.pi_neg)}", file=out)
        drift = nn_counterexample_drift(measure)
        print(f"alpha = {format_rational(drift.alpha)}", file=out)
        print(f"beta = {format_rational(drift.beta)}", file=out)
        print(f"gamma = {format_rational(drift.gamma)}", file=out)
        print(f"composite drift = {format_rational(drift.composite)}", file=out)
        policy = PolicySpec.priorities(*NN_PRIORITIES)
    else:
        policy = PolicySpec.ms()
    report = simulate(NN, measure, policy, args.horizon, args.seed)
    print(report.summary(), file=out)
    print(f"final_buffer/horizon = {report.final_buffer / report.horizon:.6g}", file=out)
    return EXIT_OK


def cmd_drain(args: argparse.Namespace, out: TextIO) -> int:
    """Prints an arrival sequence emptying the given state, one pair per line."""
    model = load_model(args.model)
    state = _parse_state(args.state)
    policy = _policy(model, args.policy) if args.policy is not None else None
    sequence = drain_to_empty(model.structure, model.measure, state, policy, args.seed)
    for c, s in sequence:
        print(f"{c},{s}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    """The argument parser of the ``matchstab`` command."""
    parser = argparse.ArgumentParser(
        prog="matchstab", description="Stability analysis of bipartite matching models."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    parser.add_argument("--out", default=None, help="output file, '-' for stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    def _model_cmd(name: str, fun: typing.Callable[..., int], help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("model", help="model file, or one of the bundled fixtures")
        p.set_defaults(fun=fun)
        return p

    def _policy_arg(p: argparse.ArgumentParser, default: Optional[str] = "ml") -> None:
        p.add_argument("--policy", choices=POLICY_NAMES, default=default)

    _model_cmd("facets", cmd_facets, "list facets")
    p = _model_cmd("check", cmd_check, "check NCond (and SCond)")
    p.add_argument("--scond", action="store_true", help="also check SCond per facet")
    _model_cmd("structure", cmd_structure, "test for a stable structure")
    _model_cmd("measure", cmd_measure, "construct a stable measure")
    p = _model_cmd("simulate", cmd_simulate, "simulate the buffer chain")
    _policy_arg(p)
    p.add_argument("--horizon", type=int, default=10**5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", choices=("csv",), default=None)
    p = _model_cmd("sweep", cmd_sweep, "sweep the symmetric product family")
    _policy_arg(p)
    p.add_argument("--grid", default="0.05")
    p.add_argument("--horizon", type=int, default=10**5)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p = _model_cmd("stationary", cmd_stationary, "truncated stationary distribution")
    _policy_arg(p)
    p.add_argument("--cap", type=int, default=20)
    p.add_argument("--top", type=int, default=10)
    p = sub.add_parser("counterexample", help="NN counterexamples")
    p.add_argument("which", choices=("nn-priority", "nn-ms"))
    p.add_argument("--horizon", type=int, default=10**5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fun=cmd_counterexample)
    p = _model_cmd("drain", cmd_drain, "arrival sequence emptying a state")
    p.add_argument("--state", required=True, help="counts 'x1,...,xn;y1,...,ym'")
    _policy_arg(p, None)
    p.add_argument("--seed", type=int, default=None)
    return parser


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Parses ``argv``, runs the command and returns its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    _setup_logging(args.verbose)
    try:
        with _output(args.out) as out:
            code: int = args.fun(args, out)
            return code
    except _NO_ERRORS as e:
        _log.error("%s: %s", type(e).__name__, e)
        return EXIT_NO
    except MatchstabError as e:
        _log.error("%s: %s", type(e).__name__, e)
        return EXIT_INPUT
    except ValueError as e:
        _log.error("%s", e)
        return EXIT_INPUT


def main() -> None:
    """Console-script entry point."""
    sys.exit(run_command())
