"""
    Certificates explaining negative answers: violated inequalities,
    violated invariants, unreachable pairs.
"""

from __future__ import annotations

import sys
import typing
from fractions import Fraction
from typing import Any, Optional

if sys.version_info[1] >= 9:
    from collections.abc import Sequence
else:
    from typing import Sequence

if sys.version_info[1] >= 11:
    from typing import Self
else:
    from typing_extensions import Self

from typing import Literal, Protocol


def _indent_lines(lines: Sequence[str], level: int = 1) -> list[str]:
    """Indent all given blocks of text."""
    if any("\n" in line for line in lines):
        lines = [l for line in lines for l in line.split("\n")]
    ind = " " * 2 * level
    return [ind + line for line in lines]


def _set_str(labels: typing.Iterable[str]) -> str:
    return "{" + ",".join(labels) + "}"


Acc = typing.TypeVar("Acc")
"""
    Type variable for the accumulator in :meth:`Certificate.visit`.
"""


class CertificateTreeVisitor(Protocol[Acc]):
    """
    Structural type for visitor functions that can be passed to
    :meth:`Certificate.visit`.
    """

    def __call__(self, subject: Any, message: str, acc: Acc) -> Acc:
        """
        See :meth:`Certificate.visit` for usage.
        """


class Certificate:
    """
    Generic certificate: a subject, a message and the certificates that in
    turn explain it.
    """

    _subject: Any
    _message: str
    _causes: typing.Tuple[Certificate, ...]

    def __new__(cls, subject: Any, message: str, *causes: Certificate) -> Self:
        instance = super().__new__(cls)
        instance._subject = subject
        instance._message = message
        instance._causes = causes
        return instance

    @property
    def subject(self) -> Any:
        """The object the certificate is about."""
        return self._subject

    @property
    def message(self) -> str:
        """Human-readable statement of what is certified."""
        return self._message

    @property
    def causes(self) -> typing.Tuple[Certificate, ...]:
        r"""
        Certificates that in turn explain this one (if any).

        :rtype: :obj:`~typing.Tuple`\ [:class:`Certificate`, ...]
        """
        return self._causes

    def visit(self, fun: CertificateTreeVisitor[Acc], acc: Acc) -> None:
        r"""
        Walks the certificate tree depth-first, parents before causes.
        Each node is passed to ``fun(subject, message, acc)``, and the value
        returned becomes the accumulator handed to the causes of that node.

        :param fun: visitor applied to each node of the tree
        :type fun: :obj:`~typing.Callable`\ [[:obj:`~typing.Any`, :obj:`str`, ``Acc``], ``Acc``]
        :param acc: the initial value for the accumulator
        :type acc: any type ``Acc``
        """
        new_acc = fun(self.subject, self.message, acc)
        for cause in self.causes:
            cause.visit(fun, new_acc)

    def rich_print(self) -> None:
        r"""
        Prints the certificate tree to stdout as a :class:`rich.tree.Tree`.
        """
        # pylint: disable = import-outside-toplevel
        import rich
        from rich.tree import Tree
        from rich.text import Text

        tree = Tree("Certificate")

        def add_node(subject: Any, message: str, acc: Tree) -> Tree:
            return acc.add(Text(message))

        self.visit(add_node, tree)
        rich.print(tree)

    def __str__(self) -> str:
        return "\n".join(self._str_lines())

    def __repr__(self) -> str:
        causes_str = ""
        if self.causes:
            causes_str = ", " + ", ".join(repr(cause) for cause in self.causes)
        return f"{type(self).__name__}({self.subject!r}, {self.message!r}{causes_str})"

    def _str_lines(self) -> list[str]:
        lines = [self.message]
        lines.extend(
            line
            for cause in self.causes
            for line in _indent_lines(cause._str_lines())
        )
        return lines


class SubsetCertificate(Certificate):
    """
    A violated subset inequality: the mass ``lhs`` of a subset is at least
    the mass ``rhs`` of its neighbourhood on the opposite side (strictly
    greater when :attr:`strict` is set). Used both for the necessary
    conditions on arrival marginals and for Hall conditions on buffers.
    """

    _side: Literal["customer", "server"]
    _subset: typing.Tuple[str, ...]
    _image: typing.Tuple[str, ...]
    _lhs: Fraction
    _rhs: Fraction
    _strict: bool

    def __new__(
        cls,
        side: Literal["customer", "server"],
        subset: Sequence[str],
        image: Sequence[str],
        lhs: Fraction,
        rhs: Fraction,
        *,
        names: typing.Optional[typing.Tuple[str, str]] = None,
        strict: bool = False,
    ) -> Self:
        # pylint: disable = too-many-arguments
        assert side in ("customer", "server"), side
        assert lhs > rhs if strict else lhs >= rhs, f"Not a violation: {lhs}, {rhs}"
        if names is None:
            names = ("mu_C", "mu_S") if side == "customer" else ("mu_S", "mu_C")
        from .model import format_rational  # pylint: disable = import-outside-toplevel

        left, right = names
        letter, img = ("U", "S") if side == "customer" else ("V", "C")
        message = (
            f"{letter}={_set_str(subset)}: {left}({letter})={format_rational(lhs)} "
            f"{'>' if strict else '>='} "
            f"{right}({img}({letter}))={format_rational(rhs)}"
        )
        instance = super().__new__(cls, tuple(subset), message)
        instance._side = side
        instance._subset = tuple(subset)
        instance._image = tuple(image)
        instance._lhs = Fraction(lhs)
        instance._rhs = Fraction(rhs)
        instance._strict = strict
        return instance

    @property
    def side(self) -> Literal["customer", "server"]:
        """Whether the subset consists of customer or server classes."""
        return self._side

    @property
    def subset(self) -> typing.Tuple[str, ...]:
        """The violating subset, in canonical order."""
        return self._subset

    @property
    def image(self) -> typing.Tuple[str, ...]:
        """The neighbourhood of :attr:`subset` on the opposite side."""
        return self._image

    @property
    def lhs(self) -> Fraction:
        """Mass of the subset."""
        return self._lhs

    @property
    def rhs(self) -> Fraction:
        """Mass of its neighbourhood."""
        return self._rhs

    @property
    def strict(self) -> bool:
        """Whether the violation is strict."""
        return self._strict


class UnreachablePairCertificate(Certificate):
    """
    A pair of nodes of the pairing digraph with no directed path from the
    first to the second.
    """

    _source: str
    _target: str

    def __new__(cls, source: str, target: str) -> Self:
        instance = super().__new__(
            cls, (source, target), f"no directed path from {source} to {target}"
        )
        instance._source = source
        instance._target = target
        return instance

    @property
    def source(self) -> str:
        """Start node."""
        return self._source

    @property
    def target(self) -> str:
        """Node that cannot be reached from :attr:`source`."""
        return self._target


class InvariantCertificate(Certificate):
    """
    A named invariant violated by some object.
    """

    _invariant: str

    def __new__(
        cls, subject: Any, invariant: str, detail: str, *causes: Certificate
    ) -> Self:
        instance = super().__new__(cls, subject, f"{invariant}: {detail}", *causes)
        instance._invariant = invariant
        return instance

    @property
    def invariant(self) -> str:
        """Short name of the violated invariant."""
        return self._invariant


class StateCertificate(InvariantCertificate):
    """
    A buffer state violating the state-space constraints.
    """

    _pair: Optional[typing.Tuple[str, str]]

    def __new__(
        cls,
        state: Any,
        detail: str,
        *,
        pair: Optional[typing.Tuple[str, str]] = None,
    ) -> Self:
        instance = super().__new__(cls, state, "invalid state", detail)
        instance._pair = pair
        return instance

    @property
    def pair(self) -> Optional[typing.Tuple[str, str]]:
        """The matching edge with both endpoints buffered, if that is the problem."""
        return self._pair


def get_certificate(err: Exception) -> Certificate:
    """
    Programmatic access to the certificate attached to an error raised by
    this library.

    Raises :obj:`ValueError` if no certificate is attached to ``err``.
    """
    certificate = getattr(err, "certificate", None)
    if not isinstance(certificate, Certificate):
        raise ValueError("Error given carries no certificate.")
    return certificate
