"""
    Error hierarchy. Every error raised by the library derives from
    :class:`MatchstabError`, and most carry a certificate tree accessible
    through :func:`~matchstab.certificates.get_certificate`.
"""

from __future__ import annotations

from typing import Type, TypeVar

from .certificates import Certificate


class MatchstabError(ValueError):
    """Base class for all errors raised by the library."""


class DisconnectedMatchingGraphError(MatchstabError):
    """The matching graph ``(C, S, E)`` is not connected."""


class IsolatedArrivalVertexError(MatchstabError):
    """Some class has no arrival edge in ``F``."""


class DanglingEdgeError(MatchstabError):
    """An edge references a class which does not exist."""


class UnknownClassError(MatchstabError):
    """A class label is not part of the structure."""


class NotADistributionError(MatchstabError):
    """Probabilities are negative or do not sum to 1."""


class NotAFacetError(MatchstabError):
    """A pair of subsets contains a matching edge."""


class MixedEmptinessError(MatchstabError):
    """Exactly one of the two facet subsets is empty."""


class InvalidStateError(MatchstabError):
    """A buffer state violates the state-space constraints."""


class TooLargeError(MatchstabError):
    """An exponential oracle or enumeration was asked too much."""


class NCondViolatedError(MatchstabError):
    """The marginals do not satisfy the strict necessary conditions."""


class UnequalTotalsError(MatchstabError):
    """Customer and server buffer totals differ."""


class NotStronglyConnectedError(MatchstabError):
    """The pairing digraph of the structure is not strongly connected."""


class ZeroFacetError(MatchstabError):
    """An operation requiring a nonzero facet received the zero facet."""


class UnstableStructureError(MatchstabError):
    """No measure on this structure can satisfy the necessary conditions."""


class MissingPrioritiesError(MatchstabError):
    """A priority policy was requested without priority matrices."""


class NotNNModelError(MatchstabError):
    """The model is not the three-class NN model."""


class NotPositiveRecurrentError(MatchstabError):
    """The auxiliary chain does not satisfy its recurrence condition."""


class BufferOverflowError(MatchstabError):
    """A buffer exceeded the configured maximum length."""


class StateSpaceTooLargeError(MatchstabError):
    """A truncated state space exceeds the configured maximum size."""


class DrainFailedError(MatchstabError):
    """Bounded search could not find an arrival sequence emptying the buffer."""


class ModelFileError(MatchstabError):
    """A model file is malformed."""


_E = TypeVar("_E", bound=MatchstabError)


def _certified_error(cls: Type[_E], certificate: Certificate) -> _E:
    """
    Error of class ``cls`` whose message is the string form of ``certificate``,
    with the certificate attached as the ``certificate`` attribute.
    """
    error = cls(str(certificate))
    setattr(error, "certificate", certificate)
    return error
