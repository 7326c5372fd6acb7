"""
    Process-wide limits and environment settings.
"""

from __future__ import annotations

from contextlib import contextmanager
import collections.abc
import os
import typing
from typing import Any, Optional

_default_limits: typing.Dict[str, Any] = {
    "max_classes": 20,
    "max_word_length": 10**6,
    "max_states": 10**6,
    "dense_solve_limit": 2 * 10**4,
    "power_iteration_tol": 1e-12,
    "power_iteration_max_iter": 100_000,
    "drain_max_blocks": 10_000,
    "drain_max_branches": 4_096,
}

_limits: typing.Dict[str, Any] = dict(_default_limits)
r"""
    Current context of limits, read by the modules that enforce them.
"""


@contextmanager
def limits(**overrides: Any) -> collections.abc.Iterator[None]:
    r"""
    Temporarily overrides some of the process-wide limits:

    >>> from matchstab.config import limits, current_limits
    >>> with limits(max_states=500):
    ...     current_limits()["max_states"]
    500

    Raises :obj:`KeyError` if an unknown limit is named.
    """
    # pylint: disable = global-statement
    global _limits
    unknown = [k for k in overrides if k not in _default_limits]
    if unknown:
        raise KeyError(f"Unknown limits: {unknown!r}")
    outer_limits = _limits
    _limits = {**_limits}
    _limits.update(overrides)
    try:
        yield
    finally:
        _limits = outer_limits


def current_limits() -> typing.Mapping[str, Any]:
    """The limits active in the current context."""
    return dict(_limits)


def limit(name: str) -> Any:
    """Value of a single limit in the current context."""
    return _limits[name]


def worker_count(requested: Optional[int] = None) -> int:
    """
    Size of the worker pool used by parameter sweeps: the requested value
    (if any), capped by the ``MATCHSTAB_THREADS`` environment variable,
    defaulting to the number of CPUs.
    """
    cap = os.cpu_count() or 1
    env = os.environ.get("MATCHSTAB_THREADS")
    if env is not None:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ValueError(
                f"MATCHSTAB_THREADS must be a positive integer, found {env!r}"
            ) from None
    if requested is None:
        return cap
    return max(1, min(requested, cap))


def log_level_from_env(default: str = "WARNING") -> str:
    """Log level named by ``MATCHSTAB_LOG_LEVEL``, upper-cased."""
    return os.environ.get("MATCHSTAB_LOG_LEVEL", default).upper()
