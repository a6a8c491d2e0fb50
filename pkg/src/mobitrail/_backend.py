"""Pick the compiled kernels when available, the numpy fallback otherwise.

Set ``MOBITRAIL_BACKEND=python`` to force the fallback, or ``=cython`` to
fail loudly when the extension is missing.
"""

from __future__ import annotations

import contextlib
import importlib
import logging
import os
from types import ModuleType

log = logging.getLogger(__name__)

_current: ModuleType | None = None


def _load(name: str) -> ModuleType:
    if name == "cython":
        return importlib.import_module("mobitrail._kernels")
    if name == "python":
        return importlib.import_module("mobitrail._fallback")
    raise ValueError(f"unknown backend {name!r}")


def _select() -> ModuleType:
    wanted = os.environ.get("MOBITRAIL_BACKEND", "").strip().lower()
    if wanted:
        return _load(wanted)
    try:
        return _load("cython")
    except ImportError:
        log.debug("compiled kernels unavailable, using numpy fallback")
        return _load("python")


def kernels() -> ModuleType:
    global _current
    if _current is None:
        _current = _select()
    return _current


def name() -> str:
    return kernels().BACKEND


def available() -> list[str]:
    out = []
    for n in ("cython", "python"):
        try:
            _load(n)
            out.append(n)
        except ImportError:
            pass
    return out


@contextlib.contextmanager
def use(backend: str):
    """Temporarily switch backend (tests and benchmarks)."""
    global _current
    prev = _current
    _current = _load(backend)
    try:
        yield _current
    finally:
        _current = prev
