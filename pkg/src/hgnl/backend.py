"""Kernel backend selection.

Two interchangeable backends provide the dense kernels: the compiled
extension ``hgnl._kernels_cy`` and the NumPy fallback ``hgnl._kernels_py``.
The compiled one is preferred when importable. Set ``HGNL_BACKEND`` to
``compiled`` or ``python`` to force a choice at import time, or call
:func:`select` (used by the benchmark and by tests that exercise both).
"""

import os

from . import _kernels_py
from .errors import ConfigError

try:
    from . import _kernels_cy
except ImportError:  # pragma: no cover - depends on whether the ext was built
    _kernels_cy = None

_MODULES = {"python": _kernels_py}
if _kernels_cy is not None:
    _MODULES["compiled"] = _kernels_cy

_active_name = None
_active_module = None


def available_backends():
    """Names of the backends importable in this installation."""
    return sorted(_MODULES)


def select(name):
    """Switch the active backend; returns the previously active name."""
    global _active_name, _active_module
    if name not in _MODULES:
        raise ConfigError(
            f"unknown backend {name!r}; available: {available_backends()}"
        )
    previous = _active_name
    _active_name = name
    _active_module = _MODULES[name]
    return previous


def active_backend():
    return _active_name


def kernels():
    return _active_module


_requested = os.environ.get("HGNL_BACKEND", "auto")
if _requested == "auto":
    select("compiled" if "compiled" in _MODULES else "python")
else:
    select(_requested)
