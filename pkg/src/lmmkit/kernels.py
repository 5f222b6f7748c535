"""Kernel backend selection: compiled extension when available, numpy otherwise.

Set ``LMMKIT_KERNELS=pure`` (or ``compiled``) to force a backend; call
``use_backend`` to switch at runtime, e.g., from the benchmark script.
"""

import os

from . import _kernels_py

try:
    from . import _speedups
except ImportError:  # extension not built; numpy fallback
    _speedups = None

_BACKENDS = {"pure": _kernels_py}
if _speedups is not None:
    _BACKENDS["compiled"] = _speedups


def _initial():
    forced = os.environ.get("LMMKIT_KERNELS")
    if forced:
        if forced not in _BACKENDS:
            raise ImportError(f"kernel backend {forced!r} unavailable "
                              f"(have: {sorted(_BACKENDS)})")
        return _BACKENDS[forced]
    return _BACKENDS.get("compiled", _kernels_py)


_active = _initial()


def backend():
    return _active


def backend_name() -> str:
    return _active.NAME


def available_backends():
    return sorted(_BACKENDS)


def use_backend(name: str):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"kernel backend {name!r} unavailable "
                         f"(have: {sorted(_BACKENDS)})")
    _active = _BACKENDS[name]
    return _active
