"""Estimation kernels with a compiled fast path and a NumPy fallback.

At import time the Cython extension ``_core`` is preferred; when it is not
built (source checkout without compilation) the NumPy reference ``_pyref``
serves transparently.  ``set_backend`` exists for tests and benchmarks that
need to pin or compare the two implementations.
"""

from __future__ import annotations

from . import _pyref

try:
    from . import _core

    _ACTIVE = _core
except ImportError:  # extension not built; NumPy fallback
    _core = None
    _ACTIVE = _pyref

_KERNEL_NAMES = ("fit_logit_mle", "fit_poisson2_mle", "fit_mm_lse", "fit_expdecay_lse")


def available_backends() -> tuple[str, ...]:
    return ("compiled", "python") if _core is not None else ("python",)


def get_backend() -> str:
    return _ACTIVE.BACKEND_NAME


def set_backend(name: str) -> None:
    """Pin the kernel backend: ``"compiled"`` or ``"python"``."""
    global _ACTIVE
    if name == "python":
        _ACTIVE = _pyref
    elif name == "compiled":
        if _core is None:
            raise RuntimeError("compiled kernel extension is not available")
        _ACTIVE = _core
    else:
        raise ValueError(f"unknown backend {name!r}")


def backend_module(name: str | None = None):
    """Return the active backend module, or a specific one by name."""
    if name is None:
        return _ACTIVE
    if name == "python":
        return _pyref
    if name == "compiled":
        if _core is None:
            raise RuntimeError("compiled kernel extension is not available")
        return _core
    raise ValueError(f"unknown backend {name!r}")


def fit_logit_mle(*args, **kwargs):
    return _ACTIVE.fit_logit_mle(*args, **kwargs)


def fit_poisson2_mle(*args, **kwargs):
    return _ACTIVE.fit_poisson2_mle(*args, **kwargs)


def fit_mm_lse(*args, **kwargs):
    return _ACTIVE.fit_mm_lse(*args, **kwargs)


def fit_expdecay_lse(*args, **kwargs):
    return _ACTIVE.fit_expdecay_lse(*args, **kwargs)
