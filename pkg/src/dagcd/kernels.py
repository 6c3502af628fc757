"""Backend selection for the coordinate-descent kernels.

The compiled extension is used when it imports; ``DAGCD_BACKEND=python``
forces the numpy fallback.
"""
from __future__ import annotations

import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` (``"cython"``, ``"python"`` or None for default)."""
    name = name or os.environ.get("DAGCD_BACKEND") or ("cython" if _ckernels else "python")
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"kernel backend {name!r} unavailable; choose from {sorted(BACKENDS)}"
        ) from None


DEFAULT_BACKEND = "cython" if _ckernels is not None else "python"
if _ckernels is None:
    log.debug("compiled kernels not built; using the numpy fallback")
