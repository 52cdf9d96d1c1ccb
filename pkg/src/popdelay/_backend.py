"""Pick the integration core at import time.

``POPDELAY_BACKEND`` may be ``auto`` (default: compiled if importable),
``cython`` (fail if the extension is missing) or ``python``.
"""

import os

from . import _kernels_py

_choice = os.environ.get("POPDELAY_BACKEND", "auto").lower()

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None
    if _choice == "cython":
        raise

if _choice == "python" or _compiled is None:
    SimCore = _kernels_py.SimCore
else:
    SimCore = _compiled.SimCore

BACKEND = SimCore.backend


def core_class(name: str | None = None):
    """Core class by name; ``None`` returns the import-time default."""
    if name is None:
        return SimCore
    if name == "python":
        return _kernels_py.SimCore
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled core popdelay._kernels is not built")
        return _compiled.SimCore
    raise ValueError(f"unknown backend {name!r}")


def compiled_available() -> bool:
    return _compiled is not None
