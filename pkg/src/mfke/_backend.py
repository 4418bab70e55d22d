"""Select the compiled kernel module, falling back to numpy."""
from __future__ import annotations

import os

if os.environ.get("MFKE_BACKEND", "").lower() == "python":
    from . import _pykernels as kernels

    BACKEND = "python"
else:
    try:
        from . import _core as kernels

        BACKEND = "compiled"
    except ImportError:  # extension not built
        from . import _pykernels as kernels

        BACKEND = "python"


def thread_count() -> int:
    """Worker cap from ``MFKE_THREADS`` (default: all cores)."""
    raw = os.environ.get("MFKE_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1


__all__ = ["BACKEND", "kernels", "thread_count"]
