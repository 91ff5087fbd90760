"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise, or when the
``RPDCT_FORCE_PYTHON`` environment variable is set to a non-empty value, the
pure-Python versions are used. ``BACKEND`` names the active choice.
"""

from __future__ import annotations

import os

from rpdct import _fallback

if os.environ.get("RPDCT_FORCE_PYTHON"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from rpdct import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

label = _impl.label
moore_trace = _impl.moore_trace
sgd_epoch = _impl.sgd_epoch

RING = _fallback.RING

__all__ = ["BACKEND", "RING", "label", "moore_trace", "sgd_epoch"]
