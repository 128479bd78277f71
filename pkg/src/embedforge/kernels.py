"""Kernel backend selection.

The compiled extension is used when it imports and ``EMBEDFORGE_PURE_PYTHON``
is unset; otherwise the pure-Python reference is used. ``BACKEND`` names the
active one. Both modules stay importable for cross-checking.
"""

from __future__ import annotations

import os

from . import _kernels_py as python_backend

compiled_backend = None
if not os.environ.get("EMBEDFORGE_PURE_PYTHON"):
    try:
        from . import _kernels as compiled_backend  # type: ignore[no-redef]
    except ImportError:
        compiled_backend = None

_active = compiled_backend or python_backend
BACKEND = "compiled" if compiled_backend is not None else "python"

fnv1a64 = _active.fnv1a64
hash_buckets = _active.hash_buckets
infonce_loss_grad = _active.infonce_loss_grad
ranked_average_precision = _active.ranked_average_precision
tied_average_precision = _active.tied_average_precision
dcg_at_k = _active.dcg_at_k


def backends() -> dict:
    """All importable backends keyed by name."""
    out = {"python": python_backend}
    if compiled_backend is not None:
        out["compiled"] = compiled_backend
    return out
