"""Hot-loop kernels, compiled when available.

The Cython extension is used if it imports; otherwise the numpy versions in
``_kernels_py`` are used. Set ``PERTURBKIT_PURE_PYTHON=1`` to force the
fallback. ``IMPLEMENTATION`` names the active choice.
"""

from __future__ import annotations

import os

from . import _kernels_py as python_kernels

compiled_kernels = None
if not os.environ.get("PERTURBKIT_PURE_PYTHON"):
    try:
        from . import _kernels as compiled_kernels  # type: ignore[attr-defined]
    except ImportError:
        compiled_kernels = None

_active = compiled_kernels or python_kernels
IMPLEMENTATION = "cython" if compiled_kernels is not None else "python"

auc_sweep = _active.auc_sweep
gathered_pearson_stats = _active.gathered_pearson_stats
