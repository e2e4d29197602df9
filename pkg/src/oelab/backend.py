"""Kernel backend selection.

The compiled extension is preferred when importable; set OE_LAB_BACKEND=pure
to force the numpy fallback (or OE_LAB_BACKEND=compiled to fail loudly if the
extension is missing). Both backends export the same functions; see
``oelab._kernels_py`` for the contract.
"""

import os

from oelab import _kernels_py

_requested = os.environ.get("OE_LAB_BACKEND", "auto").lower()

if _requested == "pure":
    kernels = _kernels_py
elif _requested == "compiled":
    from oelab import _kernels as kernels  # type: ignore[no-redef]
else:
    try:
        from oelab import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _kernels_py

BACKEND_NAME = "compiled" if kernels.IS_COMPILED else "pure"


def available_backends():
    """Return {name: module} for every importable backend."""
    out = {"pure": _kernels_py}
    try:
        from oelab import _kernels

        out["compiled"] = _kernels
    except ImportError:
        pass
    return out
