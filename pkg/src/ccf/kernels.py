"""Backend selection for the hot kernels.

The compiled extension is used when it imports; set ``CCF_KERNELS=python`` to
force the NumPy fallback. ``set_backend`` switches at runtime (benchmarks,
parity tests).
"""
import os

from . import _kernels_py as python

try:
    from . import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

active = compiled if compiled is not None and os.environ.get("CCF_KERNELS", "").lower() != "python" else python


def set_backend(name: str):
    global active
    if name == "python":
        active = python
    elif name in ("cython", "compiled"):
        if compiled is None:
            raise RuntimeError("compiled kernels are not available; build the extension first")
        active = compiled
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    return active


def backend_name() -> str:
    return active.NAME
