"""Gate-kernel backend selection.

The compiled Cython kernels are preferred when importable; the numpy
fallback is functionally identical.  Set CROSSFLOW_KERNEL=python (or
=cython) to force a backend, e.g. for the benchmark or for debugging.
"""

import os

from . import _lstm_np

_forced = os.environ.get("CROSSFLOW_KERNEL", "").lower()

if _forced in ("python", "py", "numpy"):
    _impl = _lstm_np
elif _forced in ("cython", "cy", "c"):
    from . import _lstm_cy as _impl
else:
    try:
        from . import _lstm_cy as _impl
    except ImportError:
        _impl = _lstm_np

BACKEND = _impl.BACKEND
cell_forward = _impl.cell_forward
cell_backward = _impl.cell_backward


def available_backends():
    backends = {"python": _lstm_np}
    try:
        from . import _lstm_cy

        backends["cython"] = _lstm_cy
    except ImportError:
        pass
    return backends
