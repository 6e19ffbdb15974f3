"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise the numpy
versions are used. Set ``EQNET_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("EQNET_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

fake_quant_forward = _impl.fake_quant_forward
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward

__all__ = ["BACKEND", "fake_quant_forward", "conv2d_forward", "conv2d_backward"]
