"""Convolution kernel backend, chosen once at import.

``ADAPOSE_BACKEND`` selects it: ``auto`` (default) uses the compiled
extension when it imports and falls back to numpy otherwise; ``ext`` requires
the extension; ``python`` forces the numpy kernels.
"""

import logging
import os

import numpy as np

from . import _kernels_py

log = logging.getLogger(__name__)

_choice = os.environ.get("ADAPOSE_BACKEND", "auto").lower()
if _choice not in ("auto", "ext", "python"):
    raise ImportError(f"ADAPOSE_BACKEND must be auto, ext or python, got {_choice!r}")

_impl = _kernels_py
if _choice != "python":
    try:
        from . import _kernels_ext as _impl  # type: ignore[no-redef]
    except ImportError as exc:
        if _choice == "ext":
            raise
        log.debug("compiled kernels unavailable (%s); using numpy fallback", exc)
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _resolve(impl):
    if impl is None:
        return _impl
    if isinstance(impl, str):
        backends = available_backends()
        if impl not in backends:
            raise ValueError(f"kernel backend {impl!r} not available; have {sorted(backends)}")
        return backends[impl]
    return impl


def conv2d_forward(x, w, stride, pad, impl=None):
    impl = _resolve(impl)
    return impl.conv2d_forward(_c64(x), _c64(w), int(stride), int(pad))


def conv2d_backward_input(g, w, x_shape, stride, pad, impl=None):
    impl = _resolve(impl)
    return impl.conv2d_backward_input(_c64(g), _c64(w), tuple(x_shape), int(stride), int(pad))


def conv2d_backward_weight(g, x, w_shape, stride, pad, impl=None):
    impl = _resolve(impl)
    return impl.conv2d_backward_weight(_c64(g), _c64(x), tuple(w_shape), int(stride), int(pad))


def available_backends():
    """Modules usable as ``impl=`` (or their names) in this interpreter."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels_ext

        found["ext"] = _kernels_ext
    except ImportError:
        pass
    return found
