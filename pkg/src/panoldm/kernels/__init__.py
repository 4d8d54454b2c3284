"""Kernel backend selection.

The compiled extension (``_fastcore``) is preferred when it imported cleanly;
the numpy reference backend is always available. Override with
``PANOLDM_KERNELS=numpy`` or ``PANOLDM_KERNELS=cython``.
"""

import os

import numpy as np

from . import numpy_backend

try:
    from . import _fastcore
except ImportError:
    _fastcore = None

_requested = os.environ.get("PANOLDM_KERNELS", "").strip().lower()
if _requested == "cython" and _fastcore is None:
    raise ImportError(
        "PANOLDM_KERNELS=cython but the compiled kernel core is not built; "
        "reinstall with a C compiler or unset the variable")
if _requested == "numpy":
    _impl = numpy_backend
elif _requested == "cython":
    _impl = _fastcore
else:
    _impl = _fastcore if _fastcore is not None else numpy_backend

BACKEND = "cython" if _impl is _fastcore and _fastcore is not None else "numpy"


def get_backend(name=None):
    """Return the kernel module for `name` ('numpy' | 'cython' | None=active)."""
    if name is None:
        return _impl
    if name == "numpy":
        return numpy_backend
    if name == "cython":
        if _fastcore is None:
            raise ValueError("compiled kernel core is not available")
        return _fastcore
    raise ValueError(f"unknown kernel backend {name!r}")


def im2col(padded, kh, kw, stride, backend=None):
    impl = get_backend(backend)
    return impl.im2col(np.ascontiguousarray(padded), kh, kw, stride)


def col2im_add(cols, hp, wp, kh, kw, stride, backend=None):
    impl = get_backend(backend)
    return impl.col2im_add(np.ascontiguousarray(cols), hp, wp, kh, kw, stride)


def bilinear_gather(img, rows, cols, wrap_cols, backend=None):
    impl = get_backend(backend)
    shape = rows.shape
    rows2 = np.ascontiguousarray(rows.reshape(shape[0], -1) if rows.ndim > 1
                                 else rows.reshape(1, -1), dtype=np.float64)
    cols2 = np.ascontiguousarray(cols.reshape(rows2.shape), dtype=np.float64)
    out = impl.bilinear_gather(np.ascontiguousarray(img), rows2, cols2,
                               bool(wrap_cols))
    return out.reshape((img.shape[0],) + shape)


def bilinear_scatter_add(grad_out, rows, cols, wrap_cols, h, w, backend=None):
    impl = get_backend(backend)
    shape = rows.shape
    rows2 = np.ascontiguousarray(rows.reshape(shape[0], -1) if rows.ndim > 1
                                 else rows.reshape(1, -1), dtype=np.float64)
    cols2 = np.ascontiguousarray(cols.reshape(rows2.shape), dtype=np.float64)
    g2 = np.ascontiguousarray(grad_out.reshape((grad_out.shape[0],) + rows2.shape))
    return impl.bilinear_scatter_add(g2, rows2, cols2, bool(wrap_cols), h, w)
