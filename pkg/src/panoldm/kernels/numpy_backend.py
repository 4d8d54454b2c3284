"""Reference numpy implementations of the hot inner-loop kernels.

These are the semantics the compiled core in ``_fastcore.pyx`` must match.
Patch extraction/accumulation feed the convolution GEMMs; the bilinear
gather/scatter pair backs all spherical resampling.
"""

import numpy as np


def im2col(padded, kh, kw, stride):
    """(N, C, Hp, Wp) -> (N, C*kh*kw, Ho*Wo) patch matrix."""
    n, c, hp, wp = padded.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=padded.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = padded[:, :, i : i + ho * stride : stride,
                                      j : j + wo * stride : stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def col2im_add(cols, hp, wp, kh, kw, stride):
    """Adjoint of im2col: scatter-add patches back to (N, C, Hp, Wp)."""
    n = cols.shape[0]
    c = cols.shape[1] // (kh * kw)
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + ho * stride : stride,
                j : j + wo * stride : stride] += cols[:, :, i, j]
    return out


def bilinear_gather(img, rows, cols, wrap_cols):
    """Sample img (C, H, W) at fractional pixel coords (integer = pixel center).

    rows/cols are float64 arrays of any common shape. Rows clamp to the valid
    range; columns wrap modulo W when wrap_cols is set (longitude), otherwise
    clamp. Returns (C,) + rows.shape.
    """
    c, h, w = img.shape
    rows = np.clip(rows, 0.0, h - 1.0)
    if wrap_cols:
        cols = np.mod(cols, w)
    else:
        cols = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    r0 = np.clip(r0, 0, h - 1)
    r1 = np.clip(r0 + 1, 0, h - 1)
    if wrap_cols:
        c0 = np.mod(c0, w)
        c1 = np.mod(c0 + 1, w)
    else:
        c0 = np.clip(c0, 0, w - 1)
        c1 = np.clip(c0 + 1, 0, w - 1)
    flat = img.reshape(c, h * w)
    i00 = (r0 * w + c0).ravel()
    i01 = (r0 * w + c1).ravel()
    i10 = (r1 * w + c0).ravel()
    i11 = (r1 * w + c1).ravel()
    fr = fr.ravel().astype(img.dtype)
    fc = fc.ravel().astype(img.dtype)
    out = (flat[:, i00] * ((1 - fr) * (1 - fc))
           + flat[:, i01] * ((1 - fr) * fc)
           + flat[:, i10] * (fr * (1 - fc))
           + flat[:, i11] * (fr * fc))
    return out.reshape((c,) + rows.shape)


def bilinear_scatter_add(grad_out, rows, cols, wrap_cols, h, w):
    """Adjoint of bilinear_gather: (C,)+rows.shape grads -> (C, H, W)."""
    c = grad_out.shape[0]
    rows = np.clip(rows, 0.0, h - 1.0)
    if wrap_cols:
        cols = np.mod(cols, w)
    else:
        cols = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = (rows - r0).ravel()
    fc = (cols - c0).ravel()
    r0 = np.clip(r0, 0, h - 1).ravel()
    r1 = np.clip(r0 + 1, 0, h - 1)
    if wrap_cols:
        c0 = np.mod(c0, w).ravel()
        c1 = np.mod(c0 + 1, w)
    else:
        c0 = np.clip(c0, 0, w - 1).ravel()
        c1 = np.clip(c0 + 1, 0, w - 1)
    g = grad_out.reshape(c, -1)
    out = np.zeros((c, h * w), dtype=grad_out.dtype)
    for idx, wgt in ((r0 * w + c0, (1 - fr) * (1 - fc)),
                     (r0 * w + c1, (1 - fr) * fc),
                     (r1 * w + c0, fr * (1 - fc)),
                     (r1 * w + c1, fr * fc)):
        np.add.at(out.T, idx, (g * wgt.astype(grad_out.dtype)).T)
    return out.reshape(c, h, w)
