"""Batched closed-form linear algebra for stacks of symmetric 4x4 matrices.

Per-matrix LAPACK dispatch dominates the runtime of the 2^M-term batches this
package works with; the 2x2-block (Schur complement) forms below run as a
handful of flat vectorized passes instead.
"""

import numpy as np


def block_inv_logdet4(v):
    """Inverse and log-determinant of a stack of symmetric 4x4 matrices.

    Returns (inv, logdet, ok) where ok flags the positive-definite entries;
    rows with ok == False contain unusable values (no exception is raised,
    callers decide how to treat them). Accuracy is ~eps * condition, ample
    for the information matrices handled here.
    """
    f = np.ascontiguousarray(v).reshape(v.shape[:-2] + (16,))
    a00, a01, a11 = f[..., 0], f[..., 1], f[..., 5]
    b00, b01, b10, b11 = f[..., 2], f[..., 3], f[..., 6], f[..., 7]
    d00, d01, d11 = f[..., 10], f[..., 11], f[..., 15]

    det_a = a00 * a11 - a01 * a01
    ok = (det_a > 0.0) & (a00 > 0.0)
    safe_det_a = np.where(ok, det_a, 1.0)
    ia00, ia01, ia11 = a11 / safe_det_a, -a01 / safe_det_a, a00 / safe_det_a

    # E = inv(A) B, then Schur complement S = D - B' E
    e00 = ia00 * b00 + ia01 * b10
    e01 = ia00 * b01 + ia01 * b11
    e10 = ia01 * b00 + ia11 * b10
    e11 = ia01 * b01 + ia11 * b11
    s00 = d00 - (b00 * e00 + b10 * e10)
    s01 = d01 - (b00 * e01 + b10 * e11)
    s11 = d11 - (b01 * e01 + b11 * e11)

    det_s = s00 * s11 - s01 * s01
    ok = ok & (det_s > 0.0) & (s00 > 0.0)
    safe_det_s = np.where(ok, det_s, 1.0)
    is00, is01, is11 = s11 / safe_det_s, -s01 / safe_det_s, s00 / safe_det_s

    tr00 = -(e00 * is00 + e01 * is01)
    tr01 = -(e00 * is01 + e01 * is11)
    tr10 = -(e10 * is00 + e11 * is01)
    tr11 = -(e10 * is01 + e11 * is11)
    tl00 = ia00 - (tr00 * e00 + tr01 * e01)
    tl01 = ia01 - (tr00 * e10 + tr01 * e11)
    tl11 = ia11 - (tr10 * e10 + tr11 * e11)

    out = np.empty_like(f)
    out[..., 0] = tl00
    out[..., 1] = tl01
    out[..., 4] = tl01
    out[..., 5] = tl11
    out[..., 2] = tr00
    out[..., 3] = tr01
    out[..., 6] = tr10
    out[..., 7] = tr11
    out[..., 8] = tr00
    out[..., 12] = tr01
    out[..., 9] = tr10
    out[..., 13] = tr11
    out[..., 10] = is00
    out[..., 11] = is01
    out[..., 14] = is01
    out[..., 15] = is11
    with np.errstate(invalid="ignore", divide="ignore"):
        logdet = np.where(ok, np.log(safe_det_a) + np.log(safe_det_s), np.nan)
    return out.reshape(v.shape), logdet, ok
