"""NumPy/SciPy implementations of the hot kernels.

This backend is always available; the compiled extension in
``_ckernels.pyx`` implements the same contracts with plain C loops.
Both must agree to tight tolerances (see tests/test_kernels.py).
"""

from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

# Sliding windows with variance at or below this are treated as constant
# and score 0.  Must match the compiled backend.
VAR_EPS = 1e-8


def ncc_response(image: np.ndarray, templ: np.ndarray) -> np.ndarray:
    """Normalized cross-correlation of templ against every placement in image.

    Output shape is (H - th + 1, W - tw + 1); values lie in [-1, 1] and
    zero-variance windows (or a zero-variance template) score 0.
    """
    H, W = image.shape
    th, tw = templ.shape
    oh, ow = H - th + 1, W - tw + 1
    n = float(th * tw)

    tz = templ - templ.mean()
    tvar = float((tz * tz).sum())
    if tvar <= VAR_EPS:
        return np.zeros((oh, ow))

    cross = fftconvolve(image, tz[::-1, ::-1], mode="valid")

    # Sliding window sums via padded integral images.
    ii = np.zeros((H + 1, W + 1))
    ii2 = np.zeros((H + 1, W + 1))
    np.cumsum(np.cumsum(image, axis=0), axis=1, out=ii[1:, 1:])
    np.cumsum(np.cumsum(image * image, axis=0), axis=1, out=ii2[1:, 1:])
    wsum = ii[th:, tw:] - ii[:-th or None, tw:] - ii[th:, :-tw or None] + ii[:-th or None, :-tw or None]
    wsum2 = ii2[th:, tw:] - ii2[:-th or None, tw:] - ii2[th:, :-tw or None] + ii2[:-th or None, :-tw or None]
    wvar = wsum2 - wsum * wsum / n

    out = np.zeros((oh, ow))
    good = wvar > VAR_EPS
    out[good] = cross[good] / np.sqrt(wvar[good] * tvar)
    np.clip(out, -1.0, 1.0, out=out)
    return out


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid 3x3 convolution, channels-last input (B, H, W, C), weights
    (OC, C, 3, 3): returns pre-activations (B, H-2, W-2, OC)."""
    B, H, W, C = x.shape
    oc = w.shape[0]
    oh, ow = H - 2, W - 2
    a = np.tile(b, (B * oh * ow, 1))
    for ky in range(3):
        for kx in range(3):
            cols = x[:, ky:ky + oh, kx:kx + ow, :].reshape(-1, C)
            a += cols @ w[:, :, ky, kx].T
    return a.reshape(B, oh, ow, oc)


def conv3x3_param_grad(da: np.ndarray, x: np.ndarray):
    """Gradients wrt weights and bias of conv3x3_forward."""
    B, H, W, C = x.shape
    oh, ow = H - 2, W - 2
    oc = da.shape[3]
    da2 = da.reshape(-1, oc)
    dw = np.empty((oc, C, 3, 3))
    for ky in range(3):
        for kx in range(3):
            cols = x[:, ky:ky + oh, kx:kx + ow, :].reshape(-1, C)
            dw[:, :, ky, kx] = da2.T @ cols
    return dw, da2.sum(axis=0)


def maxpool5_forward(x: np.ndarray):
    """5x5 max-pool, stride 5, valid, channels last.  Returns the pooled
    output and the in-window argmax (row-major within the window)."""
    B, H, W, C = x.shape
    po = (min(H, W) - 5) // 5 + 1
    side = po * 5
    xr = x[:, :side, :side, :].reshape(B, po, 5, po, 5, C)
    xf = np.ascontiguousarray(xr.transpose(0, 1, 3, 5, 2, 4)).reshape(B, po, po, C, 25)
    idx = xf.argmax(axis=-1)
    out = np.take_along_axis(xf, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.int64)


def maxpool5_backward(dout: np.ndarray, idx: np.ndarray, H: int, W: int) -> np.ndarray:
    B, po, _, C = dout.shape
    side = po * 5
    dxf = np.zeros((B, po, po, C, 25))
    np.put_along_axis(dxf, idx[..., None], dout[..., None], axis=-1)
    dxr = dxf.reshape(B, po, po, C, 5, 5).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros((B, H, W, C))
    dx[:, :side, :side, :] = dxr.reshape(B, side, side, C)
    return dx


def bilinear_sample_box(
    image: np.ndarray,
    x0: float,
    y0: float,
    bw: float,
    bh: float,
    out_w: int,
    out_h: int,
) -> np.ndarray:
    """Bilinearly resample the box (x0, y0, bw, bh) onto an out_h x out_w grid.

    Output pixel (oy, ox) samples the source at
        sx = x0 + (ox + 0.5) * bw / out_w - 0.5
        sy = y0 + (oy + 0.5) * bh / out_h - 0.5
    Sample points inside the frame rectangle are clamped to the pixel-centre
    hull before interpolation; points outside the frame read as 0.
    """
    H, W = image.shape
    sx_scale = bw / out_w
    sy_scale = bh / out_h
    sx = x0 + (np.arange(out_w) + 0.5) * sx_scale - 0.5
    sy = y0 + (np.arange(out_h) + 0.5) * sy_scale - 0.5

    inside_x = (sx >= -0.5) & (sx <= W - 0.5)
    inside_y = (sy >= -0.5) & (sy <= H - 0.5)

    cx = np.clip(sx, 0.0, W - 1.0)
    cy = np.clip(sy, 0.0, H - 1.0)
    ix = np.floor(cx).astype(np.intp)
    iy = np.floor(cy).astype(np.intp)
    fx = cx - ix
    fy = cy - iy
    ix1 = np.minimum(ix + 1, W - 1)
    iy1 = np.minimum(iy + 1, H - 1)

    top = (1.0 - fx)[None, :] * image[np.ix_(iy, ix)] + fx[None, :] * image[np.ix_(iy, ix1)]
    bot = (1.0 - fx)[None, :] * image[np.ix_(iy1, ix)] + fx[None, :] * image[np.ix_(iy1, ix1)]
    vals = (1.0 - fy)[:, None] * top + fy[:, None] * bot

    mask = inside_y[:, None] & inside_x[None, :]
    return np.where(mask, vals, 0.0)
