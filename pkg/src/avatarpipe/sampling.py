"""Bilinear sampling with clamp-to-edge behavior and its vector-Jacobian
product. Shared by the renderer (UV lookups), the unwrapper (image lookups)
and the resampler.

Convention: the center of texel (row r, col c) sits at continuous position
(c + 0.5, r + 0.5). Positions are (x, y) pairs in that space.
"""

from __future__ import annotations

import numpy as np


def _corners(shape, pos):
    h, w = shape[0], shape[1]
    gx = pos[:, 0] - 0.5
    gy = pos[:, 1] - 0.5
    x0 = np.floor(gx)
    y0 = np.floor(gy)
    fx = gx - x0
    fy = gy - y0
    x0i = np.clip(x0.astype(np.int64), 0, w - 1)
    x1i = np.clip(x0.astype(np.int64) + 1, 0, w - 1)
    y0i = np.clip(y0.astype(np.int64), 0, h - 1)
    y1i = np.clip(y0.astype(np.int64) + 1, 0, h - 1)
    return x0i, x1i, y0i, y1i, fx, fy


def bilinear_sample(arr: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Sample ``arr`` (H, W) or (H, W, C) at positions ``pos`` (N, 2).

    Out-of-range positions clamp to the edge texel.
    """
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    x0, x1, y0, y1, fx, fy = _corners(arr.shape, pos)
    fx = fx[:, None]
    fy = fy[:, None]
    v00 = arr[y0, x0]
    v01 = arr[y0, x1]
    v10 = arr[y1, x0]
    v11 = arr[y1, x1]
    out = (v00 * (1 - fx) * (1 - fy) + v01 * fx * (1 - fy)
           + v10 * (1 - fx) * fy + v11 * fx * fy)
    return out[:, 0] if squeeze else out


def bilinear_sample_vjp(arr: np.ndarray, pos: np.ndarray, g_out: np.ndarray):
    """Backward pass of :func:`bilinear_sample`.

    Returns (g_arr, g_pos): the gradient scattered onto the source array and
    the gradient w.r.t. the continuous sample positions. Where the position
    was clamped the positional gradient is zero (both corners coincide).
    """
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
        g_out = g_out[:, None]
    h, w, c = arr.shape
    x0, x1, y0, y1, fx, fy = _corners(arr.shape, pos)
    fxc = fx[:, None]
    fyc = fy[:, None]

    g_arr = np.zeros_like(arr, dtype=np.float64)
    np.add.at(g_arr, (y0, x0), g_out * (1 - fxc) * (1 - fyc))
    np.add.at(g_arr, (y0, x1), g_out * fxc * (1 - fyc))
    np.add.at(g_arr, (y1, x0), g_out * (1 - fxc) * fyc)
    np.add.at(g_arr, (y1, x1), g_out * fxc * fyc)

    v00 = arr[y0, x0]
    v01 = arr[y0, x1]
    v10 = arr[y1, x0]
    v11 = arr[y1, x1]
    dv_dx = (v01 - v00) * (1 - fyc) + (v11 - v10) * fyc
    dv_dy = (v10 - v00) * (1 - fxc) + (v11 - v01) * fxc
    g_pos = np.stack([(dv_dx * g_out).sum(axis=1), (dv_dy * g_out).sum(axis=1)], axis=1)
    if squeeze:
        g_arr = g_arr[:, :, 0]
    return g_arr, g_pos
