"""Contour overlays for eyeballing proposals."""

from __future__ import annotations

import colorsys

import numpy as np
from scipy import ndimage


def palette(n: int) -> np.ndarray:
    """``n`` distinct saturated colors; entry ``i`` depends only on ``i``."""
    out = np.zeros((n, 3), np.uint8)
    for i in range(n):
        hue = (i * 0.618033988749895) % 1.0
        val = 1.0 if (i // 7) % 2 == 0 else 0.75
        r, g, b = colorsys.hsv_to_rgb(hue, 1.0, val)
        out[i] = np.round(np.array([r, g, b]) * 255)
    return out


def contour(mask: np.ndarray, width: int = 1) -> np.ndarray:
    """Inner boundary band of a binary mask."""
    m = np.asarray(mask, bool)
    inner = ndimage.binary_erosion(m, iterations=width, border_value=0)
    return m & ~inner


def overlay(image: np.ndarray, masks, width: int = 1) -> np.ndarray:
    """Image with proposal ``i`` outlined in ``palette(len(masks))[i]``.

    Later proposals are drawn over earlier ones.
    """
    out = np.array(image, dtype=np.uint8, copy=True)
    if out.ndim == 2:
        out = np.repeat(out[..., None], 3, axis=2)
    colors = palette(len(masks))
    for m, c in zip(masks, colors):
        out[contour(m, width)] = c
    return out
