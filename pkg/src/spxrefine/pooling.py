"""Superpixel mean pooling (forward and backward) and the mask prior pooled
from upsampled 40x40 coarse masks."""

from __future__ import annotations

import numpy as np

from .segmentation import SuperpixelSegmentation

MASK_SIZE = 40


class PoolingError(ValueError):
    pass


def _check_map(fmap: np.ndarray, seg: SuperpixelSegmentation) -> np.ndarray:
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim == 2:
        fmap = fmap[None]
    if fmap.ndim != 3 or fmap.shape[1:] != seg.shape:
        raise PoolingError(f"feature map {fmap.shape} does not match segmentation {seg.shape}")
    return fmap


def pool_mean_forward(fmap: np.ndarray, seg: SuperpixelSegmentation) -> np.ndarray:
    """Mean of a (C, H, W) map over every superpixel; returns (count, C)."""
    fmap = _check_map(fmap, seg)
    flat = seg.labels.ravel()
    area = seg.areas().astype(np.float64)
    c = fmap.shape[0]
    sums = np.empty((seg.count, c))
    for ch in range(c):
        sums[:, ch] = np.bincount(flat, weights=fmap[ch].ravel(), minlength=seg.count)
    return sums / area[:, None]


def pool_mean_backward(grad_table: np.ndarray, seg: SuperpixelSegmentation, out_shape=None) -> np.ndarray:
    """Spread each row's gradient uniformly over its superpixel's pixels."""
    g = np.asarray(grad_table, dtype=np.float64)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape[0] != seg.count:
        raise PoolingError(f"gradient has {g.shape[0]} rows, segmentation has {seg.count}")
    if out_shape is not None and tuple(out_shape) != (g.shape[1], *seg.shape):
        raise PoolingError(f"requested shape {tuple(out_shape)} is inconsistent")
    per_pixel = g / seg.areas()[:, None]
    return np.moveaxis(per_pixel[seg.labels], -1, 0)


def upsample_bilinear(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-aligned bilinear resize with edge clamping."""
    mask = np.asarray(mask, dtype=np.float64)
    in_h, in_w = mask.shape

    def axis(n_out, n_in):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(out_h, in_h)
    x0, x1, fx = axis(out_w, in_w)
    top = mask[y0][:, x0] * (1 - fx) + mask[y0][:, x1] * fx
    bot = mask[y1][:, x0] * (1 - fx) + mask[y1][:, x1] * fx
    return top * (1 - fy[:, None]) + bot * fy[:, None]


def clip_window(window, height: int, width: int) -> tuple[int, int, int, int]:
    x0, y0, x1, y1 = (int(v) for v in window)
    cx0, cy0 = max(0, x0), max(0, y0)
    cx1, cy1 = min(width, x1), min(height, y1)
    if cx1 <= cx0 or cy1 <= cy0:
        raise PoolingError(f"window {tuple(window)} is empty inside a {width}x{height} image")
    return cx0, cy0, cx1, cy1


def window_mask(mask40: np.ndarray, window, height: int, width: int) -> np.ndarray:
    """Coarse mask upsampled into its window and pasted into a zero image."""
    x0, y0, x1, y1 = (int(v) for v in window)
    if x1 <= x0 or y1 <= y0:
        raise PoolingError(f"empty window {tuple(window)}")
    cx0, cy0, cx1, cy1 = clip_window(window, height, width)
    up = upsample_bilinear(mask40, y1 - y0, x1 - x0)
    full = np.zeros((height, width))
    full[cy0:cy1, cx0:cx1] = up[cy0 - y0 : cy1 - y0, cx0 - x0 : cx1 - x0]
    return full


def pool_mask_prior(mask40: np.ndarray, window, seg: SuperpixelSegmentation, sampled_ids=None) -> np.ndarray:
    """Mean of the upsampled coarse mask over each sampled superpixel.

    The denominator is the superpixel's full area; pixels outside the window
    count as 0.
    """
    x0, y0, x1, y1 = (int(v) for v in window)
    if x1 <= x0 or y1 <= y0:
        raise PoolingError(f"empty window {tuple(window)}")
    cx0, cy0, cx1, cy1 = clip_window(window, seg.height, seg.width)
    up = upsample_bilinear(np.clip(mask40, 0.0, 1.0), y1 - y0, x1 - x0)
    crop = up[cy0 - y0 : cy1 - y0, cx0 - x0 : cx1 - x0]
    labels = seg.labels[cy0:cy1, cx0:cx1]
    sums = np.bincount(labels.ravel(), weights=crop.ravel(), minlength=seg.count)
    prior = np.clip(sums / seg.areas(), 0.0, 1.0)
    if sampled_ids is None:
        return prior
    return prior[np.asarray(sampled_ids, dtype=np.int64)]
