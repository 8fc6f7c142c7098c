"""Hand-crafted per-pixel feature stack and the learned linear projection that
is applied to superpixel-pooled features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.color import rgb2lab

from .segmentation import as_float_image

CHANNELS = (
    "r", "g", "b",
    "lab_l", "lab_a", "lab_b",
    "gradmag_s1", "gradmag_s2",
    "energy_0", "energy_45", "energy_90", "energy_135",
    "local_std5",
)
N_CHANNELS = len(CHANNELS)
ORIENTATIONS = (0.0, 45.0, 90.0, 135.0)
FEATURE_CONFIG = {"name": "handcrafted13", "channels": list(CHANNELS)}


class ShapeError(ValueError):
    """Array shapes are inconsistent."""


def raw_channels(image) -> np.ndarray:
    """The 13 feature channels before standardization, shape (C, H, W)."""
    img = as_float_image(image)
    gray = img.mean(axis=2)
    lab = rgb2lab(img)
    chans = [img[:, :, 0], img[:, :, 1], img[:, :, 2]]
    chans += [lab[:, :, 0], lab[:, :, 1], lab[:, :, 2]]
    for sigma in (1.0, 2.0):
        chans.append(ndimage.gaussian_gradient_magnitude(gray, sigma, mode="nearest"))
    gx = ndimage.gaussian_filter(gray, 1.0, order=(0, 1), mode="nearest")
    gy = ndimage.gaussian_filter(gray, 1.0, order=(1, 0), mode="nearest")
    for theta in np.deg2rad(ORIENTATIONS):
        chans.append((np.cos(theta) * gx + np.sin(theta) * gy) ** 2)
    chans.append(local_std(gray, 5))
    out = np.stack(chans).astype(np.float64)
    # exact zeros for flat input (filters leave ~1e-17 residue)
    out[6:][np.abs(out[6:]) < 1e-12] = 0.0
    return out


def local_std(gray: np.ndarray, size: int) -> np.ndarray:
    mean = ndimage.uniform_filter(gray, size, mode="reflect")
    sq = ndimage.uniform_filter(gray * gray, size, mode="reflect")
    return np.sqrt(np.maximum(sq - mean * mean, 0.0))


def standardize(stack: np.ndarray) -> np.ndarray:
    """Per-channel mean 0 / std 1 over the image; constant channels become 0."""
    mean = stack.mean(axis=(1, 2), keepdims=True)
    std = stack.std(axis=(1, 2), keepdims=True)
    std = np.where(std > 1e-12, std, 1.0)
    return (stack - mean) / std


def raw_feature_stack(image) -> np.ndarray:
    return standardize(raw_channels(image))


@dataclass
class LinearProjection:
    weight: np.ndarray  # (d_out, d_in)
    bias: np.ndarray  # (d_out,)

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init(cls, d_in: int, d_out: int = 64, rng=None) -> "LinearProjection":
        rng = np.random.default_rng(rng)
        if d_in < 1 or d_out < 1:
            raise ShapeError("projection dimensions must be positive")
        w = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_out, d_in))
        return cls(w, np.zeros(d_out))

    def copy(self) -> "LinearProjection":
        return LinearProjection(self.weight.copy(), self.bias.copy())


def project_forward(features: np.ndarray, proj: LinearProjection) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != proj.d_in:
        raise ShapeError(f"features {features.shape} do not match projection input {proj.d_in}")
    return features @ proj.weight.T + proj.bias


def project_backward(grad_out: np.ndarray, input_features: np.ndarray, proj: LinearProjection):
    """Return ``(grad_weight, grad_bias, grad_input)``."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    x = np.asarray(input_features, dtype=np.float64)
    if grad_out.ndim != 2 or x.ndim != 2 or grad_out.shape[0] != x.shape[0]:
        raise ShapeError("grad_out and input_features must be 2-D with equal row counts")
    if grad_out.shape[1] != proj.d_out or x.shape[1] != proj.d_in:
        raise ShapeError("gradient shapes do not match the projection")
    return grad_out.T @ x, grad_out.sum(axis=0), grad_out @ proj.weight
