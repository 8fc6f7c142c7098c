"""Superpixel sampling: which superpixels belong to a coarse window, and the
batch of [mask prior | features] rows across windows and scales."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pooling import MASK_SIZE, clip_window
from .segmentation import SuperpixelSegmentation


class ConfigurationError(KeyError):
    pass


@dataclass
class CoarseProposal:
    """A scale-tagged window carrying a 40x40 soft mask and an objectness score.

    ``window`` is ``(x0, y0, x1, y1)`` in image pixels, half-open.
    """

    window: tuple[int, int, int, int]
    scale: int
    mask40: np.ndarray
    objectness: float
    id: int = 0

    def __post_init__(self):
        self.window = tuple(int(v) for v in self.window)
        self.mask40 = np.asarray(self.mask40, dtype=np.float64)
        if self.mask40.shape != (MASK_SIZE, MASK_SIZE):
            raise ValueError(f"mask must be {MASK_SIZE}x{MASK_SIZE}, got {self.mask40.shape}")
        if self.mask40.min(initial=0.0) < 0 or self.mask40.max(initial=0.0) > 1:
            raise ValueError("mask values must lie in [0, 1]")
        x0, y0, x1, y1 = self.window
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"empty window {self.window}")

    def to_json(self) -> dict:
        return {
            "id": int(self.id),
            "window": list(self.window),
            "scale": int(self.scale),
            "objectness": float(self.objectness),
            "mask40": np.round(self.mask40, 6).tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "CoarseProposal":
        return cls(
            window=tuple(d["window"]),
            scale=int(d["scale"]),
            mask40=np.asarray(d["mask40"], dtype=np.float64),
            objectness=float(d["objectness"]),
            id=int(d.get("id", 0)),
        )


@dataclass(frozen=True)
class SegCrop:
    window: tuple[int, int, int, int]  # clipped to the image
    expanded: tuple[int, int, int, int]  # covers every intersecting superpixel
    ids: np.ndarray  # global superpixel ids, ascending


@dataclass
class SuperpixelBatch:
    prior: np.ndarray  # (n,)
    features: np.ndarray  # (n, D)
    proposal_ids: np.ndarray  # (n,)
    superpixel_ids: np.ndarray  # (n,)
    scales: np.ndarray  # (n,)
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.prior)

    @property
    def width(self) -> int:
        return 1 + self.features.shape[1]

    @property
    def rows(self) -> np.ndarray:
        return np.concatenate([self.prior[:, None], self.features], axis=1)

    @classmethod
    def empty(cls, d: int) -> "SuperpixelBatch":
        z = np.zeros(0, np.int64)
        return cls(np.zeros(0), np.zeros((0, d)), z, z.copy(), z.copy())

    @classmethod
    def concat(cls, batches: list["SuperpixelBatch"], d: int | None = None) -> "SuperpixelBatch":
        if not batches:
            return cls.empty(d or 0)
        labels = None
        if all(b.labels is not None for b in batches):
            labels = np.concatenate([b.labels for b in batches])
        return cls(
            np.concatenate([b.prior for b in batches]),
            np.concatenate([b.features for b in batches]),
            np.concatenate([b.proposal_ids for b in batches]),
            np.concatenate([b.superpixel_ids for b in batches]),
            np.concatenate([b.scales for b in batches]),
            labels,
        )


def crop_segmentation(seg: SuperpixelSegmentation, window, bboxes: np.ndarray | None = None) -> SegCrop:
    """Superpixels with at least one pixel inside ``window``.

    ``bboxes`` (from :func:`region_stats`) avoids rescanning the label map.
    """
    x0, y0, x1, y1 = clip_window(window, seg.height, seg.width)
    ids = np.unique(seg.labels[y0:y1, x0:x1]).astype(np.int64)
    if bboxes is None:
        from .segmentation import region_bboxes

        bboxes = region_bboxes(seg)
    b = bboxes[ids]
    expanded = (
        int(min(b[:, 0].min(), x0)),
        int(min(b[:, 1].min(), y0)),
        int(max(b[:, 2].max(), x1)),
        int(max(b[:, 3].max(), y1)),
    )
    return SegCrop((x0, y0, x1, y1), expanded, ids)


def assemble_batch(
    proposals: list[CoarseProposal],
    crops: list[SegCrop],
    priors: list[np.ndarray],
    tables: dict[int, np.ndarray],
    labels: list[np.ndarray] | None = None,
) -> SuperpixelBatch:
    """One row per (proposal, sampled superpixel), ordered by proposal index
    then superpixel id. ``tables`` maps scale to its pooled feature table."""
    if not proposals:
        d = next(iter(tables.values())).shape[1] if tables else 0
        return SuperpixelBatch.empty(d)
    parts = []
    for k, (p, crop, prior) in enumerate(zip(proposals, crops, priors)):
        if p.scale not in tables:
            raise ConfigurationError(f"no pooled feature table for scale {p.scale}")
        if len(prior) != len(crop.ids):
            raise ValueError("prior does not align with the crop's superpixel ids")
        n = len(crop.ids)
        parts.append(
            SuperpixelBatch(
                prior=np.asarray(prior, dtype=np.float64),
                features=tables[p.scale][crop.ids],
                proposal_ids=np.full(n, p.id, np.int64),
                superpixel_ids=crop.ids,
                scales=np.full(n, p.scale, np.int64),
                labels=None if labels is None else np.asarray(labels[k], dtype=np.float64),
            )
        )
    return SuperpixelBatch.concat(parts)
