"""Dataset-level glue: training-set construction, batch refinement and the
coarse baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .classifier import TrainConfig, TrainedModel, TrainingSet, train
from .groundtruth import GtObject, coarse_mask, greedy_optimal_set, labels_for_window
from .metrics import mask_iou
from .refine import ImageContext, PostConfig, RefinedProposal, prepare_image, refine_image, sample_proposals
from .sampling import CoarseProposal, SuperpixelBatch
from .segmentation import ScaleConfig

logger = logging.getLogger(__name__)


@dataclass
class Sample:
    name: str
    image: np.ndarray
    gts: list[GtObject]
    proposals: list[CoarseProposal]


def match_gt(p: CoarseProposal, gts: list[GtObject], shape) -> GtObject | None:
    """The ground-truth object a training window is responsible for: same id
    if present, else the one best overlapping the coarse mask."""
    by_id = {g.id: g for g in gts}
    if p.id in by_id:
        return by_id[p.id]
    cm = coarse_mask(p, *shape)
    best = max(gts, key=lambda g: mask_iou(cm, g.mask), default=None)
    if best is None or mask_iou(cm, best.mask) == 0:
        return None
    return best


def labeled_batch(sample: Sample, scale_cfg: ScaleConfig, method: str = "fh", ctx: ImageContext | None = None):
    """Raw-feature training rows for every proposal of one image."""
    if ctx is None:
        ctx = prepare_image(sample.image, [p.scale for p in sample.proposals], scale_cfg, method)
    proposals = []
    targets = []
    for p in sample.proposals:
        gt = match_gt(p, sample.gts, sample.image.shape[:2])
        if gt is not None:
            proposals.append(p)
            targets.append(gt)
    if not proposals:
        return None
    crops, _, batch = sample_proposals(ctx, proposals)
    labels = []
    for p, crop, gt in zip(proposals, crops, targets):
        opt = greedy_optimal_set(ctx.scales[p.scale].seg, gt)
        labels.append(labels_for_window(opt, crop))
    batch.labels = np.concatenate(labels)
    return batch


def build_training_set(samples, scale_cfg: ScaleConfig | None = None, method: str = "fh") -> TrainingSet:
    scale_cfg = scale_cfg or ScaleConfig()
    batches: list[SuperpixelBatch] = []
    for s in samples:
        b = labeled_batch(s, scale_cfg, method)
        if b is not None:
            batches.append(b)
    return TrainingSet.from_batches(batches)


def train_on_samples(samples, config: TrainConfig, scale_cfg=None, method="fh") -> TrainedModel:
    data = build_training_set(samples, scale_cfg, method)
    if len(data) == 0:
        raise ValueError("no training rows: the dataset has no usable proposals")
    logger.info("training on %d superpixel rows (%d positive)", len(data), int(data.labels.sum()))
    model = train(data, config)
    model.stats["segmentation_method"] = method
    return model


def refine_samples(samples, model, post_cfg=None, scale_cfg=None, method="fh") -> list[list[RefinedProposal]]:
    return [refine_image(s.image, s.proposals, model, post_cfg, scale_cfg, method) for s in samples]


def coarse_proposals(sample: Sample) -> list[RefinedProposal]:
    """Upsampled coarse masks in score order: the unrefined baseline."""
    h, w = sample.image.shape[:2]
    out = [RefinedProposal(coarse_mask(p, h, w), float(p.objectness), int(p.id)) for p in sample.proposals]
    return sorted(out, key=lambda r: (-r.score, r.source_id))


def duplicate_proposals(proposals: list[CoarseProposal]) -> list[CoarseProposal]:
    """Every proposal followed by a clone with a fresh id."""
    nxt = max((p.id for p in proposals), default=-1) + 1
    out = []
    for p in proposals:
        out.append(p)
        out.append(CoarseProposal(p.window, p.scale, p.mask40.copy(), p.objectness, nxt))
        nxt += 1
    return out


__all__ = [
    "Sample",
    "PostConfig",
    "build_training_set",
    "coarse_proposals",
    "duplicate_proposals",
    "labeled_batch",
    "refine_samples",
    "train_on_samples",
]
