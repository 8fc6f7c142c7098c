"""Turn per-superpixel probabilities into full-resolution proposals:
superpixel-level bilateral filtering, rendering, morphology, and
near-duplicate suppression."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .classifier import TrainedModel, mlp_forward
from .featurizer import FEATURE_CONFIG, project_forward, raw_feature_stack
from .metrics import mask_iou
from .pooling import pool_mask_prior, pool_mean_forward
from .sampling import CoarseProposal, SuperpixelBatch, assemble_batch, crop_segmentation
from .segmentation import (
    AdjacencyGraph,
    RegionStats,
    ScaleConfig,
    SuperpixelSegmentation,
    adjacency,
    region_stats,
    segment_to_target_count,
)


@dataclass
class PostConfig:
    bilateral: bool = True
    sigma_color: float = 10.0
    sigma_spatial: float | None = None  # None: half the mean superpixel diameter
    morph: bool = True
    morph_radius: int = 1
    nms: bool = True
    nms_iou: float = 0.95
    threshold: float = 0.5

    def __post_init__(self):
        if self.sigma_color <= 0 or (self.sigma_spatial is not None and self.sigma_spatial <= 0):
            raise ValueError("bilateral sigmas must be positive")
        if not 0 < self.nms_iou <= 1:
            raise ValueError("nms_iou must lie in (0, 1]")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class RefinedProposal:
    mask: np.ndarray
    score: float
    source_id: int


def two_hop(graph: AdjacencyGraph, ids: np.ndarray | None = None) -> list[np.ndarray]:
    """Neighborhood {i} plus 1- and 2-hop neighbors, optionally restricted to ``ids``."""
    allowed = None
    if ids is not None:
        allowed = np.zeros(graph.count, bool)
        allowed[ids] = True
    out = []
    for i in range(graph.count) if ids is None else ids:
        one = graph.neighbors(i)
        hood = set(one.tolist())
        for j in one:
            hood.update(graph.neighbors(j).tolist())
        hood.add(int(i))
        h = np.fromiter(sorted(hood), dtype=np.int64)
        if allowed is not None:
            h = h[allowed[h]]
        out.append(h)
    return out


def mean_diameter(stats: RegionStats) -> float:
    return float(np.mean(2.0 * np.sqrt(stats.area / np.pi)))


def bilateral_filter_spx(
    probs: np.ndarray,
    stats: RegionStats,
    graph: AdjacencyGraph,
    cfg: PostConfig | None = None,
    ids: np.ndarray | None = None,
    hoods: list[np.ndarray] | None = None,
) -> np.ndarray:
    """Color- and position-weighted mean of probabilities over each
    superpixel's 2-hop neighborhood.

    With ``ids`` the filter runs on that subset only (``probs`` aligned with
    ``ids``) and neighbors outside the subset are ignored.
    """
    cfg = cfg or PostConfig()
    probs = np.asarray(probs, dtype=np.float64)
    if ids is None:
        ids = np.arange(graph.count)
    ids = np.asarray(ids, dtype=np.int64)
    if len(probs) != len(ids):
        raise ValueError("probabilities do not align with superpixel ids")
    sigma_s = cfg.sigma_spatial or 0.5 * mean_diameter(stats)
    full = np.zeros(graph.count)
    full[ids] = probs
    if hoods is None:
        hoods = two_hop(graph, ids)
    out = np.empty_like(probs)
    lab, cen = stats.mean_color, stats.centroid
    for k, i in enumerate(ids):
        h = hoods[k]
        dc = ((lab[h] - lab[i]) ** 2).sum(axis=1)
        ds = ((cen[h] - cen[i]) ** 2).sum(axis=1)
        logw = -dc / (2 * cfg.sigma_color**2) - ds / (2 * sigma_s**2)
        wts = np.exp(logw - logw.max())
        out[k] = (wts * full[h]).sum() / wts.sum()
    return out


def render_mask(probs, seg: SuperpixelSegmentation, threshold: float = 0.5, ids=None) -> np.ndarray:
    """Binary mask of superpixels with probability >= threshold; superpixels
    outside ``ids`` (when given) are background."""
    probs = np.asarray(probs, dtype=np.float64)
    on = np.zeros(seg.count, bool)
    if ids is None:
        on[: len(probs)] = probs >= threshold
    else:
        on[np.asarray(ids, dtype=np.int64)] = probs >= threshold
    return on[seg.labels]


def morph_open_close(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    """Closing then opening with a (2r+1)-square element; the border is
    replicated so objects touching the image edge are not eroded."""
    mask = np.asarray(mask, dtype=bool)
    if radius < 1:
        return mask.copy()
    st = np.ones((2 * radius + 1, 2 * radius + 1), bool)
    pad = 2 * radius
    m = np.pad(mask, pad, mode="edge")
    m = ndimage.binary_erosion(ndimage.binary_dilation(m, st), st, border_value=1)
    m = ndimage.binary_dilation(ndimage.binary_erosion(m, st, border_value=1), st)
    return m[pad:-pad, pad:-pad]


def nms_near_duplicates(proposals: list[RefinedProposal], iou_thresh: float = 0.95) -> list[RefinedProposal]:
    """Keep proposals in score order unless they overlap a kept one by
    IoU >= ``iou_thresh``."""
    order = sorted(range(len(proposals)), key=lambda i: (-proposals[i].score, proposals[i].source_id, i))
    kept: list[RefinedProposal] = []
    for i in order:
        p = proposals[i]
        if all(mask_iou(p.mask, k.mask) < iou_thresh for k in kept):
            kept.append(p)
    return kept


@dataclass
class ScaleContext:
    seg: SuperpixelSegmentation
    stats: RegionStats
    graph: AdjacencyGraph
    raw_table: np.ndarray


@dataclass
class ImageContext:
    """Per-image work shared by every proposal: one segmentation and pooled
    feature table per scale."""

    image: np.ndarray
    scales: dict[int, ScaleContext] = field(default_factory=dict)


def prepare_image(image, scale_ids, scale_cfg: ScaleConfig, method: str = "fh") -> ImageContext:
    image = np.asarray(image)
    h, w = image.shape[:2]
    stack = raw_feature_stack(image)
    ctx = ImageContext(image)
    for s in sorted(set(int(v) for v in scale_ids)):
        seg = segment_to_target_count(image, method, scale_cfg.target_for(s, h, w))
        ctx.scales[s] = ScaleContext(seg, region_stats(seg, image), adjacency(seg), pool_mean_forward(stack, seg))
    return ctx


def sample_proposals(ctx: ImageContext, proposals: list[CoarseProposal], tables=None):
    """Crops, priors and the assembled batch for ``proposals``."""
    crops, priors = [], []
    for p in proposals:
        sc = ctx.scales[p.scale]
        crop = crop_segmentation(sc.seg, p.window, sc.stats.bbox)
        crops.append(crop)
        priors.append(pool_mask_prior(p.mask40, p.window, sc.seg, crop.ids))
    if tables is None:
        tables = {s: sc.raw_table for s, sc in ctx.scales.items()}
    return crops, priors, assemble_batch(proposals, crops, priors, tables)


def classify_batch(model: TrainedModel, batch: SuperpixelBatch) -> np.ndarray:
    if len(batch) == 0:
        return np.zeros(0)
    return mlp_forward(model.mlp, batch.rows)


def refine_image(
    image,
    proposals: list[CoarseProposal],
    model: TrainedModel,
    post_cfg: PostConfig | None = None,
    scale_cfg: ScaleConfig | None = None,
    method: str = "fh",
    ctx: ImageContext | None = None,
) -> list[RefinedProposal]:
    """Full refinement of one image's coarse proposals, highest score first."""
    post_cfg = post_cfg or PostConfig()
    scale_cfg = scale_cfg or ScaleConfig()
    if model.feature_config.get("name") != FEATURE_CONFIG["name"]:
        raise ValueError(f"model expects features {model.feature_config.get('name')!r}")
    if not proposals:
        return []
    if ctx is None:
        ctx = prepare_image(image, [p.scale for p in proposals], scale_cfg, method)
    tables = {s: project_forward(sc.raw_table, model.projection) for s, sc in ctx.scales.items()}
    crops, _, batch = sample_proposals(ctx, proposals, tables)
    probs = classify_batch(model, batch)

    hood_cache: dict[int, list[np.ndarray]] = {}
    out = []
    start = 0
    for p, crop in zip(proposals, crops):
        n = len(crop.ids)
        pr = probs[start : start + n]
        start += n
        sc = ctx.scales[p.scale]
        if post_cfg.bilateral:
            if p.scale not in hood_cache:
                hood_cache[p.scale] = two_hop(sc.graph)
            hoods = [h for h in (hood_cache[p.scale][i] for i in crop.ids)]
            inside = np.zeros(sc.seg.count, bool)
            inside[crop.ids] = True
            hoods = [h[inside[h]] for h in hoods]
            pr = bilateral_filter_spx(pr, sc.stats, sc.graph, post_cfg, crop.ids, hoods)
        mask = render_mask(pr, sc.seg, post_cfg.threshold, crop.ids)
        if post_cfg.morph:
            mask = morph_open_close(mask, post_cfg.morph_radius)
        out.append(RefinedProposal(mask, float(p.objectness), int(p.id)))
    if post_cfg.nms:
        out = nms_near_duplicates(out, post_cfg.nms_iou)
    return sorted(out, key=lambda r: (-r.score, r.source_id))
