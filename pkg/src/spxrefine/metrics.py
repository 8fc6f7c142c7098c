"""Proposal evaluation: mask IoU, average recall (overall and by object size),
and boundary recall / undersegmentation error on joined label maps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
SMALL_AREA = 32**2
LARGE_AREA = 96**2


class MetricError(ValueError):
    pass


def mask_iou(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise MetricError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def iou_matrix(gts, proposals) -> np.ndarray:
    """(n_gt, n_proposal) IoU matrix computed on flattened masks."""
    if len(gts) == 0 or len(proposals) == 0:
        return np.zeros((len(gts), len(proposals)))
    g = np.stack([np.asarray(m, bool).ravel() for m in gts]).astype(np.float64)
    p = np.stack([np.asarray(m, bool).ravel() for m in proposals]).astype(np.float64)
    if g.shape[1] != p.shape[1]:
        raise MetricError("proposal and ground-truth masks differ in size")
    inter = g @ p.T
    union = g.sum(1)[:, None] + p.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def best_ious(proposals_per_image, gts_per_image, n: int | None = None) -> np.ndarray:
    """Best IoU of every ground-truth object against its image's top-``n``
    proposals (proposals must already be sorted by score)."""
    out = []
    for props, gts in zip(proposals_per_image, gts_per_image, strict=True):
        top = list(props)[:n] if n is not None else list(props)
        m = iou_matrix(gts, top)
        out.append(m.max(axis=1) if m.shape[1] else np.zeros(len(gts)))
    return np.concatenate(out) if out else np.zeros(0)


def recall_from_ious(ious: np.ndarray, thresholds=IOU_THRESHOLDS) -> float:
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        raise MetricError("average recall is undefined without ground-truth objects")
    # one division over integer hit counts, so the result is order-independent
    hits = sum(int(np.count_nonzero(ious >= t)) for t in thresholds)
    return hits / (len(thresholds) * ious.size)


def average_recall(proposals_per_image, gts_per_image, n: int, thresholds=IOU_THRESHOLDS) -> float:
    """AR@n pooled over every ground-truth object in the dataset."""
    return recall_from_ious(best_ious(proposals_per_image, gts_per_image, n), thresholds)


def size_class(area: int) -> str:
    if area < SMALL_AREA:
        return "small"
    if area <= LARGE_AREA:
        return "medium"
    return "large"


def ar_by_size(proposals_per_image, gts_per_image, n: int = 100, thresholds=IOU_THRESHOLDS):
    """(AR_small, AR_medium, AR_large); ``None`` for an empty size class."""
    ious = best_ious(proposals_per_image, gts_per_image, n)
    areas = np.array([int(np.count_nonzero(g)) for gts in gts_per_image for g in gts], dtype=np.int64)
    classes = np.array([size_class(a) for a in areas])
    out = []
    for name in ("small", "medium", "large"):
        sel = classes == name
        out.append(recall_from_ious(ious[sel], thresholds) if sel.any() else None)
    return tuple(out)


def join_best_proposals(proposals, gts) -> tuple[np.ndarray, np.ndarray]:
    """Label maps of the ground truth and of the best proposal per object.

    Objects are painted 1..k in input order over background 0, later ones
    overwriting earlier ones.
    """
    if len(gts) == 0:
        raise MetricError("at least one ground-truth object is required")
    shape = np.asarray(gts[0]).shape
    gt_map = np.zeros(shape, np.int32)
    pred_map = np.zeros(shape, np.int32)
    m = iou_matrix(gts, proposals)
    for k, g in enumerate(gts):
        gt_map[np.asarray(g, bool)] = k + 1
        if m.shape[1]:
            pred_map[np.asarray(proposals[int(np.argmax(m[k]))], bool)] = k + 1
    return pred_map, gt_map


def boundary_map(labels: np.ndarray) -> np.ndarray:
    """Pixels with a 4-neighbor of a different label (both sides marked)."""
    labels = np.asarray(labels)
    b = np.zeros(labels.shape, bool)
    dx = labels[:, 1:] != labels[:, :-1]
    dy = labels[1:, :] != labels[:-1, :]
    b[:, 1:] |= dx
    b[:, :-1] |= dx
    b[1:, :] |= dy
    b[:-1, :] |= dy
    return b


def boundary_recall(pred_map, gt_map, tol: int = 2) -> float:
    pred_map = np.asarray(pred_map)
    gt_map = np.asarray(gt_map)
    if pred_map.shape != gt_map.shape:
        raise MetricError("label maps differ in size")
    gb = boundary_map(gt_map)
    n = np.count_nonzero(gb)
    if n == 0:
        return 1.0
    pb = boundary_map(pred_map)
    if tol > 0:
        pb = ndimage.binary_dilation(pb, np.ones((2 * tol + 1, 2 * tol + 1), bool))
    return np.count_nonzero(gb & pb) / n


def undersegmentation_error(pred_map, gt_map) -> float:
    """Corrected undersegmentation error: every predicted region S meeting a
    ground-truth region G costs min(|S & G|, |S - G|)."""
    pred_map = np.asarray(pred_map)
    gt_map = np.asarray(gt_map)
    if pred_map.shape != gt_map.shape:
        raise MetricError("label maps differ in size")
    _, p = np.unique(pred_map, return_inverse=True)
    _, g = np.unique(gt_map, return_inverse=True)
    p, g = p.ravel(), g.ravel()
    table = np.zeros((g.max() + 1, p.max() + 1), np.int64)
    np.add.at(table, (g, p), 1)
    s_area = table.sum(axis=0)
    cost = np.minimum(table, s_area[None, :] - table)
    return float(cost[table > 0].sum() / pred_map.size)


@dataclass
class EvalReport:
    ar: dict[int, float]
    ar_small: float | None
    ar_medium: float | None
    ar_large: float | None
    br: float
    ue: float
    size_n: int = 100
    n_images: int = 0
    n_gts: int = 0
    n_proposals: int = 0
    per_image: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            **{f"AR@{k}": v for k, v in sorted(self.ar.items())},
            f"AR_S@{self.size_n}": self.ar_small,
            f"AR_M@{self.size_n}": self.ar_medium,
            f"AR_L@{self.size_n}": self.ar_large,
            "BR": self.br,
            "UE": self.ue,
            "images": self.n_images,
            "gts": self.n_gts,
            "proposals": self.n_proposals,
            "per_image": self.per_image,
        }

    def csv_rows(self) -> list[tuple[str, str]]:
        d = self.to_json()
        return [(k, "" if v is None else repr(v)) for k, v in d.items() if k != "per_image"]


def evaluate(proposals_per_image, gts_per_image, ns=(10, 100, 1000), size_n=100, tol=2, names=None) -> EvalReport:
    """AR@n for every n, AR by size at ``size_n``, and BR/UE averaged over
    images of the joined best-proposal maps."""
    proposals_per_image = [list(p) for p in proposals_per_image]
    gts_per_image = [list(g) for g in gts_per_image]
    if sum(len(g) for g in gts_per_image) == 0:
        raise MetricError("no ground-truth objects to evaluate against")
    ar = {int(n): average_recall(proposals_per_image, gts_per_image, n) for n in ns}
    s, m, l = ar_by_size(proposals_per_image, gts_per_image, size_n)
    per_image, brs, ues = [], [], []
    for i, (props, gts) in enumerate(zip(proposals_per_image, gts_per_image)):
        if not gts:
            continue
        pm, gm = join_best_proposals(props, gts)
        br, ue = boundary_recall(pm, gm, tol), undersegmentation_error(pm, gm)
        brs.append(br)
        ues.append(ue)
        per_image.append({
            "image": names[i] if names else i,
            "BR": br,
            "UE": ue,
            "best_iou": best_ious([props], [gts]).tolist(),
        })
    return EvalReport(
        ar, s, m, l, float(np.mean(brs)), float(np.mean(ues)), size_n,
        len(gts_per_image), sum(len(g) for g in gts_per_image),
        sum(len(p) for p in proposals_per_image), per_image,
    )
