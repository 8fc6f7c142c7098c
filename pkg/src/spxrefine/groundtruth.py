"""Per-superpixel training labels (greedy optimal superpixel sets), an
exhaustive oracle for small instances, and a synthetic shapes dataset."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from skimage.transform import resize

from .pooling import MASK_SIZE, window_mask
from .sampling import CoarseProposal, SegCrop
from .segmentation import ScaleConfig, SuperpixelSegmentation

IMPROVE_TOL = 1e-12
BRUTE_FORCE_LIMIT = 20


class GroundTruthError(ValueError):
    pass


@dataclass
class GtObject:
    mask: np.ndarray
    id: int = 0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise GroundTruthError(f"ground-truth object {self.id} has an empty mask")

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass
class OptimalSet:
    ids: np.ndarray
    iou: float
    trace: list[float] = field(default_factory=list)


def _overlaps(seg: SuperpixelSegmentation, gt) -> tuple[np.ndarray, np.ndarray, int]:
    mask = gt.mask if isinstance(gt, GtObject) else np.asarray(gt, dtype=bool)
    if mask.shape != seg.shape:
        raise GroundTruthError(f"mask {mask.shape} does not match segmentation {seg.shape}")
    inter = np.bincount(seg.labels[mask], minlength=seg.count)
    return inter, seg.areas(), int(mask.sum())


def greedy_optimal_set(seg: SuperpixelSegmentation, gt) -> OptimalSet:
    """Grow a superpixel set while its IoU with ``gt`` strictly improves.

    Starts from every superpixel fully inside the object (or, if there is
    none, the single best-IoU superpixel) and then repeatedly adds the
    candidate with the largest IoU gain, lowest id first on ties.
    """
    inter, area, g = _overlaps(seg, gt)
    if g == 0 or inter.sum() == 0:
        raise GroundTruthError("ground truth does not overlap the image")
    chosen = np.zeros(seg.count, bool)
    contained = (inter == area) & (area > 0)
    if contained.any():
        chosen |= contained
    else:
        single = inter / (g + area - inter)
        chosen[int(np.argmax(single))] = True
    i_sum = int(inter[chosen].sum())
    a_sum = int(area[chosen].sum())
    iou = i_sum / (g + a_sum - i_sum)
    trace = [iou]
    cand = np.flatnonzero((inter > 0) & ~chosen)
    while len(cand):
        new_iou = (i_sum + inter[cand]) / (g + a_sum + area[cand] - i_sum - inter[cand])
        best = int(np.argmax(new_iou))  # first maximum = lowest id
        if new_iou[best] <= iou + IMPROVE_TOL:
            break
        j = cand[best]
        chosen[j] = True
        i_sum += int(inter[j])
        a_sum += int(area[j])
        iou = i_sum / (g + a_sum - i_sum)
        trace.append(iou)
        cand = np.delete(cand, best)
    return OptimalSet(np.flatnonzero(chosen), float(iou), trace)


def brute_force_optimal_set(seg: SuperpixelSegmentation, gt) -> OptimalSet:
    """Exhaustive maximum-IoU subset; ties go to the lexicographically
    smallest sorted id tuple."""
    if seg.count > BRUTE_FORCE_LIMIT:
        raise GroundTruthError(f"{seg.count} superpixels exceed the exhaustive limit of {BRUTE_FORCE_LIMIT}")
    inter, area, g = _overlaps(seg, gt)
    if g == 0:
        raise GroundTruthError("empty ground truth")
    n = seg.count
    codes = np.arange(1, 1 << n, dtype=np.int64)
    bits = ((codes[:, None] >> np.arange(n)) & 1).astype(np.int64)
    i = bits @ inter.astype(np.int64)
    u = g + bits @ area.astype(np.int64) - i
    ratio = i / u
    # float screen, then exact integer comparison among the near-ties
    near = np.flatnonzero(ratio >= ratio.max() - 1e-9)
    best_ids, best_num, best_den = (), 0, 1
    for k in near:
        ik, uk = int(i[k]), int(u[k])
        subset = tuple(int(j) for j in np.flatnonzero(bits[k]))
        lhs, rhs = ik * best_den, best_num * uk
        if lhs > rhs or (lhs == rhs and (not best_ids or subset < best_ids)):
            best_ids, best_num, best_den = subset, ik, uk
    return OptimalSet(np.array(best_ids, dtype=np.int64), best_num / best_den)


def labels_for_window(optimal: OptimalSet | np.ndarray, crop: SegCrop | np.ndarray) -> np.ndarray:
    ids = crop.ids if isinstance(crop, SegCrop) else np.asarray(crop)
    chosen = optimal.ids if isinstance(optimal, OptimalSet) else np.asarray(optimal)
    return np.isin(ids, chosen).astype(np.float64)


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass
class SynthConfig:
    n_images: int = 10
    height: int = 160
    width: int = 160
    shapes_per_image: int = 3
    min_radius: float = 15.0
    max_radius: float = 45.0
    noise: float = 0.03
    texture: float = 0.08
    degrade: bool = True
    coarse_grid: int = 10
    blur: float = 1.5  # Gaussian sigma on the 40x40 grid
    jitter: int = 2  # max shift on the 40x40 grid
    window_margin: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.height < 40 or self.width < 40:
            raise ValueError("synthetic images must be at least 40x40")
        if self.shapes_per_image < 1 or self.n_images < 0:
            raise ValueError("invalid image or shape count")
        if not 0 < self.min_radius <= self.max_radius:
            raise ValueError("invalid radius range")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class SynthImage:
    name: str
    image: np.ndarray  # uint8 (H, W, 3)
    gts: list[GtObject]
    proposals: list[CoarseProposal]


def _supersampled_coverage(inside, bbox, h, w, ss=4):
    """Fraction of each pixel covered by the shape, from ss x ss samples
    evaluated inside ``bbox`` only."""
    x0, y0, x1, y1 = bbox
    x0, y0 = max(0, int(np.floor(x0)) - 1), max(0, int(np.floor(y0)) - 1)
    x1, y1 = min(w, int(np.ceil(x1)) + 2), min(h, int(np.ceil(y1)) + 2)
    ys = y0 + (np.arange((y1 - y0) * ss) + 0.5) / ss - 0.5
    xs = x0 + (np.arange((x1 - x0) * ss) + 0.5) / ss - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    cov = np.zeros((h, w))
    sub = inside(xx, yy).astype(np.float64)
    cov[y0:y1, x0:x1] = sub.reshape(y1 - y0, ss, x1 - x0, ss).mean(axis=(1, 3))
    return cov


def _random_shape(rng, cfg: SynthConfig):
    """Inside-test of a random ellipse or convex polygon, with its bbox."""
    r = rng.uniform(cfg.min_radius, cfg.max_radius)
    cx = rng.uniform(r, cfg.width - 1 - r)
    cy = rng.uniform(r, cfg.height - 1 - r)
    if rng.random() < 0.5:
        a = r
        b = r * rng.uniform(0.5, 1.0)
        t = rng.uniform(0, np.pi)
        c, s = np.cos(t), np.sin(t)

        def inside(x, y):
            u = (x - cx) * c + (y - cy) * s
            v = -(x - cx) * s + (y - cy) * c
            return (u / a) ** 2 + (v / b) ** 2 <= 1.0

    else:
        k = int(rng.integers(3, 8))
        ang = 2 * np.pi * (np.arange(k) + rng.uniform(-0.3, 0.3, size=k)) / k + rng.uniform(0, 2 * np.pi)
        rad = r * rng.uniform(0.7, 1.0, size=k)
        px, py = cx + rad * np.cos(ang), cy + rad * np.sin(ang)

        def inside(x, y):
            ok = np.ones(x.shape, bool)
            for i in range(k):
                x0, y0 = px[i], py[i]
                x1, y1 = px[(i + 1) % k], py[(i + 1) % k]
                ok &= (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) >= 0
            return ok

    return inside, (cx - r, cy - r, cx + r, cy + r)


def _background(rng, cfg: SynthConfig) -> np.ndarray:
    h, w = cfg.height, cfg.width
    base = rng.uniform(0.15, 0.85, size=3)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    slope = rng.uniform(-0.3, 0.3, size=(2, 3))
    img = base + xx[..., None] * slope[0] + yy[..., None] * slope[1]
    blobs = ndimage.gaussian_filter(rng.normal(0, 1, size=(h, w, 3)), sigma=(6, 6, 0))
    blobs /= blobs.std() + 1e-12
    return img + cfg.texture * blobs


def _degrade_mask(crop: np.ndarray, rng, cfg: SynthConfig) -> np.ndarray:
    m = resize(crop, (MASK_SIZE, MASK_SIZE), order=1, anti_aliasing=crop.shape[0] > MASK_SIZE, mode="edge")
    if not cfg.degrade:
        return np.clip(m, 0.0, 1.0)
    g = cfg.coarse_grid
    low = resize(m, (g, g), order=1, anti_aliasing=True, mode="edge")
    m = resize(low, (MASK_SIZE, MASK_SIZE), order=1, anti_aliasing=False, mode="edge")
    if cfg.blur > 0:
        m = ndimage.gaussian_filter(m, cfg.blur, mode="constant")
    if cfg.jitter > 0:
        dy, dx = rng.integers(-cfg.jitter, cfg.jitter + 1, size=2)
        m = ndimage.shift(m, (int(dy), int(dx)), order=0, mode="constant", cval=0.0)
    return np.clip(m, 0.0, 1.0)


def proposal_for_gt(mask: np.ndarray, rng, cfg: SynthConfig, scales: ScaleConfig, pid: int) -> CoarseProposal:
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    x0, x1 = xs.min(), xs.max() + 1
    y0, y1 = ys.min(), ys.max() + 1
    mx = cfg.window_margin * (x1 - x0) / 2
    my = cfg.window_margin * (y1 - y0) / 2
    win = (
        int(max(0, np.floor(x0 - mx))),
        int(max(0, np.floor(y0 - my))),
        int(min(w, np.ceil(x1 + mx))),
        int(min(h, np.ceil(y1 + my))),
    )
    crop = mask[win[1] : win[3], win[0] : win[2]].astype(np.float64)
    mask40 = np.round(_degrade_mask(crop, rng, cfg), 6)
    side = max(win[2] - win[0], win[3] - win[1])
    score = round(float(rng.uniform(0.5, 1.0)), 6)
    return CoarseProposal(win, scales.scale_for_window(side), mask40, score, pid)


def synth_image(rng, cfg: SynthConfig, scales: ScaleConfig, name: str) -> SynthImage:
    h, w = cfg.height, cfg.width
    img = _background(rng, cfg)
    occupied = np.zeros((h, w), bool)
    masks = []
    attempts = 0
    while len(masks) < cfg.shapes_per_image:
        attempts += 1
        if attempts > 500:
            raise GroundTruthError("could not place the requested shapes; use larger images or fewer shapes")
        inside, bbox = _random_shape(rng, cfg)
        cov = _supersampled_coverage(inside, bbox, h, w)
        mask = cov >= 0.5
        if mask.sum() < 16 or (ndimage.binary_dilation(mask, iterations=2) & occupied).any():
            continue
        # slivers are resampled
        if ndimage.binary_opening(mask, np.ones((3, 3), bool)).sum() < 0.9 * mask.sum():
            continue
        color = rng.uniform(0.0, 1.0, size=3)
        local = img[mask].mean(axis=0)
        if np.linalg.norm(color - local) < 0.35:
            continue
        tex = cfg.texture * 0.5 * ndimage.gaussian_filter(rng.normal(0, 1, size=(h, w, 3)), sigma=(3, 3, 0))
        img = img * (1 - cov[..., None]) + (color + tex) * cov[..., None]
        occupied |= mask
        masks.append(mask)
    img = img + rng.normal(0, cfg.noise, size=img.shape)
    image = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    gts = [GtObject(m, i) for i, m in enumerate(masks)]
    proposals = [proposal_for_gt(m, rng, cfg, scales, i) for i, m in enumerate(masks)]
    return SynthImage(name, image, gts, proposals)


def synth_generate(cfg: SynthConfig, scales: ScaleConfig | None = None) -> list[SynthImage]:
    """Deterministic synthetic dataset: one coarse proposal per object."""
    scales = scales or ScaleConfig()
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_images)
    return [
        synth_image(np.random.default_rng(s), cfg, scales, f"img{i:04d}")
        for i, s in enumerate(seeds)
    ]


def coarse_mask(p: CoarseProposal, height: int, width: int, threshold: float = 0.5) -> np.ndarray:
    """Baseline: the coarse mask bilinearly upsampled into its window."""
    return window_mask(p.mask40, p.window, height, width) >= threshold
