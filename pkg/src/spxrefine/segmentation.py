"""Superpixel oversegmentation (Felzenszwalb-Huttenlocher and SLIC), region
statistics and adjacency."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage
from skimage.color import rgb2lab

logger = logging.getLogger(__name__)

SCALES = (8, 16, 24, 32, 48, 64, 96, 128)
# Reference image area the per-scale counts are quoted for (a typical
# 640x480 COCO image); counts are rescaled to the actual image area.
REFERENCE_AREA = 640 * 480
MAX_LABELS = 65535


class SegmentationError(ValueError):
    """Invalid input to a segmentation routine."""


@dataclass(frozen=True)
class SuperpixelSegmentation:
    labels: np.ndarray
    count: int
    method: str = "fh"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def areas(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.count)

    def header(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "count": self.count,
            "method": self.method,
            "params": self.params,
        }


@dataclass(frozen=True)
class RegionStats:
    mean_color: np.ndarray  # (n, 3) CIELAB
    centroid: np.ndarray  # (n, 2) as (x, y), pixel-center coordinates
    area: np.ndarray  # (n,)
    bbox: np.ndarray  # (n, 4) as (x0, y0, x1, y1), half-open


@dataclass(frozen=True)
class AdjacencyGraph:
    """CSR neighbor lists; ``indices[indptr[i]:indptr[i+1]]`` are sorted."""

    indptr: np.ndarray
    indices: np.ndarray

    @property
    def count(self) -> int:
        return len(self.indptr) - 1

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def to_lists(self) -> list[list[int]]:
        return [self.neighbors(i).tolist() for i in range(self.count)]


@dataclass(frozen=True)
class ScaleConfig:
    """Downscale factors and the superpixel count targeted for each.

    Counts are quoted for a ``REFERENCE_AREA`` image; use
    :meth:`target_for` to get the count for an actual image.
    """

    scales: tuple[int, ...] = SCALES
    counts: tuple[int, ...] = ()
    reference_area: int = REFERENCE_AREA

    def __post_init__(self):
        counts = self.counts or default_scale_counts(len(self.scales))
        counts = tuple(int(c) for c in counts)
        if len(counts) != len(self.scales):
            raise ValueError("one target count per scale is required")
        if any(c < 1 for c in counts):
            raise ValueError("superpixel counts must be >= 1")
        if any(b >= a for a, b in zip(counts, counts[1:])):
            raise ValueError("counts must strictly decrease with the downscale factor")
        if list(self.scales) != sorted(set(self.scales)):
            raise ValueError("scales must be strictly increasing")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))

    def count_for(self, scale: int) -> int:
        try:
            return self.counts[self.scales.index(scale)]
        except ValueError:
            raise KeyError(f"unknown scale {scale}") from None

    def target_for(self, scale: int, height: int, width: int) -> int:
        n = self.count_for(scale) * (height * width) / self.reference_area
        return int(min(max(1, round(n)), height * width))

    def scale_for_window(self, side: float) -> int:
        """Smallest scale whose nominal window side (10 cells) covers ``side``."""
        for s in self.scales:
            if 10 * s >= side:
                return s
        return self.scales[-1]


def default_scale_counts(n_scales: int = len(SCALES), finest=8000, coarsest=500):
    if n_scales == 1:
        return (finest,)
    return tuple(
        int(round(finest + (coarsest - finest) * i / (n_scales - 1)))
        for i in range(n_scales)
    )


def as_float_image(image) -> np.ndarray:
    """RGB image as float64 in [0, 1], shape (H, W, 3)."""
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] not in (3, 4):
        raise SegmentationError(f"expected an RGB image, got shape {img.shape}")
    img = img[:, :, :3]
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise SegmentationError("zero-sized image")
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    if img.dtype == np.uint16:
        return img.astype(np.float64) / 65535.0
    return img.astype(np.float64)


def relabel_first_appearance(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Compact ids to [0, count) ordered by first raster-order appearance."""
    flat = labels.ravel()
    uniq, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[inverse].reshape(labels.shape).astype(np.int32), len(uniq)


# ---------------------------------------------------------------------------
# Felzenszwalb-Huttenlocher


@numba.njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@numba.njit(cache=True)
def _fh_components(a, b, w, n, k, min_size):
    parent = np.arange(n)
    rank = np.zeros(n, np.int32)
    size = np.ones(n, np.int64)
    thresh = np.full(n, k)
    for e in range(len(w)):
        ra = _find(parent, a[e])
        rb = _find(parent, b[e])
        if ra == rb:
            continue
        if w[e] <= thresh[ra] and w[e] <= thresh[rb]:
            if rank[ra] < rank[rb]:
                ra, rb = rb, ra
            parent[rb] = ra
            if rank[ra] == rank[rb]:
                rank[ra] += 1
            size[ra] += size[rb]
            thresh[ra] = w[e] + k / size[ra]
    if min_size > 1:
        for e in range(len(w)):
            ra = _find(parent, a[e])
            rb = _find(parent, b[e])
            if ra != rb and (size[ra] < min_size or size[rb] < min_size):
                if rank[ra] < rank[rb]:
                    ra, rb = rb, ra
                parent[rb] = ra
                if rank[ra] == rank[rb]:
                    rank[ra] += 1
                size[ra] += size[rb]
    out = np.empty(n, np.int64)
    for i in range(n):
        out[i] = _find(parent, i)
    return out


@dataclass(frozen=True)
class _FHGraph:
    a: np.ndarray
    b: np.ndarray
    w: np.ndarray
    shape: tuple[int, int]


def _fh_graph(image: np.ndarray, sigma: float) -> _FHGraph:
    img = as_float_image(image)
    if sigma > 0:
        img = np.stack(
            [ndimage.gaussian_filter(img[:, :, c], sigma, mode="nearest") for c in range(3)],
            axis=2,
        )
    h, w = img.shape[:2]
    idx = np.arange(h * w).reshape(h, w)
    pairs = (
        (idx[:, :-1], idx[:, 1:], img[:, :-1], img[:, 1:]),  # right
        (idx[:-1, :], idx[1:, :], img[:-1, :], img[1:, :]),  # down
        (idx[:-1, :-1], idx[1:, 1:], img[:-1, :-1], img[1:, 1:]),  # down-right
        (idx[1:, :-1], idx[:-1, 1:], img[1:, :-1], img[:-1, 1:]),  # up-right
    )
    a = np.concatenate([p[0].ravel() for p in pairs])
    b = np.concatenate([p[1].ravel() for p in pairs])
    wt = np.concatenate([np.sqrt(((p[2] - p[3]) ** 2).sum(axis=2)).ravel() for p in pairs])
    order = np.argsort(wt, kind="stable")
    return _FHGraph(a[order], b[order], wt[order], (h, w))


def _fh_from_graph(graph: _FHGraph, k: float, min_size: int, params: dict):
    h, w = graph.shape
    roots = _fh_components(graph.a, graph.b, graph.w, h * w, float(k), int(min_size))
    labels, count = relabel_first_appearance(roots.reshape(h, w))
    return SuperpixelSegmentation(labels, count, "fh", params)


def fh_segment(image, k: float = 1.0, min_size: int = 20, sigma: float = 0.8):
    """Felzenszwalb-Huttenlocher graph segmentation.

    Edge weights are Euclidean RGB distances on a [0, 1] intensity scale over
    the 8-connected pixel grid; equal weights are processed in edge-index
    order, so the result is deterministic.
    """
    if k <= 0:
        raise SegmentationError("k must be positive")
    if min_size < 1:
        raise SegmentationError("min_size must be >= 1")
    if sigma < 0:
        raise SegmentationError("sigma must be >= 0")
    graph = _fh_graph(image, sigma)
    params = {"k": float(k), "min_size": int(min_size), "sigma": float(sigma)}
    return _fh_from_graph(graph, k, min_size, params)


# ---------------------------------------------------------------------------
# SLIC


def _grid_shape(n: int, h: int, w: int) -> tuple[int, int]:
    """(rows, cols) of seed cells with rows*cols close to n and square cells."""
    best = None
    for cols in range(1, min(n, w) + 1):
        rows = max(1, min(h, round(n / cols)))
        miss = abs(rows * cols - n) / n
        aspect = abs(math.log((h / rows) / (w / cols)))
        key = (miss > 0.1, miss if miss > 0.1 else 0.0, aspect, cols)
        if best is None or key < best[0]:
            best = (key, (rows, cols))
    return best[1]


@numba.njit(cache=True)
def _slic_assign(lab, cy, cx, clab, radius, spatial_w, prev):
    h, w = lab.shape[:2]
    dist = np.full((h, w), np.inf)
    labels = prev.copy()
    for c in range(len(cy)):
        y0 = max(0, int(cy[c] - radius))
        y1 = min(h, int(cy[c] + radius) + 1)
        x0 = max(0, int(cx[c] - radius))
        x1 = min(w, int(cx[c] + radius) + 1)
        for y in range(y0, y1):
            for x in range(x0, x1):
                dc = 0.0
                for ch in range(3):
                    d = lab[y, x, ch] - clab[c, ch]
                    dc += d * d
                ds = (y - cy[c]) ** 2 + (x - cx[c]) ** 2
                d = dc + ds * spatial_w
                if d < dist[y, x]:
                    dist[y, x] = d
                    labels[y, x] = c
    return labels


@numba.njit(cache=True)
def _components4(labels):
    """4-connected components of equal-label pixels; returns component ids."""
    h, w = labels.shape
    comp = np.full((h, w), -1, np.int64)
    stack = np.empty(h * w, np.int64)
    n = 0
    for sy in range(h):
        for sx in range(w):
            if comp[sy, sx] >= 0:
                continue
            lab = labels[sy, sx]
            comp[sy, sx] = n
            top = 0
            stack[0] = sy * w + sx
            top = 1
            while top > 0:
                top -= 1
                p = stack[top]
                y = p // w
                x = p % w
                if y > 0 and comp[y - 1, x] < 0 and labels[y - 1, x] == lab:
                    comp[y - 1, x] = n
                    stack[top] = p - w
                    top += 1
                if y < h - 1 and comp[y + 1, x] < 0 and labels[y + 1, x] == lab:
                    comp[y + 1, x] = n
                    stack[top] = p + w
                    top += 1
                if x > 0 and comp[y, x - 1] < 0 and labels[y, x - 1] == lab:
                    comp[y, x - 1] = n
                    stack[top] = p - 1
                    top += 1
                if x < w - 1 and comp[y, x + 1] < 0 and labels[y, x + 1] == lab:
                    comp[y, x + 1] = n
                    stack[top] = p + 1
                    top += 1
            n += 1
    return comp, n


def _enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Keep the largest 4-connected piece of every label; absorb the other
    pieces into their largest neighboring region."""
    comp, n = _components4(labels)
    sizes = np.bincount(comp.ravel(), minlength=n)
    owner = np.zeros(n, np.int64)
    owner[comp.ravel()] = labels.ravel()
    # main piece per label: largest, then lowest component id
    order = np.lexsort((np.arange(n), -sizes, owner))
    is_main = np.zeros(n, bool)
    is_main[order[np.r_[True, owner[order][1:] != owner[order][:-1]]]] = True
    if is_main.all():
        return labels

    pairs = _pairs4(comp)
    nbrs: dict[int, set[int]] = {i: set() for i in range(n)}
    for p, q in pairs:
        nbrs[p].add(q)
        nbrs[q].add(p)

    parent = np.arange(n)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    area = sizes.copy()
    for o in sorted(np.flatnonzero(~is_main), key=lambda i: (sizes[i], i)):
        ro = find(o)
        cands = {find(q) for q in nbrs[ro]} - {ro}
        if not cands:
            continue
        target = min(cands, key=lambda c: (-area[c], c))
        parent[ro] = target
        area[target] += area[ro]
        nbrs[target] |= nbrs[ro]
    roots = np.array([find(i) for i in range(n)])
    final = owner[roots]
    return final[comp]


def _pairs4(labels: np.ndarray) -> np.ndarray:
    """Unique unordered label pairs adjacent in the 4-neighborhood."""
    h = np.stack([labels[:, :-1].ravel(), labels[:, 1:].ravel()], axis=1)
    v = np.stack([labels[:-1, :].ravel(), labels[1:, :].ravel()], axis=1)
    p = np.concatenate([h, v])
    p = p[p[:, 0] != p[:, 1]]
    p.sort(axis=1)
    if len(p) == 0:
        return p.reshape(0, 2)
    return np.unique(p, axis=0)


def slic_segment(image, n_target: int, compactness: float = 10.0, max_iters: int = 10):
    """SLIC: localized k-means in (CIELAB, x, y) followed by connectivity
    enforcement."""
    img = as_float_image(image)
    h, w = img.shape[:2]
    if n_target < 1:
        raise SegmentationError("n_target must be >= 1")
    if n_target > h * w:
        raise SegmentationError("n_target exceeds the pixel count")
    if compactness <= 0:
        raise SegmentationError("compactness must be positive")
    lab = rgb2lab(img)
    rows, cols = _grid_shape(n_target, h, w)
    cell_h, cell_w = h / rows, w / cols
    gy, gx = np.meshgrid((np.arange(rows) + 0.5) * cell_h, (np.arange(cols) + 0.5) * cell_w, indexing="ij")
    cy, cx = gy.ravel() - 0.5, gx.ravel() - 0.5
    yi = np.clip(np.round(cy).astype(int), 0, h - 1)
    xi = np.clip(np.round(cx).astype(int), 0, w - 1)
    clab = lab[yi, xi].copy()
    step = math.sqrt(h * w / (rows * cols))
    radius = float(math.ceil(max(cell_h, cell_w)))
    spatial_w = (compactness / step) ** 2
    yy, xx = np.mgrid[0:h, 0:w]
    # pixels outside every search window keep their previous label
    labels = (np.minimum((yy / cell_h).astype(np.int64), rows - 1) * cols
              + np.minimum((xx / cell_w).astype(np.int64), cols - 1))
    for _ in range(max(1, max_iters)):
        labels = _slic_assign(lab, cy, cx, clab, radius, spatial_w, labels)
        flat = labels.ravel()
        cnt = np.bincount(flat, minlength=len(cy)).astype(float)
        live = cnt > 0
        for ch in range(3):
            s = np.bincount(flat, weights=lab[:, :, ch].ravel(), minlength=len(cy))
            clab[live, ch] = s[live] / cnt[live]
        cy[live] = np.bincount(flat, weights=yy.ravel(), minlength=len(cy))[live] / cnt[live]
        cx[live] = np.bincount(flat, weights=xx.ravel(), minlength=len(cy))[live] / cnt[live]
    labels = _enforce_connectivity(labels)
    labels, count = relabel_first_appearance(labels)
    params = {"n_target": int(n_target), "compactness": float(compactness), "max_iters": int(max_iters)}
    return SuperpixelSegmentation(labels, count, "slic", params)


# ---------------------------------------------------------------------------
# Count targeting


def fh_min_size(n_target: int, n_pixels: int) -> int:
    # 20 px at 8000 superpixels, scaled by count, but never more than a
    # quarter of the mean superpixel area so the target stays reachable.
    by_count = 20 * 8000 / n_target
    by_area = 0.25 * n_pixels / n_target
    return max(1, int(round(min(by_count, by_area))))


def segment_to_target_count(
    image,
    method: str = "fh",
    n_target: int = 500,
    *,
    sigma: float = 0.8,
    min_size: int | None = None,
    compactness: float = 10.0,
    tolerance: float = 0.2,
    max_probes: int = 20,
):
    """Segment with approximately ``n_target`` superpixels.

    For FH the threshold ``k`` is bisected in log space (the count falls as
    ``k`` grows); the probe closest to the target is returned.
    """
    if n_target < 1:
        raise SegmentationError("n_target must be >= 1")
    method = method.lower()
    if method == "slic":
        return slic_segment(image, n_target, compactness=compactness)
    if method != "fh":
        raise SegmentationError(f"unknown segmentation method {method!r}")

    img = as_float_image(image)
    h, w = img.shape[:2]
    if min_size is None:
        min_size = fh_min_size(n_target, h * w)
    graph = _fh_graph(img, sigma)
    # with k/|C| >= max edge weight every edge merges
    k_hi = math.sqrt(3.0) * h * w * 1.01
    k_lo = 1e-4

    def probe(k):
        params = {"k": k, "min_size": int(min_size), "sigma": float(sigma), "n_target": int(n_target)}
        return _fh_from_graph(graph, k, min_size, params)

    if n_target == 1:
        return probe(k_hi)

    best = None
    lo, hi = math.log(k_lo), math.log(k_hi)
    for _ in range(max_probes):
        mid = 0.5 * (lo + hi)
        seg = probe(float(np.exp(mid)))
        err = abs(seg.count - n_target) / n_target
        if best is None or (err, seg.params["k"]) < best[0]:
            best = ((err, seg.params["k"]), seg)
        if err <= tolerance / 4:
            break
        if seg.count > n_target:
            lo = mid
        else:
            hi = mid
    seg = best[1]
    if abs(seg.count - n_target) > tolerance * n_target:
        logger.debug("FH count %d misses target %d", seg.count, n_target)
    return seg


# ---------------------------------------------------------------------------
# Region statistics and adjacency


def region_stats(seg: SuperpixelSegmentation, image) -> RegionStats:
    img = as_float_image(image)
    if img.shape[:2] != seg.shape:
        raise SegmentationError(f"segmentation {seg.shape} does not match image {img.shape[:2]}")
    lab = rgb2lab(img)
    flat = seg.labels.ravel()
    n = seg.count
    area = np.bincount(flat, minlength=n)
    mean_color = np.stack(
        [np.bincount(flat, weights=lab[:, :, c].ravel(), minlength=n) / area for c in range(3)],
        axis=1,
    )
    yy, xx = np.mgrid[0 : seg.height, 0 : seg.width]
    centroid = np.stack(
        [
            np.bincount(flat, weights=xx.ravel(), minlength=n) / area,
            np.bincount(flat, weights=yy.ravel(), minlength=n) / area,
        ],
        axis=1,
    )
    return RegionStats(mean_color, centroid, area, region_bboxes(seg))


def region_bboxes(seg: SuperpixelSegmentation) -> np.ndarray:
    bbox = np.empty((seg.count, 4), np.int64)
    for i, sl in enumerate(ndimage.find_objects(seg.labels + 1)):
        bbox[i] = (sl[1].start, sl[0].start, sl[1].stop, sl[0].stop)
    return bbox


def adjacency(seg: SuperpixelSegmentation) -> AdjacencyGraph:
    pairs = _pairs4(seg.labels)
    both = np.concatenate([pairs, pairs[:, ::-1]]) if len(pairs) else pairs
    order = np.lexsort((both[:, 1], both[:, 0])) if len(both) else np.array([], int)
    both = both[order]
    counts = np.bincount(both[:, 0], minlength=seg.count) if len(both) else np.zeros(seg.count, int)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return AdjacencyGraph(indptr, both[:, 1].astype(np.int64) if len(both) else np.zeros(0, np.int64))


def is_valid_partition(seg: SuperpixelSegmentation) -> bool:
    lab = seg.labels
    if lab.min() < 0 or lab.max() >= seg.count:
        return False
    return bool((seg.areas() > 0).all())


def connected_pieces(seg: SuperpixelSegmentation, connectivity: int = 8) -> np.ndarray:
    """Number of connected pieces per superpixel (1 everywhere for a valid
    segmentation)."""
    structure = ndimage.generate_binary_structure(2, 2 if connectivity == 8 else 1)
    pieces = np.zeros(seg.count, np.int64)
    for i, sl in enumerate(ndimage.find_objects(seg.labels + 1)):
        _, n = ndimage.label(seg.labels[sl] == i, structure=structure)
        pieces[i] = n
    return pieces
