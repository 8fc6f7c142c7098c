"""Independent reference implementations used by several test modules."""

import itertools

import numpy as np

from spxrefine.classifier import bce_loss, chain_gradients, mlp_forward, mlp_init, MlpParams
from spxrefine.featurizer import LinearProjection, raw_feature_stack
from spxrefine.pooling import pool_mean_backward, pool_mean_forward
from spxrefine.segmentation import SuperpixelSegmentation, relabel_first_appearance


def average_recall_loops(props_per_image, gts_per_image, n, thresholds):
    """AR by explicit loops over GTs x proposals x thresholds, in exact
    integer arithmetic."""
    hits = [0] * len(thresholds)
    total = 0
    for props, gts in zip(props_per_image, gts_per_image):
        top = props[:n]
        for g in gts:
            total += 1
            for t_idx, t in enumerate(thresholds):
                for p in top:
                    inter = int(np.logical_and(g, p).sum())
                    union = int(np.logical_or(g, p).sum())
                    # inter/union >= t with t = k/100, compared in integers
                    if union and inter * 100 >= round(t * 100) * union:
                        hits[t_idx] += 1
                        break
    return sum(hits) / (len(thresholds) * total)


def brute_iou_subsets(labels, gt):
    """Best IoU over all nonempty superpixel subsets (exact fractions)."""
    from fractions import Fraction

    ids = np.unique(labels)
    best = Fraction(0)
    for r in range(1, len(ids) + 1):
        for sub in itertools.combinations(ids, r):
            m = np.isin(labels, sub)
            i = int((m & gt).sum())
            u = int((m | gt).sum())
            best = max(best, Fraction(i, u))
    return best


def chain_instance(seed: int, size: int = 8, n_spx: int = 4, widths=(6, 5), d_out=3):
    """Tiny image, <= n_spx superpixels and a random model for the full-chain
    gradient check."""
    r = np.random.default_rng(seed)
    image = r.integers(0, 256, size=(size, size, 3)).astype(np.uint8)
    pts = r.uniform(0, size, size=(n_spx, 2))
    yy, xx = np.mgrid[0:size, 0:size]
    d = (yy[..., None] - pts[:, 0]) ** 2 + (xx[..., None] - pts[:, 1]) ** 2
    lab, count = relabel_first_appearance(np.argmin(d, axis=2))
    seg = SuperpixelSegmentation(lab, count)
    fmap = raw_feature_stack(image)
    proj = LinearProjection(r.normal(0, 0.5, size=(d_out, fmap.shape[0])), r.normal(0, 0.1, size=d_out))
    mlp = mlp_init(widths, d_out + 1, seed)
    mlp = MlpParams(mlp.weights, [r.normal(0, 0.1, size=b.shape) for b in mlp.biases])
    prior = r.uniform(size=count)
    y = r.integers(0, 2, size=count).astype(np.float64)
    return seg, fmap, proj, mlp, prior, y


def chain_loss(seg, fmap, proj, mlp, prior, y):
    raw = pool_mean_forward(fmap, seg)
    rows = np.concatenate([prior[:, None], raw @ proj.weight.T + proj.bias], axis=1)
    return bce_loss(mlp_forward(mlp, rows), y)


def chain_relative_errors(seed: int, h: float = 1e-6) -> dict[str, float]:
    """Norm-wise relative error between analytic and central-difference
    gradients for every parameter group and the per-pixel feature map."""
    seg, fmap, proj, mlp, prior, y = chain_instance(seed)
    raw = pool_mean_forward(fmap, seg)
    _, gw, gb, g, graw = chain_gradients(proj, mlp, prior, raw, y)
    gmap = pool_mean_backward(graw, seg)

    def fd(arr, rebuild):
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            up, dn = arr.copy(), arr.copy()
            up[idx] += h
            dn[idx] -= h
            num[idx] = (chain_loss(*rebuild(up)) - chain_loss(*rebuild(dn))) / (2 * h)
        return num

    def rel(a, n):
        return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12))

    errs = {
        "proj_weight": rel(gw, fd(proj.weight, lambda a: (seg, fmap, LinearProjection(a, proj.bias), mlp, prior, y))),
        "proj_bias": rel(gb, fd(proj.bias, lambda a: (seg, fmap, LinearProjection(proj.weight, a), mlp, prior, y))),
        "feature_map": rel(gmap, fd(fmap, lambda a: (seg, a, proj, mlp, prior, y))),
    }
    for l in range(len(mlp.weights)):
        def rw(a, l=l):
            w = [x.copy() for x in mlp.weights]
            w[l] = a
            return seg, fmap, proj, MlpParams(w, mlp.biases), prior, y

        def rb(a, l=l):
            b = [x.copy() for x in mlp.biases]
            b[l] = a
            return seg, fmap, proj, MlpParams(mlp.weights, b), prior, y

        errs[f"mlp_w{l}"] = rel(g.weights[l], fd(mlp.weights[l], rw))
        errs[f"mlp_b{l}"] = rel(g.biases[l], fd(mlp.biases[l], rb))
    return errs
