"""Command line interface: ``spxrefine segment|train|refine|eval|synth|inspect``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import formats
from .classifier import TrainConfig
from .groundtruth import SynthConfig, synth_generate
from .metrics import MetricError, evaluate
from .pipeline import Sample, coarse_proposals, train_on_samples
from .refine import PostConfig, refine_image
from .segmentation import SCALES, REFERENCE_AREA, ScaleConfig, default_scale_counts, segment_to_target_count

logger = logging.getLogger("spxrefine")


class CliError(Exception):
    pass


def default_config() -> dict:
    return {
        "segmentation": {
            "method": "fh",
            "scales": list(SCALES),
            "counts": list(default_scale_counts()),
            "reference_area": REFERENCE_AREA,
        },
        "train": TrainConfig().to_json(),
        "post": PostConfig().to_json(),
        "synth": SynthConfig().to_json(),
    }


def _section(cls, data: dict | None):
    data = data or {}
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise CliError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def load_config(path) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        user = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(f"cannot read config {path}: {e}") from e
    for key, value in user.items():
        if key not in cfg:
            raise CliError(f"unknown config section {key!r}")
        cfg[key].update(value)
    return cfg


def scale_config(cfg: dict) -> ScaleConfig:
    s = cfg["segmentation"]
    return ScaleConfig(tuple(s["scales"]), tuple(s["counts"]), int(s["reference_area"]))


def post_config(cfg: dict, args) -> PostConfig:
    post = dict(cfg["post"])
    if getattr(args, "no_bilateral", False):
        post["bilateral"] = False
    if getattr(args, "no_morph", False):
        post["morph"] = False
    if getattr(args, "no_nms", False):
        post["nms"] = False
    if getattr(args, "nms_iou", None) is not None:
        post["nms_iou"] = args.nms_iou
    if getattr(args, "threshold", None) is not None:
        post["threshold"] = args.threshold
    return _section(PostConfig, post)


def load_samples(root, require_proposals: bool = True) -> list[Sample]:
    samples = []
    for img_path in formats.list_images(root):
        name = img_path.stem
        image = formats.read_image(img_path)
        prop_path = Path(root) / "proposals" / f"{name}.json"
        if not prop_path.exists():
            if require_proposals:
                logger.warning("no proposals for %s; skipped", name)
                continue
            proposals = []
        else:
            proposals = formats.read_proposals(prop_path)
        gts = formats.read_gts(root, name, image.shape[:2])
        samples.append(Sample(name, image, gts, proposals))
    return samples


def _pool_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# subcommands


def cmd_segment(args) -> int:
    cfg = load_config(args.config)
    image = formats.read_image(args.image)
    method = args.method or cfg["segmentation"]["method"]
    seg = segment_to_target_count(image, method, args.superpixels)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    formats.write_label_map(seg, out, out.with_suffix(".json"))
    print(f"{seg.count} superpixels -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    train_cfg = dict(cfg["train"])
    if args.seed is not None:
        train_cfg["seed"] = args.seed
    if args.epochs is not None:
        train_cfg["epochs"] = args.epochs
    tc = _section(TrainConfig, train_cfg)
    samples = load_samples(args.dataset)
    if not samples:
        raise CliError(f"dataset {args.dataset} contains no images with proposals")
    method = args.method or cfg["segmentation"]["method"]
    model = train_on_samples(samples, tc, scale_config(cfg), method)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    formats.save_model(model, out)
    log_path = out.with_name(out.name + ".loss.csv")
    with open(log_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss"])
        w.writerow([0, repr(model.stats["initial_loss"])])
        for i, loss in enumerate(model.stats["epoch_loss"], 1):
            w.writerow([i, repr(loss)])
    print(f"model -> {out} ({model.stats['rows']} rows, final loss {model.stats['final_loss']:.4f})")
    return 0


def _refine_one(job):
    sample, model, post, scales, method, coarse = job
    if coarse:
        return coarse_proposals(sample)
    return refine_image(sample.image, sample.proposals, model, post, scales, method)


def cmd_refine(args) -> int:
    cfg = load_config(args.config)
    post = post_config(cfg, args)
    scales = scale_config(cfg)
    method = args.method or cfg["segmentation"]["method"]
    model = None
    if not args.coarse:
        if args.model is None:
            raise CliError("--model is required unless --coarse is given")
        model = formats.load_model(args.model)
    target = Path(args.input)
    out = Path(args.out)
    if target.is_dir():
        samples = load_samples(target, require_proposals=False)
        jobs = [(s, model, post, scales, method, args.coarse) for s in samples]
        results = _pool_map(_refine_one, jobs, args.jobs)
        out.mkdir(parents=True, exist_ok=True)
        for s, refined in zip(samples, results):
            formats.write_refined(out / f"{s.name}.json", refined)
        print(f"refined {len(samples)} images -> {out}")
    else:
        if args.proposals is None:
            raise CliError("--proposals is required when refining a single image")
        image = formats.read_image(target)
        sample = Sample(target.stem, image, [], formats.read_proposals(args.proposals))
        refined = _refine_one((sample, model, post, scales, method, args.coarse))
        out.parent.mkdir(parents=True, exist_ok=True)
        formats.write_refined(out, refined)
        print(f"{len(refined)} proposals -> {out}")
    return 0


def cmd_eval(args) -> int:
    prop_dir, gt_dir = Path(args.proposals), Path(args.gt)
    files = sorted(prop_dir.glob("*.json"))
    if not files:
        raise CliError(f"no proposal files in {prop_dir}")
    names, props, gts = [], [], []
    for f in files:
        d = gt_dir / f.stem
        if not d.is_dir():
            raise CliError(f"missing ground truth for {f.stem} in {gt_dir}")
        refined = formats.read_refined(f)
        refined.sort(key=lambda r: (-r[1], r[2]))
        g = formats.read_gts(gt_dir.parent, f.stem) if gt_dir.name == "gt" else _read_gt_dir(d)
        names.append(f.stem)
        props.append([m for m, _, _ in refined])
        gts.append([x.mask for x in g])
    ns = sorted(set(args.at or [10, 100, 1000]))
    try:
        report = evaluate(props, gts, ns=ns, size_n=100 if 100 in ns else ns[-1], names=names)
    except MetricError as e:
        raise CliError(str(e)) from e
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_json(), indent=2) + "\n")
    with open(out.with_suffix(".csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "value"])
        w.writerows(report.csv_rows())
    for k, v in report.to_json().items():
        if k != "per_image":
            print(f"{k}: {v}")
    return 0


def _read_gt_dir(d: Path):
    from .groundtruth import GtObject

    out = []
    for k, f in enumerate(sorted(d.glob("*.png"))):
        m = formats.read_mask(f)
        if m.any():
            out.append(GtObject(m, k))
    return out


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    synth = dict(cfg["synth"])
    if args.seed is not None:
        synth["seed"] = args.seed
    if args.images is not None:
        synth["n_images"] = args.images
    sc = _section(SynthConfig, synth)
    root = Path(args.out)
    try:
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "proposals").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError(f"cannot write to {root}: {e}") from e
    data = synth_generate(sc, scale_config(cfg))
    for s in data:
        formats.write_image(root / "images" / f"{s.name}.png", s.image)
        formats.write_gts(root, s.name, s.gts)
        formats.write_proposals(root / "proposals" / f"{s.name}.json", s.proposals)
    (root / "synth.json").write_text(json.dumps(sc.to_json(), indent=2, sort_keys=True) + "\n")
    print(f"{len(data)} images, {sum(len(s.gts) for s in data)} objects -> {root}")
    return 0


def cmd_inspect(args) -> int:
    from .inspect import overlay

    image = formats.read_image(args.image)
    masks = load_any_proposals(args.proposals, image.shape[:2])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    formats.write_image(out, overlay(image, masks))
    print(f"{len(masks)} proposals -> {out}")
    return 0


def load_any_proposals(path, shape) -> list[np.ndarray]:
    """Masks from either a refined (RLE) or a coarse proposal file."""
    data = json.loads(Path(path).read_text())
    if data and "rle" in data[0]:
        return [m for m, _, _ in formats.read_refined(path)]
    from .groundtruth import coarse_mask

    props = [formats.CoarseProposal.from_json(d) for d in data]
    return [coarse_mask(p, *shape) for p in props]


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spxrefine", description=__doc__)
    ap.add_argument("--print-default-config", action="store_true", help="print the default JSON config and exit")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", help="JSON config file (see --print-default-config)")
        p.add_argument("--method", choices=("fh", "slic"), help="superpixel method")

    p = sub.add_parser("segment", help="superpixel label map for one image")
    p.add_argument("image")
    p.add_argument("--superpixels", type=int, default=500)
    p.add_argument("--out", required=True, help="16-bit label PNG; a .json header is written alongside")
    common(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", help="train projection + classifier on a dataset")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("refine", help="refine coarse proposals of an image or dataset")
    p.add_argument("input", help="image file or dataset root")
    p.add_argument("--proposals", help="coarse proposal JSON (single-image mode)")
    p.add_argument("--model")
    p.add_argument("--out", required=True)
    p.add_argument("--no-bilateral", action="store_true")
    p.add_argument("--no-morph", action="store_true")
    p.add_argument("--no-nms", action="store_true")
    p.add_argument("--nms-iou", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--coarse", action="store_true", help="emit upsampled coarse masks (baseline)")
    p.add_argument("--jobs", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="AR, AR by size, BR and UE")
    p.add_argument("proposals", help="directory of refined <image>.json files")
    p.add_argument("gt", help="directory of <image>/<k>.png masks")
    p.add_argument("--at", type=int, action="append", choices=(10, 100, 1000))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--images", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="draw proposal contours over an image")
    p.add_argument("image")
    p.add_argument("proposals")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if args.print_default_config:
        print(json.dumps(default_config(), indent=2))
        return 0
    if args.command is None:
        ap.print_help()
        return 2
    try:
        return args.func(args)
    except (CliError, formats.FormatError, ValueError, KeyError, OSError) as e:
        print(f"spxrefine: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
