"""On-disk formats: RLE masks, the model file, 16-bit label maps and the
dataset directory layout."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .classifier import MlpParams, TrainedModel
from .featurizer import LinearProjection
from .groundtruth import GtObject
from .sampling import CoarseProposal
from .segmentation import MAX_LABELS, SuperpixelSegmentation

MODEL_MAGIC = b"SPXM"
MODEL_VERSION = 1
IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".jpg", ".jpeg", ".bmp")


class FormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# RLE


def rle_encode(mask) -> dict:
    """Column-major run lengths, starting with a (possibly empty) zero run."""
    m = np.asarray(mask, dtype=bool)
    flat = m.ravel(order="F").astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return {"size": [int(m.shape[0]), int(m.shape[1])], "counts": [int(c) for c in counts]}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = (int(v) for v in rle["size"])
    counts = np.asarray(rle["counts"], dtype=np.int64)
    if counts.sum() != h * w:
        raise FormatError(f"RLE counts sum to {counts.sum()}, expected {h * w}")
    values = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(values, counts)
    return flat.reshape((h, w), order="F")


# ---------------------------------------------------------------------------
# model file: magic, uint32 header length, JSON header, float32 LE blob


def _param_arrays(model: TrainedModel) -> list[np.ndarray]:
    return [model.projection.weight, model.projection.bias, *model.mlp.arrays()]


def save_model(model: TrainedModel, path) -> None:
    arrays = _param_arrays(model)
    header = {
        "format_version": MODEL_VERSION,
        "feature_config": model.feature_config,
        "d_in": model.projection.d_in,
        "d_out": model.projection.d_out,
        "widths": list(model.mlp.widths),
        "threshold": model.threshold,
        "seed": model.seed,
        "layout": [list(a.shape) for a in arrays],
        "param_count": int(sum(a.size for a in arrays)),
        "training": model.stats,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        f.write(blob)


def load_model(path) -> TrainedModel:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise FormatError(f"{path} is not a model file")
    (hlen,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    if header.get("format_version") != MODEL_VERSION:
        raise FormatError(f"unsupported model format version {header.get('format_version')}")
    blob = np.frombuffer(data[8 + hlen :], dtype="<f4")
    d_in, d_out, widths = header["d_in"], header["d_out"], header["widths"]
    dims = [d_out + 1, *widths, 1]
    shapes = [(d_out, d_in), (d_out,)]
    for i, o in zip(dims[:-1], dims[1:]):
        shapes += [(o, i), (o,)]
    expected = sum(int(np.prod(s)) for s in shapes)
    if blob.size != expected or header.get("param_count") != expected:
        raise FormatError(f"parameter blob holds {blob.size} values, header implies {expected}")
    arrays, pos = [], 0
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(blob[pos : pos + n].astype(np.float64).reshape(s))
        pos += n
    proj = LinearProjection(arrays[0], arrays[1])
    mlp = MlpParams(arrays[2::2], arrays[3::2])
    return TrainedModel(
        proj, mlp, header["feature_config"], float(header["threshold"]), int(header["seed"]),
        header.get("training", {}),
    )


# ---------------------------------------------------------------------------
# images and label maps


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot read image {path}: {e}") from e


def write_image(path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L")) > 127
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot read mask {path}: {e}") from e


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.asarray(mask, bool).astype(np.uint8) * 255).save(path, format="PNG")


def write_label_map(seg: SuperpixelSegmentation, png_path, header_path=None) -> None:
    if seg.count > MAX_LABELS + 1:
        raise FormatError(f"{seg.count} superpixels do not fit a 16-bit label map")
    Image.fromarray(seg.labels.astype(np.uint16)).save(png_path, format="PNG")
    if header_path is not None:
        Path(header_path).write_text(json.dumps(seg.header(), sort_keys=True, indent=2) + "\n")


def read_label_map(png_path, header_path=None) -> SuperpixelSegmentation:
    with Image.open(png_path) as im:
        labels = np.asarray(im).astype(np.int32)
    header = {}
    if header_path is not None:
        header = json.loads(Path(header_path).read_text())
    count = int(header.get("count", labels.max() + 1))
    return SuperpixelSegmentation(labels, count, header.get("method", "fh"), header.get("params", {}))


# ---------------------------------------------------------------------------
# dataset layout: images/<name>.png, gt/<name>/<k>.png, proposals/<name>.json


def list_images(root) -> list[Path]:
    d = Path(root) / "images"
    if not d.is_dir():
        raise FormatError(f"{root} has no images/ directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def read_gts(root, name: str, shape=None) -> list[GtObject]:
    d = Path(root) / "gt" / name
    if not d.is_dir():
        return []
    files = sorted(d.glob("*.png"), key=lambda p: (int(p.stem) if p.stem.isdigit() else 10**9, p.stem))
    gts = []
    for k, f in enumerate(files):
        m = read_mask(f)
        if shape is not None and m.shape != tuple(shape):
            raise FormatError(f"mask {f} is {m.shape}, image is {tuple(shape)}")
        if m.any():
            gts.append(GtObject(m, int(f.stem) if f.stem.isdigit() else k))
    return gts


def write_gts(root, name: str, gts: list[GtObject]) -> None:
    d = Path(root) / "gt" / name
    d.mkdir(parents=True, exist_ok=True)
    for g in gts:
        write_mask(d / f"{g.id}.png", g.mask)


def read_proposals(path) -> list[CoarseProposal]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read proposals {path}: {e}") from e
    return [CoarseProposal.from_json(d) for d in data]


def write_proposals(path, proposals: list[CoarseProposal]) -> None:
    Path(path).write_text(json.dumps([p.to_json() for p in proposals]) + "\n")


def write_refined(path, refined) -> None:
    data = [{"rle": rle_encode(r.mask), "score": r.score, "source_id": r.source_id} for r in refined]
    Path(path).write_text(json.dumps(data) + "\n")


def read_refined(path) -> list[tuple[np.ndarray, float, int]]:
    data = json.loads(Path(path).read_text())
    return [(rle_decode(d["rle"]), float(d["score"]), int(d.get("source_id", -1))) for d in data]
