"""Superpixel classifier: a ReLU MLP with a sigmoid output over
[mask prior | projected features], trained jointly with the projection by
plain SGD on binary cross-entropy."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .featurizer import FEATURE_CONFIG, N_CHANNELS, LinearProjection, project_backward, project_forward

logger = logging.getLogger(__name__)

EPS = 1e-7
ARCHITECTURES = {
    "512-512-512": (512, 512, 512),
    "1024-1024-1024": (1024, 1024, 1024),
    "256-256-256": (256, 256, 256),
    "512-512-512-512": (512, 512, 512, 512),
    "512-512": (512, 512),
}


@dataclass
class MlpParams:
    weights: list[np.ndarray]  # layer l: (out, in)
    biases: list[np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.weights[:-1])

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def mlp_init(widths, input_dim: int, seed=0) -> MlpParams:
    """He-normal weights, zero biases."""
    widths = tuple(int(w) for w in widths)
    if not widths or input_dim < 1 or min(widths) < 1:
        raise ValueError("widths must be nonempty and all dimensions positive")
    rng = np.random.default_rng(seed)
    dims = (input_dim, *widths, 1)
    weights = [rng.normal(0.0, np.sqrt(2.0 / i), size=(o, i)) for i, o in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(o) for o in dims[1:]]
    return MlpParams(weights, biases)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_width(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.shape[1] != params.input_dim:
        raise ValueError(f"row width {x.shape[1]} != classifier input {params.input_dim}")
    return x


def _forward(params: MlpParams, x: np.ndarray):
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = z if l == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def mlp_forward(params: MlpParams, rows) -> np.ndarray:
    x = _check_width(params, rows)
    return sigmoid(_forward(params, x)[-1][:, 0])


def bce_loss(p, y) -> float:
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, 1 - EPS)
    y = np.asarray(y, dtype=np.float64)
    if p.size == 0:
        return 0.0
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray
    loss: float


def mlp_backward(params: MlpParams, rows, labels, w_spx: float = 1.0, pos_weight: float = 1.0) -> Gradients:
    """Exact gradients of ``w_spx * weighted mean BCE`` (with the clamp)."""
    x = _check_width(params, rows)
    y = np.asarray(labels, dtype=np.float64).ravel()
    n = len(y)
    acts = _forward(params, x)
    z = acts[-1][:, 0]
    p = sigmoid(z)
    pc = np.clip(p, EPS, 1 - EPS)
    cw = np.where(y > 0.5, pos_weight, 1.0)
    loss = w_spx * float(np.mean(-cw * (y * np.log(pc) + (1 - y) * np.log(1 - pc)))) if n else 0.0
    inside = (p > EPS) & (p < 1 - EPS)
    # d/dz of -[y ln p + (1-y) ln(1-p)] is p - y; zero where the clamp binds
    delta = (w_spx / max(n, 1)) * cw * np.where(inside, p - y, 0.0)
    delta = delta[:, None]
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for l in range(len(params.weights) - 1, -1, -1):
        gw[l] = delta.T @ acts[l]
        gb[l] = delta.sum(axis=0)
        delta = delta @ params.weights[l]
        if l > 0:
            delta = delta * (acts[l] > 0)
    return Gradients(gw, gb, delta, loss)


def sgd_step(params: MlpParams, grads: Gradients, lr: float) -> MlpParams:
    if len(grads.weights) != len(params.weights):
        raise ValueError("gradient does not match parameter layout")
    new_w, new_b = [], []
    for w, b, gw, gb in zip(params.weights, params.biases, grads.weights, grads.biases):
        if w.shape != gw.shape or b.shape != gb.shape:
            raise ValueError("gradient shape mismatch")
        new_w.append(w - lr * gw)
        new_b.append(b - lr * gb)
    return MlpParams(new_w, new_b)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    w_spx: float = 1.0
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    widths: tuple[int, ...] = (512, 512, 512)
    d_out: int = 64
    pos_weight: float = 1.0
    threshold: float = 0.5

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not self.widths:
            raise ValueError("at least one hidden layer is required")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_json(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


@dataclass
class TrainingSet:
    """Labeled rows: mask prior, raw (unprojected) pooled features, label."""

    prior: np.ndarray
    raw: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.prior)

    @classmethod
    def from_batches(cls, batches) -> "TrainingSet":
        batches = [b for b in batches if len(b)]
        if not batches:
            return cls(np.zeros(0), np.zeros((0, N_CHANNELS)), np.zeros(0))
        return cls(
            np.concatenate([b.prior for b in batches]),
            np.concatenate([b.features for b in batches]),
            np.concatenate([b.labels for b in batches]),
        )


@dataclass
class TrainedModel:
    projection: LinearProjection
    mlp: MlpParams
    feature_config: dict = field(default_factory=lambda: dict(FEATURE_CONFIG))
    threshold: float = 0.5
    seed: int = 0
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.projection.d_out + 1 != self.mlp.input_dim:
            raise ValueError("projection width + 1 must equal the classifier input width")

    def predict(self, prior, raw) -> np.ndarray:
        return mlp_forward(self.mlp, _rows(self.projection, prior, raw))


def _rows(proj, prior, raw):
    prior = np.asarray(prior, dtype=np.float64).reshape(-1, 1)
    return np.concatenate([prior, project_forward(raw, proj)], axis=1)


def chain_gradients(proj: LinearProjection, mlp: MlpParams, prior, raw, y, w_spx=1.0, pos_weight=1.0):
    """Loss and gradients of projection + classifier for raw pooled rows.

    Returns ``(loss, grad_proj_weight, grad_proj_bias, mlp_grads, grad_raw)``.
    """
    raw = np.asarray(raw, dtype=np.float64)
    g = mlp_backward(mlp, _rows(proj, prior, raw), y, w_spx, pos_weight)
    gw, gb, graw = project_backward(g.input[:, 1:], raw, proj)
    return g.loss, gw, gb, g, graw


def _as_float32(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32).astype(np.float64)


def dataset_loss(model_proj, model_mlp, data: TrainingSet, w_spx=1.0, chunk=8192) -> float:
    if len(data) == 0:
        return 0.0
    total = 0.0
    for s in range(0, len(data), chunk):
        sl = slice(s, s + chunk)
        p = mlp_forward(model_mlp, _rows(model_proj, data.prior[sl], data.raw[sl]))
        total += bce_loss(p, data.labels[sl]) * len(p)
    return w_spx * total / len(data)


def train(data: TrainingSet, config: TrainConfig | None = None, progress=None) -> TrainedModel:
    """Jointly fit projection and classifier with minibatch SGD.

    Deterministic for a fixed ``config.seed``. Parameters are rounded to
    float32 at the end so a saved model reproduces predictions exactly.
    """
    config = config or TrainConfig()
    if len(data) == 0:
        raise ValueError("empty training set")
    labels = np.asarray(data.labels, dtype=np.float64)
    if labels.min() == labels.max():
        logger.warning("training set contains a single class (%g)", labels[0])
    ss = np.random.SeedSequence(config.seed)
    proj_seed, mlp_seed, shuffle_seed = ss.spawn(3)
    proj = LinearProjection.init(data.raw.shape[1], config.d_out, np.random.default_rng(proj_seed))
    mlp = mlp_init(config.widths, config.d_out + 1, np.random.default_rng(mlp_seed))
    proj = LinearProjection(_as_float32(proj.weight), _as_float32(proj.bias))
    mlp = MlpParams([_as_float32(w) for w in mlp.weights], [_as_float32(b) for b in mlp.biases])
    rng = np.random.default_rng(shuffle_seed)

    initial = dataset_loss(proj, mlp, data, config.w_spx)
    epoch_loss = []
    n = len(data)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        running = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s : s + config.batch_size]
            loss, gw, gb, g, _ = chain_gradients(
                proj, mlp, data.prior[idx], data.raw[idx], labels[idx], config.w_spx, config.pos_weight
            )
            running += loss * len(idx)
            mlp = sgd_step(mlp, g, config.lr)
            proj = LinearProjection(proj.weight - config.lr * gw, proj.bias - config.lr * gb)
        epoch_loss.append(running / n)
        logger.info("epoch %d loss %.5f", epoch + 1, epoch_loss[-1])
        if progress is not None:
            progress(epoch + 1, epoch_loss[-1])

    proj = LinearProjection(_as_float32(proj.weight), _as_float32(proj.bias))
    mlp = MlpParams([_as_float32(w) for w in mlp.weights], [_as_float32(b) for b in mlp.biases])
    stats = {
        "rows": int(n),
        "positives": int((labels > 0.5).sum()),
        "initial_loss": initial,
        "epoch_loss": epoch_loss,
        "final_loss": dataset_loss(proj, mlp, data, config.w_spx),
        "config": config.to_json(),
    }
    return TrainedModel(proj, mlp, dict(FEATURE_CONFIG), config.threshold, config.seed, stats)
