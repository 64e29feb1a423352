"""Adam, early stopping, and the fit/evaluate loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import net
from .dfs import EmbeddingSpec, embed, embed_dim
from .geom import uniform_sphere_sample
from .losses import LOSS_KINDS, assume_negative_loss, loss_value  # noqa: F401  (re-exported)
from .net import NumericFailure

log = logging.getLogger(__name__)

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 30
    seed: int = 0
    loss_kind: str = "ce"
    lambda_pos: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.lambda_pos <= 0:
            raise ValueError("lambda_pos must be positive")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ValueError(f"unknown training key {key!r}")
            conv = {"float": float, "int": int, "str": str}[types[key]]
            kwargs[key] = conv(float(raw)) if conv is int else conv(raw)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_dict(read_kv_file(path))

    def to_text(self):
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


def read_kv_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, val = line.partition("=")
            if not eq:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key = key.strip()
            if key in out:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = val.strip()
    return out


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(model, grads, state: AdamState, cfg: TrainConfig):
    """One Adam update with decoupled weight decay, applied in place."""
    grads = np.asarray(grads, float)
    if grads.shape != model.params.shape:
        raise ValueError("gradient and parameter vectors differ in length")
    if not np.all(np.isfinite(grads)):
        raise NumericFailure("non-finite gradient passed to adam_step")
    lr = cfg.learning_rate
    if cfg.weight_decay:
        model.params *= 1.0 - lr * cfg.weight_decay
    state.t += 1
    state.m *= BETA1
    state.m += (1 - BETA1) * grads
    state.v *= BETA2
    state.v += (1 - BETA2) * grads * grads
    m_hat = state.m / (1 - BETA1**state.t)
    v_hat = state.v / (1 - BETA2**state.t)
    model.params -= lr * m_hat / (np.sqrt(v_hat) + EPS)
    return model, state


@dataclass
class FitResult:
    model: net.Model
    history: list = field(default_factory=list)  # (train_loss, val_loss) per epoch
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def best_val_loss(self):
        return self.history[self.best_epoch][1]

    def write_history(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, (tr, va) in enumerate(self.history):
                w.writerow([i, repr(tr), repr(va)])


def read_history(path):
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return [(float(row["train_loss"]), float(row["val_loss"])) for row in r]


def output_dim(task):
    return task.num_outputs


def default_loss(task):
    return {"multiclass": "ce", "binary": "bce", "regression": "mse"}[task.kind]


def _eval_loss(model, x, y, cfg, x_rand=None):
    if cfg.loss_kind == "assume_negative":
        return net.backward_assume_negative(model, x, y, x_rand, cfg.lambda_pos)[0]
    return loss_value(cfg.loss_kind, net.forward(model, x), y)


def fit(bundle, pe: EmbeddingSpec, nn: net.NetworkSpec, cfg: TrainConfig, embeddings=None) -> FitResult:
    """Train on ``bundle.train`` with early stopping on ``bundle.val`` loss.

    Embeddings are computed once per split unless passed in as
    ``{"train": X, "val": X}``.
    """
    if len(bundle.train.points) == 0 or len(bundle.val.points) == 0:
        raise ValueError("bundle needs non-empty train and val splits")
    nn = net.with_dims(nn, embed_dim(pe), bundle.task.num_outputs)
    if embeddings is None:
        embeddings = {}
    x_tr = embeddings.get("train")
    x_tr = embed(pe, bundle.train.points) if x_tr is None else x_tr
    x_va = embeddings.get("val")
    x_va = embed(pe, bundle.val.points) if x_va is None else x_va
    y_tr, y_va = bundle.train.targets, bundle.val.targets

    rng = np.random.default_rng(cfg.seed)
    model = net.init(nn, rng.integers(2**63))
    state = AdamState.zeros(model.num_params)
    xr_va = None
    if cfg.loss_kind == "assume_negative":
        xr_va = embed(pe, uniform_sphere_sample(len(x_va), rng.integers(2**63)))

    result = FitResult(model.copy())
    best = math.inf
    since_best = 0
    n = len(x_tr)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if cfg.loss_kind == "assume_negative":
                xr = embed(pe, uniform_sphere_sample(len(idx), rng.integers(2**63)))
                loss, grad = net.backward_assume_negative(model, x_tr[idx], y_tr[idx], xr, cfg.lambda_pos,
                                                          train_mode=True, rng=rng)
            else:
                loss, grad = net.backward(model, x_tr[idx], y_tr[idx], cfg.loss_kind, train_mode=True, rng=rng)
            adam_step(model, grad, state, cfg)
            batch_losses.append(loss * len(idx))
        train_loss = float(np.sum(batch_losses) / n)
        val_loss = _eval_loss(model, x_va, y_va, cfg, xr_va)
        if not np.isfinite(val_loss):
            raise NumericFailure(f"validation loss diverged at epoch {epoch}")
        result.history.append((train_loss, float(val_loss)))
        if val_loss < best:
            best = val_loss
            result.best_epoch = epoch
            result.model = model.copy()
            since_best = 0
        else:
            since_best += 1
        log.debug("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        if since_best >= cfg.patience:
            result.stopped_early = True
            break
    return result


def predict(model, pe, points, batch=8192):
    out = []
    for start in range(0, len(points), batch):
        out.append(net.forward(model, embed(pe, points[start:start + batch])))
    return np.concatenate(out, axis=0)


def predicted_labels(outputs, task):
    if task.kind == "multiclass":
        return np.argmax(outputs, axis=1)
    if task.kind == "binary":
        return (outputs.reshape(-1) > 0).astype(np.int64)
    raise ValueError("labels are only defined for classification tasks")


def latitude_bands(band_deg=20.0):
    edges = np.arange(-90.0, 90.0 + 1e-9, band_deg)
    if not np.isclose(edges[-1], 90.0):
        raise ValueError(f"band width {band_deg} does not divide 180")
    return list(zip(edges[:-1], edges[1:]))


def banded_accuracy(correct, lat, band_deg=20.0):
    """Accuracy per latitude band from south to north; the last band includes +90."""
    lat_deg = np.degrees(lat)
    rows = []
    bands = latitude_bands(band_deg)
    for i, (south, north) in enumerate(bands):
        last = i == len(bands) - 1
        sel = (lat_deg >= south) & ((lat_deg <= north) if last else (lat_deg < north))
        n = int(sel.sum())
        acc = float(correct[sel].mean()) if n else float("nan")
        rows.append({"band_south_deg": float(south), "band_north_deg": float(north), "accuracy": acc, "n_points": n})
    return rows


def evaluate(model, pe, split, task, metric="accuracy", band_deg=20.0, outputs=None):
    """``accuracy``, ``mse`` or ``banded_accuracy`` on a split."""
    if len(split.points) == 0:
        raise ValueError("cannot evaluate an empty split")
    if outputs is None:
        outputs = predict(model, pe, split.points)
    if metric == "mse":
        if task.kind != "regression":
            raise ValueError("mse needs a regression task")
        return float(np.mean((outputs - split.targets) ** 2))
    correct = predicted_labels(outputs, task) == split.targets
    if metric == "accuracy":
        return float(correct.mean())
    if metric == "banded_accuracy":
        return banded_accuracy(correct, split.points.lat, band_deg)
    raise ValueError(f"unknown metric {metric!r}")
