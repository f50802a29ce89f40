"""Small CNN classifier over node images, trained with SGD + momentum.

Architecture: a stack of same-padded conv+ReLU layers, flatten, two
fully-connected ReLU layers, then a softmax head. All arithmetic is double
precision so the finite-difference gradient checks are meaningful.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySplit, ShapeMismatch


@dataclass(frozen=True)
class ConvNetConfig:
    input_side: int
    input_channels: int
    classes: int
    conv_layers: int = 4
    kernel: int = 5
    filters: int = 16
    fc_sizes: tuple = (768, 512)
    learning_rate: float = 3e-4
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd for same padding")
        for name in ("input_side", "input_channels", "classes", "conv_layers", "kernel",
                     "filters", "batch_size", "max_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class ConvNetParams:
    config: ConvNetConfig
    conv_w: list
    conv_b: list
    fc_w: list
    fc_b: list

    def arrays(self):
        """(name, array) pairs in a fixed order."""
        out = []
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            out.append((f"conv{i}_w", w))
            out.append((f"conv{i}_b", b))
        for i, (w, b) in enumerate(zip(self.fc_w, self.fc_b)):
            out.append((f"fc{i}_w", w))
            out.append((f"fc{i}_b", b))
        return out


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    best_epoch: int = -1
    test_metrics: dict | None = None


def init_params(config, seed=None):
    """Fan-in uniform weights in +/- sqrt(6/fan_in); zero biases."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    conv_w, conv_b = [], []
    c_in = config.input_channels
    for _ in range(config.conv_layers):
        fan_in = c_in * config.kernel * config.kernel
        bound = np.sqrt(6.0 / fan_in)
        conv_w.append(rng.uniform(-bound, bound, size=(config.filters, c_in, config.kernel, config.kernel)))
        conv_b.append(np.zeros(config.filters))
        c_in = config.filters
    fc_w, fc_b = [], []
    d_in = config.input_side * config.input_side * config.filters
    for d_out in (*config.fc_sizes, config.classes):
        bound = np.sqrt(6.0 / d_in)
        fc_w.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
        fc_b.append(np.zeros(d_out))
        d_in = d_out
    return ConvNetParams(config=config, conv_w=conv_w, conv_b=conv_b, fc_w=fc_w, fc_b=fc_b)


def _conv_same(x, w, b):
    # x (B, C, H, W), w (F, C, k, k) -> (B, F, H, W) with same padding
    B, C, H, W = x.shape
    F, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((B, F, H, W))
    for di in range(k):
        for dj in range(k):
            out += np.einsum("fc,bcij->bfij", w[:, :, di, dj], xp[:, :, di : di + H, dj : dj + W], optimize=True)
    return out + b[None, :, None, None]


def _conv_same_backward(x, w, dout):
    B, C, H, W = x.shape
    F, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    for di in range(k):
        for dj in range(k):
            patch = xp[:, :, di : di + H, dj : dj + W]
            dw[:, :, di, dj] = np.einsum("bfij,bcij->fc", dout, patch, optimize=True)
            dxp[:, :, di : di + H, dj : dj + W] += np.einsum(
                "fc,bfij->bcij", w[:, :, di, dj], dout, optimize=True
            )
    db = dout.sum(axis=(0, 2, 3))
    dx = dxp[:, :, p : p + H, p : p + W]
    return dw, db, dx


def _forward_cached(params, batch):
    cfg = params.config
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != (cfg.input_channels, cfg.input_side, cfg.input_side):
        raise ShapeMismatch(
            f"batch shape {x.shape} does not match (B, {cfg.input_channels}, "
            f"{cfg.input_side}, {cfg.input_side})"
        )
    conv_in, conv_pre = [], []
    h = x
    for w, b in zip(params.conv_w, params.conv_b):
        conv_in.append(h)
        z = _conv_same(h, w, b)
        conv_pre.append(z)
        h = np.maximum(z, 0.0)
    flat = h.reshape(h.shape[0], -1)
    fc_in, fc_pre = [], []
    a = flat
    n_fc = len(params.fc_w)
    for i, (w, b) in enumerate(zip(params.fc_w, params.fc_b)):
        fc_in.append(a)
        z = a @ w.T + b
        fc_pre.append(z)
        a = z if i == n_fc - 1 else np.maximum(z, 0.0)
    logits = a
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=1, keepdims=True)
    cache = (conv_in, conv_pre, fc_in, fc_pre, h.shape)
    return probs, cache


def forward(params, batch):
    """Class probabilities for a batch of images."""
    probs, _ = _forward_cached(params, batch)
    return probs


def loss_and_grad(params, batch, labels):
    """Mean cross-entropy and gradients for every parameter array."""
    labels = np.asarray(labels)
    probs, cache = _forward_cached(params, batch)
    conv_in, conv_pre, fc_in, fc_pre, conv_out_shape = cache
    B = probs.shape[0]
    if labels.shape != (B,):
        raise ShapeMismatch(f"labels shape {labels.shape} does not match batch {B}")
    loss = float(-np.log(np.clip(probs[np.arange(B), labels], 1e-300, None)).mean())

    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B

    d_fc_w = [None] * len(params.fc_w)
    d_fc_b = [None] * len(params.fc_b)
    grad = dlogits
    for i in range(len(params.fc_w) - 1, -1, -1):
        if i != len(params.fc_w) - 1:
            grad = grad * (fc_pre[i] > 0)
        d_fc_w[i] = grad.T @ fc_in[i]
        d_fc_b[i] = grad.sum(axis=0)
        grad = grad @ params.fc_w[i]

    grad = grad.reshape(conv_out_shape)
    d_conv_w = [None] * len(params.conv_w)
    d_conv_b = [None] * len(params.conv_b)
    for i in range(len(params.conv_w) - 1, -1, -1):
        grad = grad * (conv_pre[i] > 0)
        dw, db, grad = _conv_same_backward(conv_in[i], params.conv_w[i], grad)
        d_conv_w[i] = dw
        d_conv_b[i] = db
    grads = ConvNetParams(
        config=params.config, conv_w=d_conv_w, conv_b=d_conv_b, fc_w=d_fc_w, fc_b=d_fc_b
    )
    return loss, grads


def predict_proba(params, X, chunk=256):
    out = []
    for start in range(0, len(X), chunk):
        out.append(forward(params, X[start : start + chunk]))
    return np.concatenate(out, axis=0)


def _mean_ce(params, X, y, chunk=256):
    probs = predict_proba(params, X, chunk=chunk)
    return float(-np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None)).mean()), probs


def train(images, split, config):
    """SGDM training with best-validation-loss checkpointing.

    Returns (best params, TrainReport); deterministic for a fixed config seed.
    """
    for name, idx in (("train", split.train), ("val", split.val), ("test", split.test)):
        if len(idx) == 0:
            raise EmptySplit(f"{name} split is empty")
    X = images.stacked()
    y = np.asarray(images.labels)
    params = init_params(config)
    velocity = ConvNetParams(
        config=config,
        conv_w=[np.zeros_like(w) for w in params.conv_w],
        conv_b=[np.zeros_like(b) for b in params.conv_b],
        fc_w=[np.zeros_like(w) for w in params.fc_w],
        fc_b=[np.zeros_like(b) for b in params.fc_b],
    )
    shuffle_rng = np.random.default_rng((config.seed, 0x5B1E))
    report = TrainReport()
    best_val = np.inf
    best_params = copy.deepcopy(params)
    lr, mom = config.learning_rate, config.momentum
    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(split.train)
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            loss, grads = loss_and_grad(params, X[batch_idx], y[batch_idx])
            epoch_losses.append(loss)
            for (_, v), (_, g), (_, p) in zip(velocity.arrays(), grads.arrays(), params.arrays()):
                v *= mom
                v -= lr * g
                p += v
        val_loss, val_probs = _mean_ce(params, X[split.val], y[split.val])
        val_acc = float((val_probs.argmax(axis=1) == y[split.val]).mean())
        report.train_loss.append(float(np.mean(epoch_losses)))
        report.val_loss.append(val_loss)
        report.val_acc.append(val_acc)
        if val_loss < best_val:
            best_val = val_loss
            best_params = copy.deepcopy(params)
            report.best_epoch = epoch
    report.test_metrics = evaluate(best_params, images, split.test)
    return best_params, report


def classification_metrics(y_true, y_pred, n_classes):
    """Accuracy plus macro-averaged precision/recall/F1.

    Per-class scores with an empty denominator count as 0 in the macro mean.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    accuracy = float(np.trace(confusion) / confusion.sum())
    precisions, recalls, f1s = [], [], []
    for c in range(n_classes):
        tp = confusion[c, c]
        pred_c = confusion[:, c].sum()
        true_c = confusion[c, :].sum()
        prec = tp / pred_c if pred_c else 0.0
        rec = tp / true_c if true_c else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precisions.append(prec)
        recalls.append(rec)
        f1s.append(f1)
    return {
        "accuracy": accuracy,
        "macro_precision": float(np.mean(precisions)),
        "macro_recall": float(np.mean(recalls)),
        "macro_f1": float(np.mean(f1s)),
        "confusion": confusion,
    }


def evaluate(params, images, indices):
    """Test-set metrics for the given image indices."""
    indices = np.asarray(indices)
    if len(indices) == 0:
        raise EmptySplit("no indices to evaluate")
    X = images.stacked()[indices]
    y = np.asarray(images.labels)[indices]
    preds = predict_proba(params, X).argmax(axis=1)
    return classification_metrics(y, preds, params.config.classes)


# --- checkpoint / report I/O ---

def save_checkpoint(params, path):
    from .imaging import write_named_tensors

    entries = [(name, -1, arr) for name, arr in params.arrays()]
    write_named_tensors(entries, (), path)


def load_checkpoint(path, config):
    from .imaging import read_named_tensors

    entries, _ = read_named_tensors(path)
    by_name = {name: arr.astype(np.float64) for name, _, arr in entries}
    params = init_params(config)
    conv_w = [by_name[f"conv{i}_w"] for i in range(len(params.conv_w))]
    conv_b = [by_name[f"conv{i}_b"] for i in range(len(params.conv_b))]
    fc_w = [by_name[f"fc{i}_w"] for i in range(len(params.fc_w))]
    fc_b = [by_name[f"fc{i}_b"] for i in range(len(params.fc_b))]
    return ConvNetParams(config=config, conv_w=conv_w, conv_b=conv_b, fc_w=fc_w, fc_b=fc_b)


def write_report(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
        for e, (tl, vl, va) in enumerate(zip(report.train_loss, report.val_loss, report.val_acc)):
            writer.writerow([e, repr(float(tl)), repr(float(vl)), repr(float(va))])
