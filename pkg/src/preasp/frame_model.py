"""Frame-level pre-aspiration classifier and its interval decoder.

A 40-40-1 feedforward net scores each frame from five stacked normalised
feature frames; the smoothed, thresholded probabilities are decoded into
the longest run of positive frames.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .acoustics import N_FEATURES, FeatureSequence, NormStats
from .data import Example, training_window
from .errors import ModelFormatError, TrainingDataError
from .persist import fmt_float, fmt_row, parse_row, read_model_file, require, write_model_file

log = logging.getLogger(__name__)

HEADER = "PREASP-FRAME"
VERSION = 1
CONTEXT = 2           # frames on each side
N_INPUT = (2 * CONTEXT + 1) * N_FEATURES
P_CLIP = 1e-7


@dataclass
class FrameNet:
    W1: np.ndarray          # (hidden, input)
    b1: np.ndarray
    W2: np.ndarray          # (hidden,)
    b2: float
    dropout: float = 0.3
    smooth_ms: int = 9
    threshold: float = 0.5
    norm: NormStats | None = None

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64).ravel()
        self.b2 = float(self.b2)
        h = self.W1.shape[0]
        if self.b1.shape != (h,) or self.W2.shape != (h,):
            raise ValueError("inconsistent layer shapes")

    @classmethod
    def init(cls, rng, n_input=N_INPUT, n_hidden=40, **kwargs) -> "FrameNet":
        W1 = rng.standard_normal((n_hidden, n_input)) * np.sqrt(2.0 / n_input)
        W2 = rng.standard_normal(n_hidden) * np.sqrt(1.0 / n_hidden)
        return cls(W1, np.zeros(n_hidden), W2, 0.0, **kwargs)

    def params(self) -> dict:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": np.array(self.b2)}

    def with_params(self, p) -> "FrameNet":
        return replace(self, W1=p["W1"], b1=p["b1"], W2=p["W2"], b2=float(p["b2"]))


@dataclass
class FrameConfig:
    lr: float = 0.01
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    n_hidden: int = 40
    dropout: float = 0.3
    smooth_ms: int = 9
    threshold: float = 0.5
    seed: int = 0


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------- inputs

def build_contexts(frames) -> np.ndarray:
    """(T, 40) matrix of stacked neighbours, edge frames replicated."""
    x = np.asarray(getattr(frames, "frames", frames), dtype=np.float64)
    T = x.shape[0]
    idx = np.clip(np.arange(T)[:, None] + np.arange(-CONTEXT, CONTEXT + 1), 0, T - 1)
    return x[idx].reshape(T, -1)


def build_context(frames, t) -> np.ndarray:
    x = np.asarray(getattr(frames, "frames", frames))
    if not 0 <= t < x.shape[0]:
        raise IndexError(f"frame {t} out of range for {x.shape[0]} frames")
    idx = np.clip(np.arange(t - CONTEXT, t + CONTEXT + 1), 0, x.shape[0] - 1)
    return x[idx].reshape(-1)


# ---------------------------------------------------------------- network

def _forward(net: FrameNet, X, mask=None):
    z1 = X @ net.W1.T + net.b1
    h = np.maximum(z1, 0.0)
    if mask is not None:
        h = h * mask
    z2 = h @ net.W2 + net.b2
    return z1, h, z2, sigmoid(z2)


def dropout_mask(rng, shape, rate):
    """Inverted dropout: kept units are scaled by 1 / (1 - rate)."""
    if rate <= 0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(net: FrameNet, x, training: bool = False, rng=None):
    """Pre-aspiration probability for one 40-vector or a batch of them."""
    X = np.asarray(x, dtype=np.float64)
    mask = None
    if training:
        rng = rng if rng is not None else np.random.default_rng()
        mask = dropout_mask(rng, X.shape[:-1] + (net.W1.shape[0],), net.dropout)
    return _forward(net, X, mask)[3]


def bce_loss(p, y):
    p = np.clip(np.asarray(p, dtype=np.float64), P_CLIP, 1.0 - P_CLIP)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def loss_and_grads(net: FrameNet, X, y, mask=None):
    """Mean BCE over the batch and its gradient for every parameter."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    z1, h, z2, p = _forward(net, X, mask)
    loss = float(bce_loss(p, y).mean())
    n = X.shape[0]
    dz2 = (p - y) / n
    dh = np.outer(dz2, net.W2)
    if mask is not None:
        dh = dh * mask
    dz1 = dh * (z1 > 0)
    grads = {"W1": dz1.T @ X, "b1": dz1.sum(axis=0), "W2": h.T @ dz2, "b2": np.array(dz2.sum())}
    return loss, grads


def train_step(net: FrameNet, X, y, lr, rng=None) -> FrameNet:
    """One gradient-descent step on a mini-batch, with dropout when ``rng`` is given."""
    mask = None
    if rng is not None and net.dropout > 0:
        mask = dropout_mask(rng, (np.atleast_2d(X).shape[0], net.W1.shape[0]), net.dropout)
    _, grads = loss_and_grads(net, X, y, mask)
    return net.with_params({k: v - lr * grads[k] for k, v in net.params().items()})


# ---------------------------------------------------------------- datasets

def frame_dataset(examples, norm: NormStats | None = None):
    """Context vectors and labels for the training-window frames of labelled examples.

    Frames in ``[t_s, t_e]`` (inclusive) are positive.
    """
    xs, ys = [], []
    for ex in examples:
        if ex.gold is None:
            continue
        frames = ex.features.frames if norm is None else norm.apply(ex.features.frames)
        ctx = build_contexts(frames)
        lo, hi = training_window(ex.gold, ctx.shape[0])
        t = np.arange(lo, hi + 1)
        xs.append(ctx[t])
        ys.append(((t >= ex.gold[0]) & (t <= ex.gold[1])).astype(np.float64))
    if not xs:
        return np.empty((0, N_INPUT)), np.empty(0)
    return np.concatenate(xs), np.concatenate(ys)


def balance(X, y, rng):
    """Randomly drop majority-class frames until both classes are equal in size."""
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if pos.size == 0 or neg.size == 0:
        raise TrainingDataError("frame training needs both positive and negative frames")
    if neg.size > pos.size:
        neg = np.sort(rng.choice(neg, pos.size, replace=False))
    elif pos.size > neg.size:
        pos = np.sort(rng.choice(pos, neg.size, replace=False))
    keep = np.concatenate([pos, neg])
    return X[keep], y[keep]


@dataclass
class FrameHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = np.inf


def fit(net: FrameNet, X, y, X_val, y_val, config: FrameConfig, rng):
    """Mini-batch gradient descent with early stopping on validation BCE."""
    history = FrameHistory()
    best = net
    stale = 0
    n = X.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            b = order[start:start + config.batch_size]
            net = train_step(net, X[b], y[b], config.lr, rng)
        train_loss = float(bce_loss(forward(net, X), y).mean())
        val_loss = float(bce_loss(forward(net, X_val), y_val).mean())
        if val_loss < history.best_val_loss:
            history.best_val_loss, history.best_epoch, best, stale = val_loss, epoch, net, 0
        else:
            stale += 1
        history.epochs.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                               "best_val_loss": history.best_val_loss})
        log.info("frame epoch %d: train %.4f, val %.4f (best %.4f @ %d)",
                 epoch, train_loss, val_loss, history.best_val_loss, history.best_epoch)
        if stale >= config.patience:
            break
    return best, history


def train_frame_model(train, validation, config: FrameConfig = FrameConfig()):
    """Normalise, balance, and train a FrameNet; returns ``(net, history)``."""
    train = [ex for ex in train if ex.gold is not None]
    validation = [ex for ex in validation if ex.gold is not None]
    if not train or not validation:
        raise TrainingDataError("frame training needs labelled train and validation examples")
    rng = np.random.default_rng(config.seed)
    norm = NormStats.fit([ex.features for ex in train])
    X, y = balance(*frame_dataset(train, norm), rng)
    X_val, y_val = balance(*frame_dataset(validation, norm), rng)
    net = FrameNet.init(rng, N_INPUT, config.n_hidden, dropout=config.dropout,
                        smooth_ms=config.smooth_ms, threshold=config.threshold, norm=norm)
    return fit(net, X, y, X_val, y_val, config, rng)


# ---------------------------------------------------------------- decoding

def moving_average(p, width):
    """Centred moving average; near the ends only available frames are averaged."""
    p = np.asarray(p, dtype=np.float64)
    half = width // 2
    cs = np.concatenate([[0.0], np.cumsum(p)])
    idx = np.arange(p.size)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + (width - 1 - half) + 1, p.size)
    return np.clip((cs[hi] - cs[lo]) / (hi - lo), 0.0, 1.0)


def longest_run(binary):
    """(start, end) inclusive of the longest run of truthy values; earliest wins ties."""
    b = np.concatenate([[0], np.asarray(binary, dtype=np.int8) != 0, [0]]).astype(np.int8)
    edges = np.diff(b)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    if starts.size == 0:
        return None
    k = int(np.argmax(ends - starts))
    return int(starts[k]), int(ends[k])


@dataclass(frozen=True)
class Decoded:
    t_s: int
    t_e: int
    low_confidence: bool = False


def frame_probabilities(net: FrameNet, features) -> np.ndarray:
    frames = features.frames if isinstance(features, FeatureSequence) else np.asarray(features)
    if net.norm is not None:
        frames = net.norm.apply(frames)
    return forward(net, build_contexts(frames))


def decode(net: FrameNet, features, window=None) -> Decoded:
    """Smooth, threshold and take the longest positive run inside ``window``."""
    if isinstance(features, Example):
        window = window if window is not None else features.window
        features = features.features
    p = frame_probabilities(net, features)
    lo, hi = (0, p.size - 1) if window is None else window
    smoothed = moving_average(p[lo:hi + 1], net.smooth_ms)
    run = longest_run(smoothed >= net.threshold)
    if run is None:
        k = int(np.argmax(smoothed))
        return Decoded(lo + k, lo + k, True)
    return Decoded(lo + run[0], lo + run[1])


# ---------------------------------------------------------------- persistence

def save_frame_model(net: FrameNet, path):
    config = {
        "n_input": str(net.W1.shape[1]),
        "n_hidden": str(net.W1.shape[0]),
        "dropout": fmt_float(net.dropout),
        "smooth_ms": str(net.smooth_ms),
        "threshold": fmt_float(net.threshold),
    }
    sections = {}
    if net.norm is not None:
        sections["norm_mean"] = [fmt_row(net.norm.mean)]
        sections["norm_std"] = [fmt_row(net.norm.std)]
    sections["W1"] = [fmt_row(row) for row in net.W1]
    sections["b1"] = [fmt_row(net.b1)]
    sections["W2"] = [fmt_row(net.W2)]
    sections["b2"] = [fmt_float(net.b2)]
    write_model_file(path, HEADER, VERSION, config, sections)


def load_frame_model(path) -> FrameNet:
    config, sections = read_model_file(path, HEADER, VERSION)
    try:
        n_in = int(require(config, "n_input", path))
        n_hidden = int(require(config, "n_hidden", path))
        W1 = np.vstack([parse_row(r) for r in require(sections, "W1", path)])
        if W1.shape != (n_hidden, n_in):
            raise ModelFormatError(f"{path}: W1 has shape {W1.shape}, expected {(n_hidden, n_in)}")
        norm = None
        if "norm_mean" in sections:
            norm = NormStats(parse_row(sections["norm_mean"][0]), parse_row(require(sections, "norm_std", path)[0]))
        return FrameNet(W1, parse_row(require(sections, "b1", path)[0]),
                        parse_row(require(sections, "W2", path)[0]),
                        float(require(sections, "b2", path)[0]),
                        float(require(config, "dropout", path)), int(require(config, "smooth_ms", path)),
                        float(require(config, "threshold", path)), norm)
    except (ValueError, IndexError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: {exc}") from exc
