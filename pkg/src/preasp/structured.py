"""Segment-level pre-aspiration predictor trained with Passive-Aggressive updates.

Prediction is the highest-scoring ``(t_s, t_e)`` pair under a linear score
``w . phi``.  Training visits one example at a time, finds the most violated
pair by loss-augmented inference and moves ``w`` just enough to satisfy the
margin constraint, capped by the aggressiveness ``C``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .acoustics import FeatureSequence, NormStats
from .data import Example, training_window
from .errors import InferenceError, ModelFormatError, TrainingDataError
from .featuremaps import (CumulativeStats, FeatureMapSpec, MapDescriptor, ScoreTables,
                          default_spec, phi_matrix, score_candidates)
from .persist import fmt_float, fmt_row, parse_row, read_model_file, require, write_model_file

log = logging.getLogger(__name__)

HEADER = "PREASP-STRUCT"
VERSION = 1


@dataclass
class StructuredModel:
    w: np.ndarray
    spec: FeatureMapSpec
    norm: NormStats | None = None
    C: float = 50.0
    epsilon: float = 2.0
    min_dur: int = 5
    max_dur: int = 150

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.shape != (self.spec.N,):
            raise ValueError(f"weight vector has shape {self.w.shape}, expected ({self.spec.N},)")
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")
        if not 0 < self.min_dur < self.max_dur:
            raise ValueError("need 0 < min_dur < max_dur")

    @classmethod
    def zeros(cls, spec: FeatureMapSpec | None = None, **kwargs) -> "StructuredModel":
        spec = spec or default_spec()
        return cls(np.zeros(spec.N), spec, **kwargs)


@dataclass
class StructuredConfig:
    C: float = 50.0
    epsilon: float = 2.0
    min_dur: int = 5
    max_dur: int = 150
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    average: bool = False
    pmax_reading: str = "stat-diff"


# ---------------------------------------------------------------- candidates

def candidate_set(T, min_dur=None, max_dur=None, window=None):
    """All ``(t_s, t_e)`` with ``t_s < t_e`` inside ``window`` in lexicographic order.

    ``window`` is an inclusive frame range, defaulting to ``(0, T - 1)``.
    Returns two int arrays.
    """
    if T < 2:
        raise InferenceError(f"need at least 2 frames, got {T}")
    lo, hi = (0, T - 1) if window is None else window
    lo, hi = max(0, int(lo)), min(T - 1, int(hi))
    dmin = max(1, 1 if min_dur is None else int(min_dur))
    dmax = hi - lo if max_dur is None else min(int(max_dur), hi - lo)
    if hi <= lo or dmax < dmin:
        raise InferenceError(f"no candidate pairs in window [{lo}, {hi}] "
                             f"with durations [{dmin}, {dmax}]")
    starts = np.arange(lo, hi)
    durs = np.arange(dmin, dmax + 1)
    ts = np.repeat(starts, durs.size)
    te = ts + np.tile(durs, starts.size)
    keep = te <= hi
    return ts[keep], te[keep]


def task_loss(gold, pred, epsilon=2.0):
    """Duration mismatch beyond ``epsilon``: max(|d_pred - d_gold| - epsilon, 0)."""
    d_gold = gold[1] - gold[0]
    d_pred = np.asarray(pred[1]) - np.asarray(pred[0])
    return np.maximum(np.abs(d_pred - d_gold) - epsilon, 0.0)


# ---------------------------------------------------------------- inference

def _features(model: StructuredModel, example):
    feats = example.features if isinstance(example, Example) else example
    frames = feats.frames if isinstance(feats, FeatureSequence) else np.asarray(feats)
    if model.norm is not None:
        frames = model.norm.apply(frames)
    return CumulativeStats(frames)


def _window(example, window):
    if window is not None:
        return window
    return example.window if isinstance(example, Example) else None


def infer(model: StructuredModel, example, window=None):
    """Best-scoring pair; ties go to the smallest ``t_s`` then ``t_e``."""
    cum = _features(model, example)
    ts, te = candidate_set(cum.T, model.min_dur, model.max_dur, _window(example, window))
    k = int(np.argmax(score_candidates(cum, ts, te, model.spec, model.w)))
    return int(ts[k]), int(te[k])


def loss_augmented_infer(model: StructuredModel, example: Example, window=None):
    """Most violated pair: argmax of score plus task loss against the gold pair.

    The search defaults to the training window around the gold labels.
    """
    cum = _features(model, example)
    if window is None:
        window = training_window(example.gold, cum.T)
    ts, te = candidate_set(cum.T, model.min_dur, model.max_dur, window)
    obj = score_candidates(cum, ts, te, model.spec, model.w) \
        + task_loss(example.gold, (ts, te), model.epsilon)
    k = int(np.argmax(obj))
    return int(ts[k]), int(te[k])


# ---------------------------------------------------------------- learning

@dataclass
class PAStep:
    w: np.ndarray
    tau: float
    loss: float      # task loss of the violating pair
    hinge: float
    violator: tuple


def pa_step(w, phi_gold, phi_viol, loss, C):
    """Closed-form PA-I step: ``w + tau * dphi``, ``tau = min(C, hinge / |dphi|^2)``."""
    dphi = phi_gold - phi_viol
    hinge = max(0.0, float(loss - w @ dphi))
    sq = float(dphi @ dphi)
    if hinge == 0.0 or sq == 0.0:
        return w, 0.0, hinge
    tau = min(C, hinge / sq)
    return w + tau * dphi, tau, hinge


def pa_update(model: StructuredModel, example: Example, window=None) -> PAStep:
    """One Passive-Aggressive update on ``example``; ``model`` is not modified."""
    viol = loss_augmented_infer(model, example, window)
    cum = _features(model, example)
    phis = phi_matrix(cum, [example.gold[0], viol[0]], [example.gold[1], viol[1]], model.spec)
    loss = float(task_loss(example.gold, viol, model.epsilon))
    w, tau, hinge = pa_step(model.w, phis[0], phis[1], loss, model.C)
    return PAStep(w, tau, loss, hinge, viol)


@dataclass
class _Instance:
    tables: ScoreTables
    gold: tuple
    ts: np.ndarray
    te: np.ndarray
    gamma: np.ndarray
    phi_gold: np.ndarray


def _prepare(model, example, window=None):
    cum = _features(model, example)
    if window is None:
        window = training_window(example.gold, cum.T)
    ts, te = candidate_set(cum.T, model.min_dur, model.max_dur, window)
    gamma = task_loss(example.gold, (ts, te), model.epsilon)
    tables = ScoreTables(cum, model.spec)
    return _Instance(tables, example.gold, ts, te, gamma, tables.phi(*example.gold)[0])


def _mean_instance_loss(w, instances, epsilon):
    losses = []
    for inst in instances:
        k = int(np.argmax(inst.tables.score(w, inst.ts, inst.te)))
        losses.append(float(task_loss(inst.gold, (inst.ts[k], inst.te[k]), epsilon)))
    return float(np.mean(losses))


def mean_task_loss(model, examples) -> float:
    losses = [float(task_loss(ex.gold, infer(model, ex), model.epsilon)) for ex in examples]
    return float(np.mean(losses))


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = np.inf


def train_structured(train, validation, config: StructuredConfig = StructuredConfig()):
    """Train on ``train`` with early stopping on ``validation`` mean task loss.

    Returns ``(model, history)``; the model holds the best-validation weights
    (or their running average when ``config.average`` is set).
    """
    train = [ex for ex in train if ex.gold is not None]
    validation = [ex for ex in validation if ex.gold is not None]
    if not train or not validation:
        raise TrainingDataError("structured training needs non-empty labelled train and validation sets")

    norm = NormStats.fit([ex.features for ex in train])
    durs = np.array([ex.gold[1] - ex.gold[0] for ex in train], dtype=np.float64)
    if durs.size > 1:
        dur_std = durs.std(ddof=1)
    else:
        # no spread to measure: use that of a uniform draw over admissible durations
        dur_std = (config.max_dur - config.min_dur) / np.sqrt(12.0)
    spec = default_spec(config.pmax_reading).with_duration_stats(durs.mean(), dur_std)
    model = StructuredModel(np.zeros(spec.N), spec, norm, config.C, config.epsilon,
                            config.min_dur, config.max_dur)
    instances = [_prepare(model, ex) for ex in train]
    val_instances = [_prepare(model, ex, ex.window) for ex in validation]

    rng = np.random.default_rng(config.seed)
    w = np.zeros(spec.N)
    w_sum = np.zeros(spec.N)
    n_steps = 0
    history = TrainHistory()
    best_w = w.copy()
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        losses = []
        for i in rng.permutation(len(instances)):
            inst = instances[i]
            obj = inst.tables.score(w, inst.ts, inst.te) + inst.gamma
            k = int(np.argmax(obj))
            phi_viol = inst.tables.phi(inst.ts[k], inst.te[k])[0]
            w, _, _ = pa_step(w, inst.phi_gold, phi_viol, float(inst.gamma[k]), config.C)
            losses.append(float(inst.gamma[k]))
            w_sum += w
            n_steps += 1

        current = w_sum / n_steps if config.average else w
        val_loss = _mean_instance_loss(current, val_instances, config.epsilon)
        improved = val_loss < history.best_val_loss
        if improved:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_w = current.copy()
            stale = 0
        else:
            stale += 1
        history.epochs.append({"epoch": epoch, "train_aug_loss": float(np.mean(losses)),
                               "val_loss": val_loss, "best_val_loss": history.best_val_loss})
        log.info("structured epoch %d: aug loss %.3f, val loss %.3f (best %.3f @ %d)",
                 epoch, np.mean(losses), val_loss, history.best_val_loss, history.best_epoch)
        if stale >= config.patience:
            break

    model.w = best_w
    return model, history


# ---------------------------------------------------------------- persistence

def save_structured(model: StructuredModel, path):
    config = {
        "C": fmt_float(model.C),
        "epsilon": fmt_float(model.epsilon),
        "min_dur": str(model.min_dur),
        "max_dur": str(model.max_dur),
        "dur_mean": fmt_float(model.spec.dur_mean),
        "dur_std": fmt_float(model.spec.dur_std),
        "n_maps": str(model.spec.N),
    }
    sections = {"maps": [d.encode() for d in model.spec.descriptors]}
    if model.norm is not None:
        sections["norm_mean"] = [fmt_row(model.norm.mean)]
        sections["norm_std"] = [fmt_row(model.norm.std)]
    sections["w"] = [fmt_float(v) for v in model.w]
    write_model_file(path, HEADER, VERSION, config, sections)


def load_structured(path) -> StructuredModel:
    config, sections = read_model_file(path, HEADER, VERSION)
    try:
        descriptors = tuple(MapDescriptor.decode(line) for line in require(sections, "maps", path))
        spec = FeatureMapSpec(descriptors, float(require(config, "dur_mean", path)),
                              float(require(config, "dur_std", path)))
        if spec.N != int(require(config, "n_maps", path)):
            raise ModelFormatError(f"{path}: n_maps does not match the map list")
        norm = None
        if "norm_mean" in sections:
            norm = NormStats(parse_row(sections["norm_mean"][0]), parse_row(require(sections, "norm_std", path)[0]))
        w = np.array([float(v) for v in require(sections, "w", path)])
        return StructuredModel(w, spec, norm, float(require(config, "C", path)),
                               float(require(config, "epsilon", path)),
                               int(require(config, "min_dur", path)), int(require(config, "max_dur", path)))
    except (ValueError, IndexError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: {exc}") from exc
