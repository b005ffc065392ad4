"""Boundary-prediction metrics and data-splitting protocols.

Predictions and gold labels are ``(n, 2)`` arrays of ``(t_s, t_e)`` in ms.
The main score is the percentage of examples whose predicted duration is
within a tolerance of the gold duration; per-boundary errors, duration
statistics and the duration correlation complete the report.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, UndefinedCorrelationError

THRESHOLDS = (5, 10, 15, 20)
MODES = ("duration", "boundary")


def _pairs(values, name):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInputError(f"{name} must have shape (n, 2), got {arr.shape}")
    return arr


def _checked(preds, golds):
    preds, golds = _pairs(preds, "preds"), _pairs(golds, "golds")
    if preds.shape[0] != golds.shape[0]:
        raise InvalidInputError(f"got {preds.shape[0]} predictions for {golds.shape[0]} gold pairs")
    if preds.shape[0] == 0:
        raise InvalidInputError("need at least one prediction")
    return preds, golds


def tolerance_accuracy(preds, golds, thresholds=THRESHOLDS, mode="duration") -> np.ndarray:
    """Percentage of examples within each tolerance (ms).

    ``mode="duration"`` compares ``|pred_dur - gold_dur|``; ``mode="boundary"``
    requires both ``|dt_s|`` and ``|dt_e|`` to be within the tolerance.
    """
    preds, golds = _checked(preds, golds)
    if mode == "duration":
        err = np.abs((preds[:, 1] - preds[:, 0]) - (golds[:, 1] - golds[:, 0]))
    elif mode == "boundary":
        err = np.abs(preds - golds).max(axis=1)
    else:
        raise InvalidInputError(f"unknown tolerance mode {mode!r}; expected one of {MODES}")
    th = np.asarray(thresholds, dtype=np.float64)
    return 100.0 * (err[None, :] <= th[:, None]).mean(axis=1)


def boundary_mae(preds, golds):
    """(mean |dt_s|, mean |dt_e|) in ms."""
    preds, golds = _checked(preds, golds)
    mae = np.abs(preds - golds).mean(axis=0)
    return float(mae[0]), float(mae[1])


def duration_stats(pairs):
    """Sample mean and (n-1) standard deviation of ``t_e - t_s``."""
    pairs = _pairs(pairs, "pairs")
    if pairs.shape[0] < 2:
        raise InvalidInputError("need at least two pairs for a standard deviation")
    d = pairs[:, 1] - pairs[:, 0]
    return float(d.mean()), float(d.std(ddof=1))


def pearson(a, b) -> float:
    """Product-moment correlation of two equal-length sequences."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise InvalidInputError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise InvalidInputError("need at least two values")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = float(da @ da), float(db @ db)
    if sa == 0.0 or sb == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant sequence")
    return float(np.clip((da @ db) / math.sqrt(sa * sb), -1.0, 1.0))


# ---------------------------------------------------------------- report

@dataclass
class EvalReport:
    thresholds: tuple
    accuracy: np.ndarray          # percent, one per threshold
    mae_ts: float
    mae_te: float
    pred_mean: float
    pred_std: float
    gold_mean: float
    gold_std: float
    r: float
    n: int
    mode: str = "duration"

    def as_row(self) -> dict:
        row = {f"acc_le_{t:g}": float(a) for t, a in zip(self.thresholds, self.accuracy)}
        row.update(mae_ts=self.mae_ts, mae_te=self.mae_te, pred_mean=self.pred_mean,
                   pred_std=self.pred_std, gold_mean=self.gold_mean, gold_std=self.gold_std,
                   r=self.r, n=self.n)
        return row


def _safe(fn, *args):
    try:
        return fn(*args)
    except InvalidInputError:
        return math.nan


def evaluate(preds, golds, thresholds=THRESHOLDS, mode="duration") -> EvalReport:
    """Full report; std and r are NaN where they are undefined."""
    preds, golds = _checked(preds, golds)
    acc = tolerance_accuracy(preds, golds, thresholds, mode)
    mae_ts, mae_te = boundary_mae(preds, golds)
    d_pred, d_gold = preds[:, 1] - preds[:, 0], golds[:, 1] - golds[:, 0]
    n = int(preds.shape[0])
    pred_std = float(d_pred.std(ddof=1)) if n > 1 else math.nan
    gold_std = float(d_gold.std(ddof=1)) if n > 1 else math.nan
    return EvalReport(tuple(thresholds), acc, mae_ts, mae_te, float(d_pred.mean()), pred_std,
                      float(d_gold.mean()), gold_std, _safe(pearson, d_pred, d_gold), n, mode)


def aggregate(reports) -> EvalReport:
    """Per-metric mean weighted by each report's example count."""
    reports = list(reports)
    if not reports:
        raise InvalidInputError("nothing to aggregate")
    thresholds = reports[0].thresholds
    if any(r.thresholds != thresholds for r in reports):
        raise InvalidInputError("reports use different thresholds")
    n = np.array([r.n for r in reports], dtype=np.float64)
    wts = n / n.sum()

    def wmean(values):
        return float(np.average(np.asarray(values, dtype=np.float64), weights=wts))

    acc = np.average(np.vstack([r.accuracy for r in reports]), axis=0, weights=wts)
    return EvalReport(thresholds, acc,
                      wmean([r.mae_ts for r in reports]), wmean([r.mae_te for r in reports]),
                      wmean([r.pred_mean for r in reports]), wmean([r.pred_std for r in reports]),
                      wmean([r.gold_mean for r in reports]), wmean([r.gold_std for r in reports]),
                      wmean([r.r for r in reports]), int(n.sum()), reports[0].mode)


def format_report(reports, labels=None) -> str:
    """Text table ``<=5 <=10 <=15 <=20 | dTs dTe`` plus duration statistics."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    labels = list(labels) if labels is not None else [""] * len(reports)
    width = max([5] + [len(s) for s in labels])
    thresholds = reports[0].thresholds
    head = " ".join(f"{'<=' + format(t, 'g'):>6}" for t in thresholds)
    lines = [f"{'':<{width}} {head} | {'dTs':>6} {'dTe':>6} | {'dur':>11} {'gold dur':>11} "
             f"{'r':>6} {'n':>5}"]
    for label, rep in zip(labels, reports):
        accs = " ".join(f"{a:6.1f}" for a in rep.accuracy)
        lines.append(f"{label:<{width}} {accs} | {rep.mae_ts:6.2f} {rep.mae_te:6.2f} | "
                     f"{rep.pred_mean:5.1f}±{rep.pred_std:<5.1f} {rep.gold_mean:5.1f}±{rep.gold_std:<5.1f} "
                     f"{rep.r:6.3f} {rep.n:5d}")
    return "\n".join(lines)


def write_report_csv(path, reports, labels=None):
    if isinstance(reports, EvalReport):
        reports = [reports]
    labels = list(labels) if labels is not None else [""] * len(reports)
    rows = [dict(label=label, mode=rep.mode, **rep.as_row()) for label, rep in zip(labels, reports)]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()})


# ---------------------------------------------------------------- splits

@dataclass
class Fold:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    name: str = ""

    def take(self, items):
        """(train, validation, test) lists drawn from ``items`` by index."""
        return tuple([items[i] for i in idx] for idx in (self.train, self.validation, self.test))


def _carve_validation(rng, remaining, val_fraction):
    if not 0 <= val_fraction < 1:
        raise InvalidInputError("val_fraction must be in [0, 1)")
    remaining = rng.permutation(remaining)
    n_val = int(math.floor(val_fraction * remaining.size))
    return np.sort(remaining[n_val:]), np.sort(remaining[:n_val])


def train_val_split(n, val_fraction=0.15, seed=0):
    """Seeded ``(train, validation)`` index split with at least one item in each."""
    if n < 2:
        raise InvalidInputError("need at least two items to hold out a validation set")
    if not 0 < val_fraction < 1:
        raise InvalidInputError("val_fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = min(n - 1, max(1, int(math.floor(val_fraction * n))))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _size(dataset):
    return int(dataset) if isinstance(dataset, (int, np.integer)) else len(dataset)


def kfold_split(dataset, k=5, val_fraction=0.15, seed=0) -> list:
    """Seeded k-fold partition of ``range(n)`` (``dataset`` is a size or a sequence).

    Each fold's test set is one of ``k`` near-equal shuffled chunks; a
    ``floor(val_fraction * remaining)`` validation set is carved from the rest.
    """
    n = _size(dataset)
    if k < 2:
        raise InvalidInputError("k must be at least 2")
    if n < k:
        raise InvalidInputError(f"cannot make {k} folds from {n} items")
    rng = np.random.default_rng(seed)
    chunks = np.array_split(rng.permutation(n), k)
    folds = []
    for i, test in enumerate(chunks):
        rest = np.concatenate([c for j, c in enumerate(chunks) if j != i])
        train, val = _carve_validation(rng, rest, val_fraction)
        folds.append(Fold(train, val, np.sort(test), f"fold{i + 1}"))
    return folds


def _speaker_of(item):
    return item if isinstance(item, str) else getattr(item, "speaker", None) or getattr(item, "speaker_id")


def loso_split(dataset, val_fraction=0.15, seed=0) -> dict:
    """One fold per speaker, keyed by speaker id, in sorted speaker order.

    ``dataset`` holds speaker ids or objects with a ``speaker``/``speaker_id``
    attribute.
    """
    speakers = np.array([_speaker_of(item) for item in dataset], dtype=object)
    names = sorted(set(speakers))
    if len(names) < 2:
        raise InvalidInputError("leave-one-speaker-out needs at least two speakers")
    rng = np.random.default_rng(seed)
    folds = {}
    for name in names:
        test = np.flatnonzero(speakers == name)
        train, val = _carve_validation(rng, np.flatnonzero(speakers != name), val_fraction)
        folds[name] = Fold(train, val, test, name)
    return folds
