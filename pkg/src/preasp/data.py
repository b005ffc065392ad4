"""Annotation and prediction CSV files, and the in-memory ``Example`` type.

Annotation CSV columns::

    example_id,audio_path,speaker_id,word_id,gold_ts_ms,gold_te_ms,window_start_ms,window_end_ms

Gold columns may be empty at prediction time.  Relative audio paths are
resolved against the CSV's directory.
"""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acoustics import FeatureSequence, extract_features, read_wav, write_wav
from .errors import DataError, InvalidInputError

ANNOTATION_COLUMNS = ("example_id", "audio_path", "speaker_id", "word_id", "gold_ts_ms",
                      "gold_te_ms", "window_start_ms", "window_end_ms")
PREDICTION_COLUMNS = ("example_id", "pred_ts_ms", "pred_te_ms", "gold_ts_ms", "gold_te_ms")

PRE_WINDOW_MS = 50
POST_WINDOW_MS = 60


def _fmt(x):
    if x is None:
        return ""
    return format(float(x), ".17g")


def _opt_float(text, field, where):
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{where}: {field} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"{where}: {field} is not finite")
    return value


@dataclass(frozen=True)
class AnnotationRecord:
    example_id: str
    audio_path: str
    speaker_id: str
    word_id: str
    gold_ts_ms: float | None
    gold_te_ms: float | None
    window_start_ms: float
    window_end_ms: float

    def __post_init__(self):
        if not self.window_start_ms < self.window_end_ms:
            raise DataError(f"{self.example_id}: window_start_ms must be < window_end_ms")
        if (self.gold_ts_ms is None) != (self.gold_te_ms is None):
            raise DataError(f"{self.example_id}: gold onset and offset must both be given")
        if self.has_gold:
            if not self.gold_ts_ms < self.gold_te_ms:
                raise DataError(f"{self.example_id}: gold onset must precede offset")
            if self.gold_ts_ms < self.window_start_ms or self.gold_te_ms > self.window_end_ms:
                raise DataError(f"{self.example_id}: window does not contain the gold pair")

    @property
    def has_gold(self) -> bool:
        return self.gold_ts_ms is not None


def read_annotations(path) -> list:
    path = Path(path)
    base = path.parent
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(ANNOTATION_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            audio = row["audio_path"]
            if audio and not os.path.isabs(audio):
                audio = str((base / audio).resolve())
            ws = _opt_float(row["window_start_ms"], "window_start_ms", where)
            we = _opt_float(row["window_end_ms"], "window_end_ms", where)
            if ws is None or we is None:
                raise DataError(f"{where}: search window is required")
            records.append(AnnotationRecord(
                row["example_id"], audio, row["speaker_id"], row["word_id"],
                _opt_float(row["gold_ts_ms"], "gold_ts_ms", where),
                _opt_float(row["gold_te_ms"], "gold_te_ms", where), ws, we))
    ids = [r.example_id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate example_id values")
    return records


def write_annotations(path, records):
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ANNOTATION_COLUMNS)
        for r in records:
            audio = r.audio_path
            if os.path.isabs(audio):
                try:
                    audio = str(Path(audio).relative_to(base))
                except ValueError:
                    pass
            writer.writerow([r.example_id, audio, r.speaker_id, r.word_id, _fmt(r.gold_ts_ms),
                             _fmt(r.gold_te_ms), _fmt(r.window_start_ms), _fmt(r.window_end_ms)])


@dataclass(frozen=True)
class PredictionRecord:
    example_id: str
    pred_ts_ms: float | None
    pred_te_ms: float | None
    gold_ts_ms: float | None = None
    gold_te_ms: float | None = None
    error: str = ""


def write_predictions(path, predictions):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTION_COLUMNS)
        for p in predictions:
            writer.writerow([p.example_id, _fmt(p.pred_ts_ms), _fmt(p.pred_te_ms),
                             _fmt(p.gold_ts_ms), _fmt(p.gold_te_ms)])


def read_predictions(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PREDICTION_COLUMNS:
            raise DataError(f"{path}: expected columns {','.join(PREDICTION_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            out.append(PredictionRecord(
                row["example_id"],
                *(_opt_float(row[c], c, where) for c in PREDICTION_COLUMNS[1:])))
    return out


# ---------------------------------------------------------------- examples

@dataclass
class Example:
    """Features plus (optional) gold frames and an inclusive search window."""
    example_id: str
    features: FeatureSequence
    gold: tuple | None
    window: tuple
    speaker: str = ""
    word: str = ""

    @property
    def T(self) -> int:
        return self.features.T


def training_window(gold, T, pre=PRE_WINDOW_MS, post=POST_WINDOW_MS):
    ts, te = gold
    return max(0, ts - pre), min(T - 1, te + post)


def _clamp_window(start_ms, end_ms, T):
    lo = int(np.clip(round(start_ms), 0, T - 1))
    hi = int(np.clip(round(end_ms), 0, T - 1))
    if lo >= hi:
        raise InvalidInputError(f"window [{start_ms}, {end_ms}] ms leaves no room in {T} frames")
    return lo, hi


def example_from_features(record: AnnotationRecord, features: FeatureSequence) -> Example:
    T = features.T
    gold = None
    if record.has_gold:
        gold = (int(round(record.gold_ts_ms)), int(round(record.gold_te_ms)))
        if not 0 <= gold[0] < gold[1] < T:
            raise DataError(f"{record.example_id}: gold pair outside the audio")
    window = _clamp_window(record.window_start_ms, record.window_end_ms, T)
    return Example(record.example_id, features, gold, window, record.speaker_id, record.word_id)


def _extract_record(record):
    return extract_features(read_wav(record.audio_path))


def load_examples(records, jobs: int = 1) -> list:
    """Extract features for each record (in ``jobs`` worker processes)."""
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            feats = list(pool.map(_extract_record, records))
    else:
        feats = [_extract_record(r) for r in records]
    return [example_from_features(r, f) for r, f in zip(records, feats)]


def examples_from_tokens(tokens) -> list:
    """Examples straight from in-memory synthetic tokens (no disk round trip)."""
    out = []
    for tok in tokens:
        feats = extract_features(tok.waveform)
        window = _clamp_window(tok.window[0], tok.window[1], feats.T)
        out.append(Example(tok.token_id, feats, (tok.t_s, tok.t_e), window,
                           tok.speaker_id, tok.word_id))
    return out


def token_record(token, audio_path) -> AnnotationRecord:
    return AnnotationRecord(token.token_id, str(audio_path), token.speaker_id, token.word_id,
                            float(token.t_s), float(token.t_e),
                            float(token.window[0]), float(token.window[1]))


def write_corpus(tokens, out_dir, annotation_name="annotations.csv") -> list:
    """Write one PCM16 WAV per token plus an annotation CSV; return the records."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for tok in tokens:
        wav = (out_dir / f"{tok.token_id}.wav").resolve()
        write_wav(wav, tok.waveform)
        records.append(token_record(tok, wav))
    write_annotations(out_dir / annotation_name, records)
    return records
