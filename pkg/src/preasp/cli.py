"""Command-line interface: ``preasp {synth,extract,train,predict,evaluate}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

Hyperparameters come from a flat ``key = value`` config file (``--config``)
and/or repeated ``--set key=value`` overrides; ``--seed`` and ``--jobs`` are
dedicated flags.  Unknown keys are rejected.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from . import __version__
from .acoustics import extract_file
from .data import (PredictionRecord, load_examples, read_annotations, read_predictions,
                   write_corpus, write_predictions)
from .errors import DataError, ModelFormatError, PreaspError
from .evaluation import (THRESHOLDS, aggregate, evaluate, format_report, kfold_split, loso_split,
                         train_val_split, write_report_csv)
from .frame_model import FrameConfig, decode, load_frame_model, save_frame_model, train_frame_model
from .frame_model import HEADER as FRAME_HEADER
from .persist import read_header
from .structured import (StructuredConfig, infer, load_structured, save_structured,
                         train_structured)
from .structured import HEADER as STRUCT_HEADER
from .synthdata import GenParams, generate_corpus

log = logging.getLogger("preasp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
MODEL_TYPES = ("structured", "frame")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config

@dataclass
class RunConfig:
    """Every tunable of ``train``/``evaluate``; see README for descriptions."""
    model_type: str = "structured"
    val_fraction: float = 0.15
    # structured model
    C: float = 50.0
    epsilon: float = 2.0
    min_dur: int = 5
    max_dur: int = 150
    pa_epochs: int = 30
    pa_patience: int = 5
    average: bool = False
    pmax_reading: str = "stat-diff"
    # frame model
    lr: float = 0.01
    batch_size: int = 32
    epochs: int = 200
    patience: int = 10
    hidden: int = 40
    dropout: float = 0.3
    smooth_ms: int = 9
    threshold: float = 0.5
    # shared
    seed: int = 0

    def __post_init__(self):
        if self.model_type not in MODEL_TYPES:
            raise UsageError(f"model_type must be one of {MODEL_TYPES}, got {self.model_type!r}")
        if not 0 < self.val_fraction < 1:
            raise UsageError("val_fraction must be in (0, 1)")

    def structured(self) -> StructuredConfig:
        return StructuredConfig(self.C, self.epsilon, self.min_dur, self.max_dur, self.pa_epochs,
                                self.pa_patience, self.seed, self.average, self.pmax_reading)

    def frame(self) -> FrameConfig:
        return FrameConfig(self.lr, self.batch_size, self.epochs, self.patience, self.hidden,
                           self.dropout, self.smooth_ms, self.threshold, self.seed)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name, kind, text):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(text)
            return low in _TRUE
        return kind(text)
    except ValueError:
        raise UsageError(f"bad value for {name}: {text!r}") from None


def parse_assignments(lines, source="config") -> dict:
    """``key = value`` lines (``#`` comments, blank lines allowed) -> typed dict."""
    types = {f.name: type(f.default) for f in fields(RunConfig)}
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise UsageError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        if key not in types:
            raise UsageError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, types[key], value)
    return out


def load_config(path=None, overrides=(), seed=None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                values.update(parse_assignments(fh, str(path)))
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
    values.update(parse_assignments(overrides, "--set"))
    if seed is not None:
        values["seed"] = seed
    return RunConfig(**values)


def write_config(path, config: RunConfig):
    with open(path, "w") as fh:
        for key, value in asdict(config).items():
            fh.write(f"{key} = {str(value).lower() if isinstance(value, bool) else value}\n")


# ---------------------------------------------------------------- models

def fit_model(config: RunConfig, train, validation):
    if config.model_type == "structured":
        return train_structured(train, validation, config.structured())[0]
    return train_frame_model(train, validation, config.frame())[0]


def predict_pair(model, example):
    if hasattr(model, "spec"):
        return infer(model, example)
    d = decode(model, example)
    return d.t_s, d.t_e


def save_model(model, path):
    (save_structured if hasattr(model, "spec") else save_frame_model)(model, path)


def load_model(path):
    """Load either model type, dispatching on the file header."""
    try:
        header = read_header(path)
    except UnicodeDecodeError:
        raise ModelFormatError(f"{path}: not a model file") from None
    kind = header.split(" ", 1)[0]
    if kind == STRUCT_HEADER:
        return load_structured(path)
    if kind == FRAME_HEADER:
        return load_frame_model(path)
    raise ModelFormatError(f"{path}: unrecognised model header {header!r}")


def _labelled(records):
    missing = [r.example_id for r in records if not r.has_gold]
    if missing:
        raise DataError(f"{len(missing)} record(s) lack gold labels, e.g. {missing[0]}")
    return records


def _run_fold(args):
    config, fold, examples = args
    train, val, test = fold.take(examples)
    model = fit_model(config, train, val)
    preds = [predict_pair(model, ex) for ex in test]
    return fold.name, preds, [ex.gold for ex in test]


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    params = GenParams(sample_rate=args.sample_rate, n_speakers=args.speakers, seed=args.seed)
    tokens = generate_corpus(params, args.n)
    records = write_corpus(tokens, args.out)
    print(f"wrote {len(records)} tokens to {args.out}")
    return EXIT_OK


def cmd_extract(args):
    paths = [Path(p) for p in args.wav]
    if args.annotations:
        paths += [Path(r.audio_path) for r in read_annotations(args.annotations)]
    if not paths:
        raise UsageError("nothing to extract: give WAV files or --annotations")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            feats = list(pool.map(extract_file, paths))
    else:
        feats = [extract_file(p) for p in paths]
    for path, seq in zip(paths, feats):
        seq.to_csv(out / f"{path.stem}.features.csv")
    print(f"wrote {len(paths)} feature files to {out}")
    return EXIT_OK


def cmd_train(args):
    config = load_config(args.config, args.set, args.seed)
    if args.model_type:
        config = replace(config, model_type=args.model_type)
    records = _labelled(read_annotations(args.annotations))
    examples = load_examples(records, args.jobs)
    tr_idx, va_idx = train_val_split(len(examples), config.val_fraction, config.seed)
    log.info("training %s model on %d examples (%d for validation)",
             config.model_type, len(tr_idx), len(va_idx))
    model = fit_model(config, [examples[i] for i in tr_idx], [examples[i] for i in va_idx])
    save_model(model, args.out)
    print(f"wrote {config.model_type} model to {args.out}")
    return EXIT_OK


def cmd_predict(args):
    model = load_model(args.model)
    records = read_annotations(args.annotations)
    out, failed = [], 0
    good = [r for r in records if Path(r.audio_path).is_file()]
    examples = dict(zip((r.example_id for r in good), load_examples(good, args.jobs)))
    for r in records:
        gold = (r.gold_ts_ms, r.gold_te_ms)
        if r.example_id not in examples:
            failed += 1
            msg = f"audio file not found: {r.audio_path}"
            print(f"error: {r.example_id}: {msg}", file=sys.stderr)
            out.append(PredictionRecord(r.example_id, None, None, *gold, error=msg))
            continue
        try:
            ts, te = predict_pair(model, examples[r.example_id])
        except PreaspError as exc:
            failed += 1
            print(f"error: {r.example_id}: {exc}", file=sys.stderr)
            out.append(PredictionRecord(r.example_id, None, None, *gold, error=str(exc)))
            continue
        out.append(PredictionRecord(r.example_id, float(ts), float(te), *gold))
    write_predictions(args.out, out)
    print(f"wrote {len(out)} predictions to {args.out}")
    if failed:
        print(f"{failed} of {len(records)} record(s) failed", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _pairs_from_predictions(preds, annotations):
    if any(p.pred_ts_ms is None for p in preds):
        bad = next(p.example_id for p in preds if p.pred_ts_ms is None)
        raise DataError(f"prediction missing for {bad}")
    if annotations is None:
        if any(p.gold_ts_ms is None for p in preds):
            raise DataError("predictions file lacks gold columns; pass --annotations")
        golds = [(p.gold_ts_ms, p.gold_te_ms) for p in preds]
    else:
        gold = {r.example_id: (r.gold_ts_ms, r.gold_te_ms) for r in _labelled(annotations)}
        ids = [p.example_id for p in preds]
        if set(ids) != set(gold) or len(ids) != len(set(ids)):
            extra = sorted(set(ids) - set(gold))[:3]
            lacking = sorted(set(gold) - set(ids))[:3]
            raise DataError(f"prediction and annotation ids differ "
                            f"(unknown: {extra}, unpredicted: {lacking})")
        golds = [gold[i] for i in ids]
    return [(p.pred_ts_ms, p.pred_te_ms) for p in preds], golds


def _parse_split(text):
    if text == "loso":
        return "loso", None
    kind, _, k = text.partition(":")
    if kind == "kfold":
        try:
            k = int(k or 5)
        except ValueError:
            raise UsageError(f"bad fold count in --split {text!r}") from None
        if k < 2:
            raise UsageError("--split kfold:K needs K >= 2")
        return "kfold", k
    raise UsageError(f"--split must be kfold:K or loso, got {text!r}")


def cmd_evaluate(args):
    thresholds = tuple(args.thresholds) if args.thresholds else THRESHOLDS
    if args.split:
        if args.predictions:
            raise UsageError("--split trains its own models; drop --predictions")
        if not args.annotations:
            raise UsageError("--split needs --annotations")
        kind, k = _parse_split(args.split)
        config = load_config(args.config, args.set, args.seed)
        if args.model_type:
            config = replace(config, model_type=args.model_type)
        examples = load_examples(_labelled(read_annotations(args.annotations)), args.jobs)
        if kind == "loso":
            folds = list(loso_split(examples, config.val_fraction, config.seed).values())
        else:
            folds = kfold_split(len(examples), k, config.val_fraction, config.seed)
        jobs = [(config, f, examples) for f in folds]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_run_fold, jobs))
        else:
            results = [_run_fold(j) for j in jobs]
        labels, reports = [], []
        for name, preds, golds in results:
            labels.append(name)
            reports.append(evaluate(preds, golds, thresholds, args.mode))
            log.info("%s: %s", name, " ".join(f"{a:.1f}" for a in reports[-1].accuracy))
        labels.append("all")
        reports.append(aggregate(reports))
    else:
        if not args.predictions:
            raise UsageError("give --predictions (or --split to train and test per fold)")
        annotations = read_annotations(args.annotations) if args.annotations else None
        preds, golds = _pairs_from_predictions(read_predictions(args.predictions), annotations)
        labels, reports = ["all"], [evaluate(preds, golds, thresholds, args.mode)]
    print(format_report(reports, labels))
    if args.report:
        write_report_csv(args.report, reports, labels)
    return EXIT_OK


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _add_run_options(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--model-type", choices=MODEL_TYPES, help="overrides model_type")
    p.add_argument("--seed", type=int, help="overrides the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="preasp", description="Pre-aspiration boundary measurement.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--n", type=int, default=500, help="number of tokens (default 500)")
    p.add_argument("--speakers", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="write per-file feature CSVs")
    p.add_argument("wav", nargs="*", help="WAV files")
    p.add_argument("--annotations", help="take audio paths from an annotation CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a model from an annotation CSV")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--jobs", type=int, default=1)
    _add_run_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict boundaries for annotation records")
    p.add_argument("--model", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True, help="predictions CSV to write")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions or run cross-validation")
    p.add_argument("--predictions", help="predictions CSV")
    p.add_argument("--annotations", help="gold annotation CSV")
    p.add_argument("--split", help="kfold:K or loso (train and test per fold)")
    p.add_argument("--mode", choices=("duration", "boundary"), default="duration",
                   help="tolerance criterion (default: duration difference)")
    p.add_argument("--thresholds", type=float, nargs="+", help="tolerances in ms (default 5 10 15 20)")
    p.add_argument("--report", help="also write the report as CSV")
    p.add_argument("--jobs", type=int, default=1)
    _add_run_options(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"preasp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PreaspError, OSError) as exc:
        print(f"preasp: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort handler
        log.debug("internal error", exc_info=True)
        print(f"preasp: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
