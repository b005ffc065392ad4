"""Acceptance gate: the ten end-to-end criteria, one PASS/FAIL line each.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the summary
lines interleaved with the test names.
"""
import math
import time

import numpy as np
import pytest

from oracles import enumerate_pairs, first_argmax, naive_phi
from preasp.acoustics import (E_HIGH, E_LOW, E_TOTAL, H_WIENER, N_FEATURES, P_MAX, ZC,
                              FeatureSequence, NormStats, Waveform, extract_features, pitch_track,
                              stft_power, wiener_entropy)
from preasp.data import (AnnotationRecord, Example, PredictionRecord, examples_from_tokens,
                         read_annotations, read_predictions, write_annotations, write_predictions)
from preasp.evaluation import aggregate, evaluate, loso_split, train_val_split
from preasp.featuremaps import (DIFF_TE, DIFF_TS, MAX, MEAN, MEAN_MINUS_POST, CumulativeStats,
                                ScoreTables, default_spec, phi, phi_matrix)
from preasp.frame_model import (FrameConfig, FrameNet, decode, load_frame_model, loss_and_grads,
                                save_frame_model, train_frame_model)
from preasp.structured import (StructuredModel, infer, load_structured, loss_augmented_infer,
                               pa_step, pa_update, save_structured, task_loss, train_structured)
from preasp.synthdata import GenParams, generate_corpus

CORPUS_SEED = 7
N_TOKENS, N_SPEAKERS, N_TRAIN = 500, 8, 400

_results = {}


def report(request, number, title, ok, detail):
    _results[number] = ok
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} -- {detail}"
    reporter = request.config.pluginmanager.getplugin("terminalreporter")
    if reporter is not None:
        reporter.write_line("")
        reporter.write_line(line)
    else:
        print(line)
    assert ok, line


# ---------------------------------------------------------------- 1

def _random_instance(rng):
    T = int(rng.integers(12, 81))
    x = rng.normal(size=(T, N_FEATURES))
    if rng.random() < 0.3:
        x = np.round(x)
    spec = default_spec().with_duration_stats(rng.uniform(0, 30), rng.uniform(1, 20))
    w = rng.normal(size=spec.N)
    if rng.random() < 0.2:
        w[rng.random(spec.N) < 0.7] = 0.0
    min_dur = int(rng.integers(1, 5))
    max_dur = int(rng.integers(min_dur + 1, T))
    model = StructuredModel(w, spec, None, min_dur=min_dur, max_dur=max_dur)
    lo = int(rng.integers(0, T // 3))
    hi = int(rng.integers(lo + min_dur + 1, T + 3))
    ts = int(rng.integers(0, T - min_dur - 1))
    te = int(rng.integers(ts + 1, T))
    return model, Example("r", FeatureSequence(x), (ts, te), (lo, hi))


def _brute(model, ex, window, augment):
    x = ex.features.frames
    pairs = enumerate_pairs(x.shape[0], window[0], window[1], model.min_dur, model.max_dur)
    phis = phi_matrix(CumulativeStats(x), [p[0] for p in pairs], [p[1] for p in pairs], model.spec)
    gold_d = ex.gold[1] - ex.gold[0]
    scores = [float(f @ model.w) + (max(abs((te - ts) - gold_d) - model.epsilon, 0.0) if augment else 0.0)
              for (ts, te), f in zip(pairs, phis)]
    return pairs[first_argmax(scores)]


def test_criterion_01_inference_oracle(request):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(100):
        model, ex = _random_instance(rng)
        mismatches += infer(model, ex) != _brute(model, ex, ex.window, False)
        window = (max(0, ex.gold[0] - 50), min(ex.T - 1, ex.gold[1] + 60))
        mismatches += loss_augmented_infer(model, ex) != _brute(model, ex, window, True)
    elapsed = time.perf_counter() - t0
    report(request, 1, "inference == brute force", mismatches == 0 and elapsed < 10,
           f"{mismatches} mismatches over 100 instances x 2 searches, {elapsed:.2f} s (< 10 s)")


# ---------------------------------------------------------------- 2

def test_criterion_02_pa_closed_form(request):
    rng = np.random.default_rng(202)
    worst, passive_ok, n_active, n_passive = 0.0, True, 0, 0
    for i in range(100):
        if i % 2 == 0:
            model, ex = _random_instance(rng)
            if rng.random() < 0.5:
                model.C = float(rng.choice([1e-3, 0.1]))
            step = pa_update(model, ex)
            cum = CumulativeStats(ex.features.frames)
            p = phi_matrix(cum, [ex.gold[0], step.violator[0]], [ex.gold[1], step.violator[1]], model.spec)
            w, w2, tau, hinge, gamma, C = model.w, step.w, step.tau, step.hinge, step.loss, model.C
            dphi = p[0] - p[1]
        else:
            n = int(rng.integers(2, 70))
            w, pg, pv = rng.normal(size=n), rng.normal(size=n), rng.normal(size=n)
            dphi = pg - pv
            gamma = float(rng.uniform(0, 20))
            if rng.random() < 0.4:
                gamma = max(0.0, float(w @ dphi) - rng.uniform(0, 1))
            C = float(rng.choice([0.01, 50.0]))
            w2, tau, hinge = pa_step(w, pg, pv, gamma, C)
        if hinge == 0.0:
            n_passive += 1
            passive_ok &= bool(np.array_equal(w2, w)) and w2.tobytes() == w.tobytes()
        elif tau < C:
            n_active += 1
            worst = max(worst, abs(float(w2 @ dphi) - gamma))
    ok = worst <= 1e-9 and passive_ok and n_active > 0 and n_passive > 0
    report(request, 2, "PA closed form", ok,
           f"max |w'.dphi - gamma| = {worst:.2e} over {n_active} active steps; "
           f"{n_passive} passive steps unchanged bit-for-bit: {passive_ok}")


# ---------------------------------------------------------------- 3

def test_criterion_03_task_loss(request):
    fixtures = [((10, 50), (12, 55), 1.0), ((10, 50), (30, 70), 0.0), ((10, 50), (10, 50), 0.0)]
    fixtures_ok = all(task_loss(g, p, 2.0) == want for g, p, want in fixtures)
    rng = np.random.default_rng(303)
    shift_ok = True
    for _ in range(1000):
        gold = tuple(sorted(rng.integers(0, 1000, 2)))
        pred = tuple(sorted(rng.integers(0, 1000, 2)))
        k = int(rng.integers(-500, 500))
        shift_ok &= bool(task_loss(gold, pred) == task_loss(gold, (pred[0] + k, pred[1] + k)))
    report(request, 3, "task loss", fixtures_ok and shift_ok,
           f"fixtures exact: {fixtures_ok}; shift invariance over 1000 pairs: {shift_ok}")


# ---------------------------------------------------------------- 4

def test_criterion_04_phi(request):
    rng = np.random.default_rng(404)
    spec = default_spec().with_duration_stats(37.0, 21.0)
    worst = 0.0
    for _ in range(100):
        T = int(rng.integers(2, 250))
        x = rng.normal(size=(T, N_FEATURES)) * rng.uniform(0.1, 50)
        ts = int(rng.integers(0, T - 1))
        te = int(rng.integers(ts + 1, T))
        ref = naive_phi(x, ts, te, spec)
        worst = max(worst, float(np.abs(phi(x, (ts, te), spec) - ref).max()),
                    float(np.abs(ScoreTables(CumulativeStats(x), spec).phi(ts, te)[0] - ref).max()))
    diff_cols = [j for j, d in enumerate(spec.descriptors)
                 if d.kind in (DIFF_TS, DIFF_TE, MEAN_MINUS_POST) or (d.kind in (MEAN, MAX) and d.s)]
    const_ok = True
    for _ in range(20):
        x = np.tile(rng.normal(size=N_FEATURES) * 10, (int(rng.integers(5, 200)), 1))
        T = x.shape[0]
        ts = rng.integers(0, T - 1, 50)
        te = np.minimum(ts + rng.integers(1, 60, 50), T - 1)
        P = phi_matrix(CumulativeStats(x), ts[te > ts], te[te > ts], spec)
        const_ok &= bool(np.all(P[:, diff_cols] == 0.0))
    report(request, 4, "phi correctness", worst <= 1e-9 and const_ok,
           f"max |prefix - naive| = {worst:.2e} (<= 1e-9); constant-sequence differences exactly 0: {const_ok}")


# ---------------------------------------------------------------- 5

def test_criterion_05_gradient_check(request):
    rng = np.random.default_rng(505)
    h, worst = 1e-5, 0.0
    for _ in range(10):
        net = FrameNet.init(rng)
        net = net.with_params({**net.params(), "b1": rng.normal(size=40) * 0.1, "b2": float(rng.normal())})
        x = rng.normal(size=(1, 40))
        y = np.array([float(rng.integers(2))])
        _, grads = loss_and_grads(net, x, y)
        params = net.params()
        for name, value in params.items():
            flat = np.atleast_1d(value).astype(np.float64).ravel()
            g = np.atleast_1d(grads[name]).ravel()
            for i in range(flat.size):
                plus, minus = flat.copy(), flat.copy()
                plus[i] += h
                minus[i] -= h
                shape = np.shape(value)
                lp, _ = loss_and_grads(net.with_params({**params, name: plus.reshape(shape)}), x, y)
                lm, _ = loss_and_grads(net.with_params({**params, name: minus.reshape(shape)}), x, y)
                num = (lp - lm) / (2 * h)
                worst = max(worst, abs(g[i] - num) / max(abs(g[i]), abs(num), 1e-7))
    report(request, 5, "neural gradient check", worst < 1e-4,
           f"max relative error {worst:.2e} over every parameter of 10 nets (< 1e-4)")


# ---------------------------------------------------------------- 6

def test_criterion_06_acoustics(request):
    rng = np.random.default_rng(606)
    sr = 16000
    x = 0.3 * rng.standard_normal(int(sr * 0.2))
    w = Waveform(x, sr)
    spec = stft_power(w, 100.0)
    nfft = 2 * (spec.size - 1)
    seg = x[1600 - 40:1600 + 40] * np.hamming(80)
    parseval = abs((spec[0] + 2 * spec[1:-1].sum() + spec[-1]) / nfft - np.sum(seg ** 2)) / np.sum(seg ** 2)

    t = np.arange(int(sr * 0.3)) / sr
    saw = 0.5 * (2.0 * ((t * 120.0) % 1.0) - 1.0)
    c = 2.5
    a = extract_features(Waveform(x + saw[:x.size], sr)).frames[10:-20]
    b = extract_features(Waveform(c * (x + saw[:x.size]), sr)).frames[10:-20]
    shift_err = max(float(np.abs(b[:, k] - a[:, k] - 2 * math.log(c)).max())
                    for k in (E_TOTAL, E_LOW, E_HIGH, P_MAX))
    unchanged = float(np.abs(b[:, H_WIENER] - a[:, H_WIENER]).max()) <= 1e-9 and np.array_equal(b[:, ZC], a[:, ZC])

    flat = float(wiener_entropy(np.full(65, 0.37)))
    f0 = float(np.median(pitch_track(Waveform(saw, sr))[20:-20]))
    ok = parseval <= 1e-6 and shift_err <= 1e-9 and unchanged and flat == 0.0 and abs(f0 - 120) <= 5
    report(request, 6, "acoustics properties", ok,
           f"Parseval rel err {parseval:.1e}; 2 log c shift err {shift_err:.1e}; "
           f"H/ZC unchanged {unchanged}; flat Wiener {flat}; sawtooth f0 {f0:.2f} Hz")


# ---------------------------------------------------------------- 7 / 8

@pytest.fixture(scope="module")
def corpus():
    t0 = time.perf_counter()
    tokens = generate_corpus(GenParams(n_speakers=N_SPEAKERS, seed=CORPUS_SEED), N_TOKENS)
    return examples_from_tokens(tokens), time.perf_counter() - t0


@pytest.fixture(scope="module")
def random_split_result(corpus):
    examples, t_gen = corpus
    t0 = time.perf_counter()
    train_all, test = examples[:N_TRAIN], examples[N_TRAIN:]
    tr_idx, va_idx = train_val_split(len(train_all), 0.15, seed=CORPUS_SEED)
    train = [train_all[i] for i in tr_idx]
    val = [train_all[i] for i in va_idx]
    struct, _ = train_structured(train, val)
    net, _ = train_frame_model(train, val, FrameConfig())
    gold = [ex.gold for ex in test]
    s_rep = evaluate([infer(struct, ex) for ex in test], gold)
    f_rep = evaluate([(d.t_s, d.t_e) for d in (decode(net, ex) for ex in test)], gold)
    return s_rep, f_rep, t_gen + time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_07_synthetic_replication(request, random_split_result):
    s, f, elapsed = random_split_result
    ok = s.accuracy[1] >= 80.0 and s.accuracy[0] > f.accuracy[0] and elapsed < 600
    report(request, 7, "synthetic end-to-end", ok,
           f"structured {s.accuracy[1]:.1f}% @10 ms (>= 80); @5 ms structured {s.accuracy[0]:.1f}% "
           f"vs frame {f.accuracy[0]:.1f}%; {elapsed:.0f} s (< 600 s)")


@pytest.mark.slow
def test_criterion_08_loso(request, corpus, random_split_result):
    examples, _ = corpus
    reports = []
    for fold in loso_split(examples, 0.15, seed=CORPUS_SEED).values():
        train, val, test = fold.take(examples)
        model, _ = train_structured(train, val)
        reports.append(evaluate([infer(model, ex) for ex in test], [ex.gold for ex in test]))
    loso = aggregate(reports).accuracy[1]
    rand = random_split_result[0].accuracy[1]
    report(request, 8, "LOSO vs random split", abs(loso - rand) <= 10.0,
           f"LOSO {loso:.1f}% vs random {rand:.1f}% @10 ms (gap {abs(loso - rand):.1f} <= 10)")


# ---------------------------------------------------------------- 9

def test_criterion_09_metric_fixture(request):
    from pathlib import Path
    rows = read_predictions(Path(__file__).parent / "fixtures" / "metric_fixture_predictions.csv")
    rep = evaluate([(r.pred_ts_ms, r.pred_te_ms) for r in rows], [(r.gold_ts_ms, r.gold_te_ms) for r in rows])
    checks = {
        "tolerance": list(rep.accuracy) == [25.0, 25.0, 75.0, 75.0],
        "mae": (rep.mae_ts, rep.mae_te) == (4.0, 9.75),
        "duration stats": (rep.pred_mean, rep.gold_mean) == (35.25, 35.0)
        and rep.pred_std == math.sqrt(1088.75 / 3) and rep.gold_std == math.sqrt(500 / 3),
        "pearson": abs(rep.r - 345 / math.sqrt(1088.75 * 500)) <= 1e-15,
    }
    report(request, 9, "metric fixture", all(checks.values()),
           ", ".join(f"{k} {'ok' if v else 'WRONG'}" for k, v in checks.items()))


# ---------------------------------------------------------------- 10

def test_criterion_10_persistence(request, tmp_path):
    rng = np.random.default_rng(1010)
    spec = default_spec().with_duration_stats(37.6, 20.8)
    norm = NormStats(rng.normal(size=8) * 1e3, rng.uniform(1e-3, 1e3, size=8))
    sm = StructuredModel(rng.normal(size=spec.N) * 10 ** rng.uniform(-8, 8, spec.N), spec, norm)
    save_structured(sm, tmp_path / "s.model")
    sb = load_structured(tmp_path / "s.model")
    struct_ok = sb.w.tobytes() == sm.w.tobytes() and sb.spec == sm.spec \
        and sb.norm.mean.tobytes() == norm.mean.tobytes() and sb.norm.std.tobytes() == norm.std.tobytes()

    net = FrameNet.init(rng, norm=norm)
    net = net.with_params({**net.params(), "b1": rng.normal(size=40) / 3, "b2": math.pi})
    save_frame_model(net, tmp_path / "f.model")
    nb = load_frame_model(tmp_path / "f.model")
    frame_ok = all(nb.params()[k].tobytes() == np.asarray(v).tobytes() for k, v in net.params().items()) \
        and nb.norm.mean.tobytes() == norm.mean.tobytes()

    preds = [PredictionRecord(f"e{i}", float(rng.uniform(0, 500)), float(rng.uniform(500, 900)),
                              float(rng.integers(0, 500)), float(rng.integers(500, 900))) for i in range(50)]
    write_predictions(tmp_path / "p.csv", preds)
    pred_ok = read_predictions(tmp_path / "p.csv") == preds
    anns = [AnnotationRecord(f"e{i}", str(tmp_path / f"e{i}.wav"), f"spk{i % 3}", "cook",
                             float(100 + i), float(140 + i + rng.uniform()), float(40 + i), float(300 + i))
            for i in range(50)]
    write_annotations(tmp_path / "a.csv", anns)
    ann_ok = read_annotations(tmp_path / "a.csv") == anns
    ok = struct_ok and frame_ok and pred_ok and ann_ok
    report(request, 10, "persistence round trips", ok,
           f"structured {struct_ok}, frame {frame_ok}, predictions CSV {pred_ok}, annotations CSV {ann_ok}")
