"""Synthetic vowel + pre-aspiration + closure (+ burst) tokens with known boundaries.

Each token is built from parallel source signals mixed through gain
envelopes.  Between neighbouring segments the gains cross-fade linearly over
5 ms and the recorded boundary is the cross-fade midpoint, so ``t_s`` and
``t_e`` are exact integers in milliseconds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, signal, stats

from .acoustics import Waveform

WORDS = ("cook", "kit", "tap", "pick", "bat", "cut", "top", "pot", "seat", "lake", "map", "hat")
CROSSFADE_MS = 5.0
PRE_WINDOW_MS = 50
POST_WINDOW_MS = 60


@dataclass(frozen=True)
class GenParams:
    sample_rate: int = 16000
    vowel_ms: tuple = (80.0, 160.0)
    preasp_mean_ms: float = 37.6
    preasp_std_ms: float = 20.8
    preasp_bounds_ms: tuple = (8.0, 120.0)
    closure_ms: tuple = (45.0, 110.0)
    min_tail_ms: float = 60.0                # signal kept after t_e
    burst_prob: float = 0.6
    f0_range: tuple = (90.0, 230.0)
    highpass_hz: float = 3000.0
    aspiration_level: tuple = (0.05, 0.3)    # aspiration rms relative to vowel rms
    aspiration_fade: tuple = (0.2, 1.0)      # aspiration level reached at t_e, relative
    flutter_depth: tuple = (0.3, 0.95)       # depth of slow turbulent dips in the aspiration
    transition_ms: tuple = (5.0, 40.0)       # breathy vowel offset before t_s
    vowel_floor: tuple = (0.1, 0.6)          # vowel amplitude reached at t_s, relative
    breathiness: tuple = (0.0, 1.0)          # vowel-tail friction, relative to aspiration
    snr_db: tuple = (18.0, 38.0)
    amplitude: tuple = (0.2, 0.6)            # peak level after normalisation
    window_jitter_ms: int = 20
    n_speakers: int = 8
    speaker_f0_spread: float = 0.15
    speaker_duration_spread_ms: float = 5.0
    seed: int = 0


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    f0: float
    duration_offset_ms: float
    aspiration_gain: float
    formant_scale: float


NEUTRAL_SPEAKER = SpeakerProfile("spk00", 140.0, 0.0, 1.0, 1.0)


@dataclass
class SynthToken:
    waveform: Waveform
    t_s: int
    t_e: int
    speaker_id: str
    word_id: str
    window: tuple
    token_id: str = ""
    has_burst: bool = field(default=False, repr=False)

    @property
    def duration_ms(self) -> float:
        return self.waveform.duration_ms


@lru_cache(maxsize=32)
def truncnorm_params(mean, std, lo, hi):
    """(loc, scale) of a normal whose truncation to [lo, hi] has the given moments."""
    def moments(x):
        loc, log_scale = x
        scale = np.exp(log_scale)
        d = stats.truncnorm((lo - loc) / scale, (hi - loc) / scale, loc=loc, scale=scale)
        return [d.mean() - mean, d.std() - std]

    sol = optimize.least_squares(moments, [mean, np.log(std)], xtol=1e-12, ftol=1e-12)
    return float(sol.x[0]), float(np.exp(sol.x[1]))


def sample_preasp_duration(rng, params: GenParams, offset_ms=0.0) -> int:
    lo, hi = params.preasp_bounds_ms
    loc, scale = truncnorm_params(params.preasp_mean_ms, params.preasp_std_ms, lo, hi)
    loc += offset_ms
    d = stats.truncnorm.rvs((lo - loc) / scale, (hi - loc) / scale, loc=loc, scale=scale,
                            random_state=rng)
    return int(np.clip(np.rint(d), lo, hi))


def make_speakers(params: GenParams, rng) -> list:
    n = max(1, params.n_speakers)
    f0_lo, f0_hi = params.f0_range
    base = rng.uniform(f0_lo * 1.1, f0_hi * 0.9, size=n)
    offsets = rng.normal(0.0, params.speaker_duration_spread_ms, size=n)
    offsets -= offsets.mean()   # keep the corpus mean on target
    gains = np.exp(rng.normal(0.0, 0.25, size=n))
    fscale = np.exp(rng.normal(0.0, params.speaker_f0_spread / 2, size=n))
    return [SpeakerProfile(f"spk{i:02d}", float(base[i]), float(offsets[i]),
                           float(gains[i]), float(fscale[i])) for i in range(n)]


def _resonator(x, freq, bw, sr):
    r = np.exp(-np.pi * bw / sr)
    theta = 2 * np.pi * freq / sr
    a = [1.0, -2 * r * np.cos(theta), r * r]
    return signal.lfilter([1.0 - r], a, x)


def _ramp(n, sr, t0_ms, t1_ms):
    """0 before t0, 1 after t1, linear in between (sample domain)."""
    t = np.arange(n) * 1000.0 / sr
    return np.clip((t - t0_ms) / (t1_ms - t0_ms), 0.0, 1.0)


def _voice_source(n, sr, f0, rng):
    t = np.arange(n) / sr
    drift = 1.0 - 0.08 * t / max(t[-1], 1e-9) + 0.01 * np.sin(2 * np.pi * rng.uniform(3, 6) * t)
    inst = f0 * drift * (1.0 + 0.003 * rng.standard_normal(n))
    phase = np.cumsum(inst / sr)
    pulses = np.zeros(n)
    pulses[1:][np.diff(np.floor(phase)) > 0] = 1.0
    # crude glottal pulse shaping
    return signal.lfilter([1.0], [1.0, -0.95], pulses) - signal.lfilter([1.0], [1.0, -0.7], pulses)


def _flutter(n, sr, depth, rng):
    """Slow random gain in [1 - depth, 1] with dips lasting roughly 5-20 ms."""
    knots = rng.random(int(n * 1000 // sr) // 8 + 3)
    t_knots = np.arange(knots.size) * 8.0
    smooth = np.interp(np.arange(n) * 1000.0 / sr, t_knots, knots)
    return 1.0 - depth * smooth ** 2


def _rms(x):
    return float(np.sqrt(np.mean(x ** 2))) if x.size else 0.0


def generate_token(rng, params: GenParams = GenParams(), speaker: SpeakerProfile = NEUTRAL_SPEAKER,
                   word_id: str | None = None, token_id: str = "") -> SynthToken:
    """Draw one token; every random choice comes from ``rng``."""
    sr = params.sample_rate
    vowel_ms = int(np.rint(rng.uniform(*params.vowel_ms)))
    preasp_ms = sample_preasp_duration(rng, params, speaker.duration_offset_ms)
    closure_ms = int(np.rint(rng.uniform(*params.closure_ms)))
    has_burst = bool(rng.random() < params.burst_prob)
    release_ms = int(np.rint(rng.uniform(15, 30))) if has_burst else 0
    tail_ms = max(10, int(np.ceil(params.min_tail_ms)) - closure_ms - release_ms)
    t_s = vowel_ms
    t_e = t_s + preasp_ms
    total_ms = t_e + closure_ms + release_ms + tail_ms
    n = int(total_ms * sr // 1000)

    # vowel: pulse train through three formants
    f0 = speaker.f0 * np.exp(rng.normal(0, 0.05))
    src = _voice_source(n, sr, f0, rng)
    fs = speaker.formant_scale
    f1, f2, f3 = rng.uniform(450, 800) * fs, rng.uniform(1000, 2000) * fs, rng.uniform(2300, 2900) * fs
    vowel = _resonator(src, f1, 80, sr) + 0.5 * _resonator(src, f2, 120, sr) \
        + 0.25 * _resonator(src, f3, 200, sr)
    vowel /= _rms(vowel) or 1.0
    trans = rng.uniform(*params.transition_ms)
    offset_ramp = _ramp(n, sr, t_s - trans, t_s)
    decay = 1.0 - (1.0 - rng.uniform(*params.vowel_floor)) * offset_ramp
    onset = _ramp(n, sr, 0.0, 10.0)

    hp = signal.butter(4, params.highpass_hz, btype="highpass", fs=sr, output="sos")
    noise = signal.sosfilt(hp, rng.standard_normal(n))
    noise /= _rms(noise) or 1.0
    level = rng.uniform(*params.aspiration_level) * speaker.aspiration_gain
    fade = rng.uniform(*params.aspiration_fade)
    asp_shape = level * (1.0 - (1.0 - fade) * _ramp(n, sr, t_s, t_e)) \
        * _flutter(n, sr, rng.uniform(*params.flutter_depth), rng)
    breath = rng.uniform(*params.breathiness) * level * offset_ramp

    h = CROSSFADE_MS / 2
    g_vowel = 1.0 - _ramp(n, sr, t_s - h, t_s + h)
    g_asp = _ramp(n, sr, t_s - h, t_s + h) * (1.0 - _ramp(n, sr, t_e - h, t_e + h))
    g_closure = _ramp(n, sr, t_e - h, t_e + h)

    closure = 0.004 * rng.standard_normal(n)
    x = g_vowel * onset * decay * (vowel + breath * noise) + g_asp * asp_shape * noise \
        + g_closure * closure

    if has_burst:
        b0 = int((t_e + closure_ms) * sr // 1000)
        blen = int(0.004 * sr)
        rlen = int(release_ms * sr // 1000) - blen
        env = np.exp(-np.arange(blen) / (0.001 * sr))
        x[b0:b0 + blen] += rng.uniform(0.5, 1.5) * rng.standard_normal(blen) * env
        rel = np.linspace(1.0, 0.0, rlen) * level
        x[b0 + blen:b0 + blen + rlen] += rel * noise[b0 + blen:b0 + blen + rlen]

    snr = rng.uniform(*params.snr_db)
    x += rng.standard_normal(n) * 10 ** (-snr / 20)
    x *= rng.uniform(*params.amplitude) / np.max(np.abs(x))

    jitter = params.window_jitter_ms
    w0 = max(0, t_s - PRE_WINDOW_MS - int(rng.integers(0, jitter + 1)))
    w1 = min(int(total_ms) - 1, t_e + POST_WINDOW_MS + int(rng.integers(0, jitter + 1)))
    if word_id is None:
        word_id = WORDS[int(rng.integers(len(WORDS)))]
    return SynthToken(Waveform(x, sr), t_s, t_e, speaker.speaker_id, word_id, (w0, w1),
                      token_id, has_burst)


def generate_corpus(params: GenParams, n: int) -> list:
    """``n`` tokens assigned round-robin over ``params.n_speakers`` speakers.

    Token ``i`` draws from its own child of ``SeedSequence(params.seed)`` so
    any subset of the corpus can be regenerated independently.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    root = np.random.SeedSequence(params.seed)
    spk_seq, tok_seq = root.spawn(2)
    speakers = make_speakers(params, np.random.default_rng(spk_seq))
    tokens = []
    for i, child in enumerate(tok_seq.spawn(n)):
        spk = speakers[i % len(speakers)]
        tokens.append(generate_token(np.random.default_rng(child), params, spk,
                                     token_id=f"tok{i:05d}"))
    return tokens
