"""Acoustic front-end: eight features per millisecond of signal.

Feature order (columns of :attr:`FeatureSequence.frames`)::

    E_total, E_low, E_high, H_wiener, P_max, R_l, V, ZC

Frame ``t`` is centred on sample ``round(t * sr / 1000)`` and there are
``floor(duration_ms)`` frames; no edge frames are trimmed.  Windows that run
past either end of the signal see replicated edge samples.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.io import wavfile

from .errors import InvalidInputError

FEATURE_NAMES = ("E_total", "E_low", "E_high", "H_wiener", "P_max", "R_l", "V", "ZC")
N_FEATURES = len(FEATURE_NAMES)
E_TOTAL, E_LOW, E_HIGH, H_WIENER, P_MAX, R_L, V, ZC = range(N_FEATURES)

LOG_FLOOR = 1e-10
MIN_SAMPLE_RATE = 8000


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidInputError("waveform must be mono (1-D samples)")
        if samples.size == 0:
            raise InvalidInputError("waveform is empty")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate < MIN_SAMPLE_RATE:
            raise InvalidInputError(
                f"sample rate must be an integer >= {MIN_SAMPLE_RATE} Hz, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        if self.duration_ms < 5.0:
            raise InvalidInputError("waveform is shorter than the 5 ms analysis window")

    @property
    def duration_ms(self) -> float:
        return 1000.0 * self.samples.size / self.sample_rate

    @property
    def n_frames(self) -> int:
        return int(np.floor(self.duration_ms + 1e-9))


@dataclass(frozen=True)
class FeatureConfig:
    window_ms: float = 5.0
    low_band: tuple = (50.0, 1000.0)
    high_cutoff: float = 3000.0
    pmax_before_ms: int = 6
    pmax_after_ms: int = 18
    pitch_window_ms: float = 25.0
    f0_min: float = 60.0
    f0_max: float = 400.0
    voicing_threshold: float = 0.45
    # voiced frames need this share of the window's peak per-period power
    # in the period around the frame centre; pins voicing edges at silence
    energy_gate: float = 0.4
    octave_ratio: float = 0.9
    voicing_smooth_ms: int = 5
    zc_window_ms: float = 5.0


DEFAULT_CONFIG = FeatureConfig()


@dataclass
class FeatureSequence:
    frames: np.ndarray
    hop_ms: float = 1.0
    names: tuple = field(default=FEATURE_NAMES)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != N_FEATURES:
            raise InvalidInputError(f"feature matrix must be T x {N_FEATURES}")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.frames[:, FEATURE_NAMES.index(name)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("frame_ms",) + FEATURE_NAMES)
            for t, row in enumerate(self.frames):
                writer.writerow([f"{t * self.hop_ms:g}"] + [format(v, ".17g") for v in row])

    @classmethod
    def from_csv(cls, path) -> "FeatureSequence":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != ("frame_ms",) + FEATURE_NAMES:
                raise InvalidInputError(f"{path}: unexpected feature CSV header")
            rows = [[float(v) for v in r[1:]] for r in reader if r]
        return cls(np.array(rows, dtype=np.float64).reshape(-1, N_FEATURES))


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, sequences) -> "NormStats":
        mats = [s.frames if isinstance(s, FeatureSequence) else np.asarray(s) for s in sequences]
        if not mats:
            raise InvalidInputError("need at least one sequence to fit normalisation")
        data = np.concatenate(mats, axis=0)
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std)

    def apply(self, seq):
        frames = seq.frames if isinstance(seq, FeatureSequence) else np.asarray(seq)
        out = (frames - self.mean) / self.std
        return FeatureSequence(out, seq.hop_ms) if isinstance(seq, FeatureSequence) else out


def fit_norm_stats(sequences) -> NormStats:
    return NormStats.fit(sequences)


def apply_norm(seq, stats: NormStats):
    return stats.apply(seq)


# ---------------------------------------------------------------- WAV I/O

def read_wav(path) -> Waveform:
    """Load a mono PCM16, PCM32 or float WAV file scaled to [-1, 1]."""
    try:
        sr, data = wavfile.read(str(path))
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"{path}: cannot read WAV ({exc})") from exc
    if data.ndim != 1:
        raise InvalidInputError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        samples = data.astype(np.float64)
    else:
        raise InvalidInputError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(samples, sr)


def write_wav(path, waveform: Waveform):
    """Write 16-bit PCM, clipping to full scale."""
    pcm = np.clip(np.round(waveform.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), waveform.sample_rate, pcm)


# ---------------------------------------------------------------- framing

def _n_samples(ms, sr):
    return max(1, int(round(ms * sr / 1000.0)))


def _fft_size(n):
    return 1 << int(np.ceil(np.log2(n)))


def _centres(n_frames, sr):
    return np.rint(np.arange(n_frames) * sr / 1000.0).astype(np.int64)


def _frames(samples, centres, length):
    """Gather ``length``-sample windows around ``centres`` with edge replication."""
    start = centres - length // 2
    lo = min(0, int(start.min()))
    hi = max(samples.size, int(start.max()) + length)
    padded = np.pad(samples, (-lo, hi - samples.size), mode="edge")
    idx = (start - lo)[:, None] + np.arange(length)
    return padded[idx]


def _power_spectra(samples, centres, sr, window_ms):
    length = _n_samples(window_ms, sr)
    nfft = _fft_size(length)
    segs = _frames(samples, centres, length) * np.hamming(length)
    return np.abs(np.fft.rfft(segs, nfft, axis=-1)) ** 2


def _bin_freqs(n_bins, sr):
    return np.arange(n_bins) * sr / (2.0 * (n_bins - 1))


# ---------------------------------------------------------------- spectral

def stft_power(waveform: Waveform, center_ms: float, window_ms: float = 5.0) -> np.ndarray:
    """Power spectrum |FFT|^2 of one Hamming-windowed segment.

    The FFT length is the next power of two at or above the window length;
    the result has ``nfft // 2 + 1`` bins.
    """
    sr = waveform.sample_rate
    centre = np.array([int(round(center_ms * sr / 1000.0))])
    return _power_spectra(waveform.samples, centre, sr, window_ms)[0]


def _band_mask(n_bins, lo_hz, hi_hz, sample_rate):
    nyquist = sample_rate / 2.0
    if hi_hz is None:
        hi_hz = nyquist
    if lo_hz < 0 or hi_hz <= lo_hz or hi_hz > nyquist + 1e-9:
        raise InvalidInputError(f"invalid band [{lo_hz}, {hi_hz}] Hz for Nyquist {nyquist} Hz")
    freqs = _bin_freqs(n_bins, sample_rate)
    return (freqs >= lo_hz) & (freqs <= hi_hz)


def band_energy(spectrum, lo_hz, hi_hz, sample_rate) -> float:
    """Log of the summed power in bins whose centre lies in ``[lo_hz, hi_hz]``.

    ``hi_hz=None`` means the Nyquist frequency.
    """
    spectrum = np.asarray(spectrum, dtype=np.float64)
    mask = _band_mask(spectrum.shape[-1], lo_hz, hi_hz, sample_rate)
    return np.log(np.maximum(spectrum[..., mask].sum(axis=-1), LOG_FLOOR))


def total_energy(spectrum) -> float:
    return np.log(np.maximum(np.asarray(spectrum).sum(axis=-1), LOG_FLOOR))


def wiener_entropy(spectrum, floor: float = LOG_FLOOR):
    """log(geometric mean / arithmetic mean) of the floored spectrum; <= 0."""
    spec = np.maximum(np.asarray(spectrum, dtype=np.float64), floor)
    h = np.log(spec).mean(axis=-1) - np.log(spec.mean(axis=-1))
    flat = np.all(spec == spec[..., :1], axis=-1)
    return np.where(flat, 0.0, np.minimum(h, 0.0))


def max_power(waveform: Waveform, center_ms: int, config: FeatureConfig = DEFAULT_CONFIG) -> float:
    """Largest frame log power in ``[center - 6 ms, center + 18 ms]`` (clamped)."""
    t0 = max(0, int(center_ms) - config.pmax_before_ms)
    t1 = min(waveform.n_frames - 1, int(center_ms) + config.pmax_after_ms)
    centres = _centres(t1 + 1, waveform.sample_rate)[t0:]
    spectra = _power_spectra(waveform.samples, centres, waveform.sample_rate, config.window_ms)
    return float(total_energy(spectra).max())


def _running_max(values, before, after):
    padded = np.pad(values, (before, after), constant_values=-np.inf)
    return sliding_window_view(padded, before + after + 1).max(axis=-1)


# ---------------------------------------------------------------- periodicity

def _periodicity(waveform: Waveform, config: FeatureConfig):
    """Per-frame (f0 estimate, peak normalised autocorrelation, voiced flag)."""
    sr = waveform.sample_rate
    T = waveform.n_frames
    centres = _centres(T, sr)
    n = _n_samples(config.pitch_window_ms, sr)
    raw = _frames(waveform.samples, centres, n)
    frames = raw - raw.mean(axis=1, keepdims=True)

    nfft = _fft_size(2 * n)
    spec = np.fft.rfft(frames, nfft, axis=1)
    acf = np.fft.irfft(spec.real ** 2 + spec.imag ** 2, nfft, axis=1)[:, :n]

    sq = np.concatenate([np.zeros((T, 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    lag_min = max(2, int(np.floor(sr / config.f0_max)))
    lag_max = min(n - 2, int(np.ceil(sr / config.f0_min)))
    lags = np.arange(lag_min - 1, lag_max + 2)
    head = sq[:, n - lags]                      # energy of x[0 : n - lag]
    tail = sq[:, n:n + 1] - sq[:, lags]         # energy of x[lag : n]
    denom = np.sqrt(head * tail)
    scale = sq[:, n:n + 1] * 1e-12 + 1e-20
    r = np.where(denom > scale, acf[:, lags] / np.where(denom > 0, denom, 1.0), 0.0)

    inner = r[:, 1:-1]
    rmax = inner.max(axis=1)
    peaks = (inner >= r[:, :-2]) & (inner >= r[:, 2:]) & (inner >= config.octave_ratio * rmax[:, None])
    k = np.argmax(peaks, axis=1)
    rows = np.arange(T)
    y0, y1, y2 = r[rows, k], r[rows, k + 1], r[rows, k + 2]
    curv = y0 - 2.0 * y1 + y2
    shift = np.where(curv < 0, 0.5 * (y0 - y2) / np.where(curv < 0, curv, -1.0), 0.0)
    lag = lags[k + 1] + np.clip(shift, -0.5, 0.5)
    f0 = sr / lag

    # local-energy gate: the pitch period around the frame centre must carry
    # a fair share of the strongest period-length stretch in the window
    period = np.clip(np.rint(lag).astype(np.int64), 1, n)
    raw_sq = np.concatenate([np.zeros((T, 1)), np.cumsum(raw ** 2, axis=1)], axis=1)
    starts = np.arange(n)[None, :]
    ends = np.minimum(starts + period[:, None], n)
    seg_power = np.where(starts + period[:, None] <= n,
                         np.take_along_axis(raw_sq, ends, 1) - raw_sq[:, :n], 0.0)
    c0 = n // 2 - period // 2
    centre_power = raw_sq[rows, c0 + period] - raw_sq[rows, c0]
    peak_power = seg_power.max(axis=1)
    voiced = (rmax >= config.voicing_threshold) & (peak_power > 1e-12 * period) \
        & (centre_power >= config.energy_gate * peak_power)
    return f0, rmax, voiced


def pitch_track(waveform: Waveform, config: FeatureConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Per-frame f0 in Hz from normalised autocorrelation, 0 where unvoiced."""
    f0, _, voiced = _periodicity(waveform, config)
    return np.where(voiced, f0, 0.0)


def smooth_voicing(binary, smooth_ms: int = 5) -> np.ndarray:
    kernel = np.hamming(smooth_ms)
    kernel /= kernel.sum()
    half = smooth_ms // 2
    padded = np.pad(np.asarray(binary, dtype=np.float64), (half, smooth_ms - 1 - half), mode="edge")
    return np.clip(np.convolve(padded, kernel, mode="valid"), 0.0, 1.0)


def voicing_track(waveform: Waveform, config: FeatureConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Binary voicing decisions smoothed with a normalised 5 ms Hamming kernel."""
    _, _, voiced = _periodicity(waveform, config)
    return smooth_voicing(voiced, config.voicing_smooth_ms)


# ---------------------------------------------------------------- zero crossings

def _crossing_prefix(samples):
    sign = np.sign(samples)
    nz = sign != 0
    idx = np.where(nz, np.arange(sign.size), 0)
    np.maximum.accumulate(idx, out=idx)
    filled = sign[idx]  # zeros inherit the previous sign; leading zeros stay 0
    cross = np.zeros(sign.size, dtype=np.int64)
    cross[1:] = (filled[1:] != filled[:-1]) & (filled[1:] != 0) & (filled[:-1] != 0)
    return np.cumsum(cross)


def _zero_crossing_counts(samples, centres, length):
    start = centres - length // 2
    lo = min(0, int(start.min()))
    hi = max(samples.size, int(start.max()) + length)
    padded = np.pad(samples, (-lo, hi - samples.size), mode="edge")
    cs = _crossing_prefix(padded)
    s = start - lo
    return (cs[s + length - 1] - cs[s]).astype(np.float64)


def zero_crossings(waveform: Waveform, center_ms: float, window_ms: float = 5.0) -> int:
    sr = waveform.sample_rate
    centre = np.array([int(round(center_ms * sr / 1000.0))])
    return int(_zero_crossing_counts(waveform.samples, centre, _n_samples(window_ms, sr))[0])


# ---------------------------------------------------------------- assembly

def extract_features(waveform: Waveform, config: FeatureConfig = DEFAULT_CONFIG) -> FeatureSequence:
    """Compute the T x 8 feature matrix at a 1 ms hop."""
    sr = waveform.sample_rate
    T = waveform.n_frames
    centres = _centres(T, sr)
    spectra = _power_spectra(waveform.samples, centres, sr, config.window_ms)

    out = np.empty((T, N_FEATURES))
    out[:, E_TOTAL] = total_energy(spectra)
    out[:, E_LOW] = band_energy(spectra, config.low_band[0], config.low_band[1], sr)
    out[:, E_HIGH] = band_energy(spectra, config.high_cutoff, None, sr)
    out[:, H_WIENER] = wiener_entropy(spectra)
    out[:, P_MAX] = _running_max(out[:, E_TOTAL], config.pmax_before_ms, config.pmax_after_ms)

    f0, _, voiced = _periodicity(waveform, config)
    out[:, R_L] = np.where(voiced, f0, 0.0)
    out[:, V] = smooth_voicing(voiced, config.voicing_smooth_ms)
    out[:, ZC] = _zero_crossing_counts(waveform.samples, centres, _n_samples(config.zc_window_ms, sr))
    return FeatureSequence(out)


def extract_file(path, config: FeatureConfig = DEFAULT_CONFIG) -> FeatureSequence:
    return extract_features(read_wav(Path(path)), config)
