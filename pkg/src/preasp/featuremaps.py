"""Segment feature maps phi(x, t_s, t_e) and fast candidate scoring.

Intervals are half-open frame ranges: the pre-aspiration interval is
``[t_s, t_e)`` and the post interval is ``[t_e, t_e + 50)``, clipped to the
sequence.  A clipped interval that ends up empty takes the value of the
nearest edge frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .acoustics import E_HIGH, E_LOW, E_TOTAL, FEATURE_NAMES, H_WIENER, N_FEATURES, P_MAX, R_L, V, ZC

POST_MS = 50
DIFF_SCALES = (5, 10, 15)

VALUE_TS = "value-at-ts"
VALUE_TE = "value-at-te"
DIFF_TS = "local-diff-at-ts"
DIFF_TE = "local-diff-at-te"
MEAN = "mean-over-interval"
MAX = "max-over-interval"
MEAN_MINUS_POST = "mean-minus-post50"
MEAN_POST = "mean-post50"
MAX_POST = "max-post50"
DURATION = "duration"
KINDS = (VALUE_TS, VALUE_TE, DIFF_TS, DIFF_TE, MEAN, MAX, MEAN_MINUS_POST, MEAN_POST,
         MAX_POST, DURATION)


@dataclass(frozen=True)
class MapDescriptor:
    kind: str
    feature: int | None = None
    s: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown feature-map kind {self.kind!r}")
        if self.kind == DURATION:
            if self.feature is not None or self.s is not None:
                raise ValueError("duration map takes no feature or scale")
            return
        if self.feature is None or not 0 <= self.feature < N_FEATURES:
            raise ValueError(f"feature index out of range in {self}")
        needs_s = self.kind in (DIFF_TS, DIFF_TE)
        if needs_s and self.s is None:
            raise ValueError(f"{self.kind} needs a scale")
        if self.s is not None and (self.kind not in (DIFF_TS, DIFF_TE, MEAN, MAX) or self.s <= 0):
            raise ValueError(f"scale not allowed for {self}")

    def encode(self) -> str:
        parts = [self.kind]
        if self.feature is not None:
            parts.append(FEATURE_NAMES[self.feature])
        if self.s is not None:
            parts.append(str(self.s))
        return " ".join(parts)

    @classmethod
    def decode(cls, text: str) -> "MapDescriptor":
        parts = text.split()
        if not parts:
            raise ValueError("empty descriptor")
        feature = FEATURE_NAMES.index(parts[1]) if len(parts) > 1 else None
        s = int(parts[2]) if len(parts) > 2 else None
        return cls(parts[0], feature, s)


@dataclass(frozen=True)
class FeatureMapSpec:
    """Ordered map descriptors plus the duration normalisation."""
    descriptors: tuple
    dur_mean: float = 0.0
    dur_std: float = 1.0

    @property
    def N(self) -> int:
        return len(self.descriptors)

    def with_duration_stats(self, mean, std) -> "FeatureMapSpec":
        return replace(self, dur_mean=float(mean), dur_std=float(std) if std > 0 else 1.0)


def default_spec(pmax_reading: str = "stat-diff") -> FeatureMapSpec:
    """The full map table, 68 maps with the default P_max reading.

    ``pmax_reading`` selects how the P_max "mean & max" row is read:

    * ``"stat-diff"``: mean and max over the interval, each as a plain value
      and as a difference against the 5 and 10 ms before ``t_s`` (6 maps).
    * ``"local-diff"``: mean and max over the interval, plus P_max local
      differences at ``t_s`` with s = 5, 10 (4 maps).
    """
    d = []
    for f in (E_TOTAL, E_HIGH, H_WIENER, R_L):
        d.append(MapDescriptor(VALUE_TS, f))
    for f in range(N_FEATURES):
        d.extend(MapDescriptor(DIFF_TS, f, s) for s in DIFF_SCALES)
    for f in (E_TOTAL, E_LOW, E_HIGH, H_WIENER, P_MAX, R_L):
        d.append(MapDescriptor(VALUE_TE, f))
        d.extend(MapDescriptor(DIFF_TE, f, s) for s in DIFF_SCALES)
    if pmax_reading == "stat-diff":
        for kind in (MEAN, MAX):
            d.extend(MapDescriptor(kind, P_MAX, s) for s in (None, 5, 10))
    elif pmax_reading == "local-diff":
        d.append(MapDescriptor(MEAN, P_MAX))
        d.append(MapDescriptor(MAX, P_MAX))
        d.extend(MapDescriptor(DIFF_TS, P_MAX, s) for s in (5, 10))
    else:
        raise ValueError(f"unknown pmax_reading {pmax_reading!r}")
    d.extend(MapDescriptor(MEAN_MINUS_POST, f) for f in (E_HIGH, H_WIENER, ZC))
    d.extend(MapDescriptor(MEAN_POST, f) for f in (E_HIGH, H_WIENER, R_L, V))
    d.extend(MapDescriptor(MAX_POST, f) for f in (E_HIGH, H_WIENER))
    d.append(MapDescriptor(DURATION))
    return FeatureMapSpec(tuple(d))


class CumulativeStats:
    """Prefix sums and a sparse max table over a T x D feature matrix.

    Interval means and maxima over arbitrary ``[a, b)`` cost O(1) each.
    """

    def __init__(self, frames):
        x = np.asarray(getattr(frames, "frames", frames), dtype=np.float64)
        self.x = x
        self.T = x.shape[0]
        # sums are taken relative to the first frame so constant stretches
        # give exactly constant means
        self.origin = x[0].copy() if self.T else np.zeros(x.shape[1])
        self.prefix = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x - self.origin, axis=0)])
        levels = [x]
        width = 1
        while 2 * width <= self.T:
            prev = levels[-1]
            levels.append(np.maximum(prev[:-width], prev[width:]))
            width *= 2
        self._table = levels

    def _bounds(self, a, b):
        a = np.minimum(np.maximum(a, 0), self.T)
        b = np.minimum(np.maximum(b, 0), self.T)
        a, b = np.broadcast_arrays(a, b)
        return a, b, b - a, np.minimum(a, self.T - 1)

    def mean(self, f, a, b):
        a, b, n, edge = self._bounds(a, b)
        m = self.origin[f] + (self.prefix[b, f] - self.prefix[a, f]) / np.maximum(n, 1)
        return np.where(n > 0, m, self.x[edge, f])

    def max(self, f, a, b):
        a, b, n, edge = self._bounds(a, b)
        shape = n.shape
        a, b, n, edge = (v.ravel() for v in (a, b, n, edge))
        k = np.floor(np.log2(np.maximum(n, 1))).astype(np.int64)
        out = self.x[edge, f].copy()
        for level in np.unique(k[n > 0]):
            sel = (k == level) & (n > 0)
            tab = self._table[level]
            out[sel] = np.maximum(tab[a[sel], f], tab[b[sel] - (1 << level), f])
        return out.reshape(shape)

    def local_diff(self, f, t, s):
        t = np.asarray(t)
        return self.mean(f, t, t + s) - self.mean(f, np.maximum(t - s, 0), t)


def local_diff(features, feature, t, s):
    """mean(x[t:t+s]) - mean(x[t-s:t]) for one feature, clamped to the sequence."""
    return float(CumulativeStats(features).local_diff(feature, t, s))


def phi_matrix(cum: CumulativeStats, ts, te, spec: FeatureMapSpec) -> np.ndarray:
    """Feature vectors for many candidates at once, shape (len(ts), N)."""
    ts = np.atleast_1d(np.asarray(ts, dtype=np.int64))
    te = np.atleast_1d(np.asarray(te, dtype=np.int64))
    out = np.empty((ts.size, spec.N))
    post_end = np.minimum(te + POST_MS, cum.T)
    for j, d in enumerate(spec.descriptors):
        f = d.feature
        if d.kind == VALUE_TS:
            col = cum.x[ts, f]
        elif d.kind == VALUE_TE:
            col = cum.x[te, f]
        elif d.kind == DIFF_TS:
            col = cum.local_diff(f, ts, d.s)
        elif d.kind == DIFF_TE:
            col = cum.local_diff(f, te, d.s)
        elif d.kind == MEAN:
            col = cum.mean(f, ts, te)
            if d.s is not None:
                col = col - cum.mean(f, np.maximum(ts - d.s, 0), ts)
        elif d.kind == MAX:
            col = cum.max(f, ts, te)
            if d.s is not None:
                col = col - cum.max(f, np.maximum(ts - d.s, 0), ts)
        elif d.kind == MEAN_MINUS_POST:
            col = cum.mean(f, ts, te) - cum.mean(f, te, post_end)
        elif d.kind == MEAN_POST:
            col = cum.mean(f, te, post_end)
        elif d.kind == MAX_POST:
            col = cum.max(f, te, post_end)
        else:
            col = ((te - ts) - spec.dur_mean) / spec.dur_std
        out[:, j] = col
    return out


def phi(features, candidate, spec: FeatureMapSpec) -> np.ndarray:
    """Feature vector for a single ``(t_s, t_e)`` pair."""
    cum = features if isinstance(features, CumulativeStats) else CumulativeStats(features)
    ts, te = candidate
    return phi_matrix(cum, [ts], [te], spec)[0]


class ScoreTables:
    """Linear pieces of ``w . phi`` for one sequence, independent of ``w``.

    The score of a candidate splits into onset-only terms, offset-only
    terms, interval means (a weighted prefix sum), interval maxima and the
    duration term.  Each piece is a fixed matrix times ``w``, so scoring a
    new weight vector over all candidates costs O(T N + candidates).
    """

    def __init__(self, cum: CumulativeStats, spec: FeatureMapSpec):
        self.cum = cum
        self.spec = spec
        T, D, N = cum.T, cum.x.shape[1], spec.N
        t = np.arange(T)
        post_end = np.minimum(t + POST_MS, T)
        self.onset = np.zeros((T, N))
        self.offset = np.zeros((T, N))
        self.mean_map = np.zeros((D, N))
        self.max_map = np.zeros((D, N))
        self.dur = np.zeros(N)
        self.const = np.zeros(N)
        for j, d in enumerate(spec.descriptors):
            f = d.feature
            if d.kind == VALUE_TS:
                self.onset[:, j] = cum.x[:, f]
            elif d.kind == VALUE_TE:
                self.offset[:, j] = cum.x[:, f]
            elif d.kind == DIFF_TS:
                self.onset[:, j] = cum.local_diff(f, t, d.s)
            elif d.kind == DIFF_TE:
                self.offset[:, j] = cum.local_diff(f, t, d.s)
            elif d.kind == MEAN:
                self.mean_map[f, j] = 1.0
                if d.s is not None:
                    self.onset[:, j] = -cum.mean(f, np.maximum(t - d.s, 0), t)
            elif d.kind == MAX:
                self.max_map[f, j] = 1.0
                if d.s is not None:
                    self.onset[:, j] = -cum.max(f, np.maximum(t - d.s, 0), t)
            elif d.kind == MEAN_MINUS_POST:
                self.mean_map[f, j] = 1.0
                self.offset[:, j] = -cum.mean(f, t, post_end)
            elif d.kind == MEAN_POST:
                self.offset[:, j] = cum.mean(f, t, post_end)
            elif d.kind == MAX_POST:
                self.offset[:, j] = cum.max(f, t, post_end)
            else:
                self.dur[j] = 1.0 / spec.dur_std
                self.const[j] = -spec.dur_mean / spec.dur_std
        self._max_features = np.flatnonzero(self.max_map.any(axis=1))
        self._max_cache = {}

    def interval_max(self, f, ts, te):
        # candidate arrays are reused across training epochs; cache by identity
        hit = self._max_cache.get(f)
        if hit is None or hit[0] is not ts or hit[1] is not te:
            hit = (ts, te, self.cum.max(f, ts, te))
            self._max_cache[f] = hit
        return hit[2]

    def phi(self, ts, te):
        """Feature vectors rebuilt from the tables, shape (len(ts), N)."""
        ts = np.atleast_1d(np.asarray(ts, dtype=np.int64))
        te = np.atleast_1d(np.asarray(te, dtype=np.int64))
        length = te - ts
        means = self.cum.origin + (self.cum.prefix[te] - self.cum.prefix[ts]) / length[:, None]
        out = self.onset[ts] + self.offset[te] + means @ self.mean_map
        for f in self._max_features:
            out += np.outer(self.cum.max(f, ts, te), self.max_map[f])
        return out + np.outer(length, self.dur) + self.const

    def score(self, w, ts, te):
        w = np.asarray(w, dtype=np.float64)
        length = te - ts
        mean_coef = self.mean_map @ w
        q = self.cum.prefix @ mean_coef
        score = (self.onset @ w)[ts] + (self.offset @ w)[te] + (q[te] - q[ts]) / length \
            + self.cum.origin @ mean_coef
        max_coef = self.max_map @ w
        for f in self._max_features:
            if max_coef[f] != 0.0:
                score = score + max_coef[f] * self.interval_max(f, ts, te)
        return score + (self.dur @ w) * length + self.const @ w


def score_candidates(cum: CumulativeStats, ts, te, spec: FeatureMapSpec, w) -> np.ndarray:
    """w . phi for every candidate, without building the candidate x N matrix."""
    ts = np.asarray(ts, dtype=np.int64)
    te = np.asarray(te, dtype=np.int64)
    return ScoreTables(cum, spec).score(w, ts, te)
