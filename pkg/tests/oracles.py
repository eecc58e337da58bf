"""Slow, independent reference implementations used only by the tests."""

from __future__ import annotations

import math
from collections import Counter
from functools import lru_cache

import numpy as np

from maskbench.corruptor import MaskPlan, MaskSegment, MaskType


# -- front end ---------------------------------------------------------------

def naive_dft_power(frame: np.ndarray, n_fft: int) -> np.ndarray:
    """|X_k|^2 for k = 0..n_fft/2 by the O(N^2) definition, zero-padding to n_fft."""
    x = np.zeros(n_fft)
    x[: len(frame)] = frame
    n = np.arange(n_fft)
    out = np.empty(n_fft // 2 + 1)
    for k in range(n_fft // 2 + 1):
        ang = -2.0 * math.pi * k * n / n_fft
        re = float(np.dot(x, np.cos(ang)))
        im = float(np.dot(x, np.sin(ang)))
        out[k] = re * re + im * im
    return out


def triangle_weight(f: float, lo: float, mid: float, hi: float) -> float:
    if lo < f <= mid:
        return (f - lo) / (mid - lo)
    if mid < f < hi:
        return (hi - f) / (hi - mid)
    return 0.0


def oracle_logmel(samples: np.ndarray, rate: int = 16000, n_mels: int = 40, n_fft: int = 512,
                  win: int = 400, hop: int = 160, floor: float = 1e-10) -> np.ndarray:
    mel = lambda f: 2595.0 * math.log10(1.0 + f / 700.0)
    inv = lambda m: 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    top = mel(rate / 2.0)
    edges = [inv(top * i / (n_mels + 1)) for i in range(n_mels + 2)]
    hann = [0.5 - 0.5 * math.cos(2.0 * math.pi * i / (win - 1)) for i in range(win)]
    rows = []
    n_frames = 0 if len(samples) < win else (len(samples) - win) // hop + 1
    for t in range(n_frames):
        fr = [float(v) for v in samples[t * hop: t * hop + win]]
        mean = sum(fr) / win
        fr = np.array([(v - mean) * hann[i] for i, v in enumerate(fr)])
        power = naive_dft_power(fr, n_fft)
        row = []
        for m in range(n_mels):
            e = sum(power[k] * triangle_weight(k * rate / n_fft, edges[m], edges[m + 1], edges[m + 2])
                    for k in range(n_fft // 2 + 1))
            row.append(math.log(max(e, floor)))
        rows.append(row)
    return np.array(rows).reshape(n_frames, n_mels)


# -- edit distance -------------------------------------------------------------

def levenshtein(a, b) -> int:
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


# -- word sets -------------------------------------------------------------------

def top_nouns_oracle(corpus, n, tag="NN"):
    counts = Counter()
    for utt in corpus:
        for tok in utt:
            if tok.pos == tag:
                counts[tok.token] += 1
    words = sorted(counts)                           # alphabetical first...
    words.sort(key=lambda w: counts[w], reverse=True)  # ...then a stable frequency sort
    return set(words[:n])


def place_words_oracle(vocab, categories, strict=False):
    out = set()
    for cat in categories:
        units = cat.lower().replace("/", "_").replace("-", "_").split("_")
        units = [u for u in units if u]
        if strict:
            if len(units) == 1 and units[0] in vocab:
                out.add(units[0])
            continue
        for u in units:
            if u in vocab:
                out.add(u)
    return out


# -- intervals -------------------------------------------------------------------

def merge_intervals(spans):
    """Union of closed intervals, touching ones merged; returns sorted (start, end, members)."""
    out = []
    for s, e, i in sorted(spans):
        if out and s <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], e), out[-1][2] + [i])
        else:
            out.append((s, e, [i]))
    return [(s, e, sorted(m)) for s, e, m in out]


# -- splicing -------------------------------------------------------------------

def random_plan(rng, n_samples, mask_type, rate=16000):
    """Up to 4 non-overlapping segments placed at whole-sample times."""
    k = int(rng.integers(0, 5))
    cuts = np.sort(rng.choice(np.arange(1, n_samples), size=2 * k, replace=False))
    segs = [MaskSegment(cuts[2 * i] / rate, cuts[2 * i + 1] / rate, (i,)) for i in range(k)]
    return MaskPlan("r", segs, mask_type, 0.5, int(rng.integers(0, 1 << 30)))


def check_splice_invariants(x, plan, out, rate=16000):
    """Output length, untouched samples, and silence content; returns False on any violation."""
    bounds = [(int(round(s.start * rate)), int(round(s.end * rate))) for s in plan.segments]
    fill_len = int(round(plan.mask_duration * rate))
    removed = sum(b - a for a, b in bounds)
    if len(out) != len(x) - removed + len(bounds) * fill_len:
        return False
    src = dst = 0
    for a, b in bounds:
        n = a - src
        if not np.array_equal(out[dst:dst + n], x[src:a]):
            return False
        dst += n
        fill = out[dst:dst + fill_len]
        if plan.mask_type is MaskType.SILENCE and np.any(fill != 0.0):
            return False
        dst += fill_len
        src = b
    return np.array_equal(out[dst:], x[src:])
