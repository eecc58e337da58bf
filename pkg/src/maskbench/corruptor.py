"""Word-level audio masking driven by forced-alignment timings.

Selected words are located through their CTM timings, each span is widened
by a fraction of its own duration on both sides, overlapping spans are
merged, and every merged region is cut out of the waveform and replaced by a
fixed-length block of silence or Gaussian white noise.
"""

from __future__ import annotations

import enum
import json
import logging
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .signalio import Waveform, seconds_to_samples

log = logging.getLogger(__name__)

DEFAULT_EXPANSION = 0.25
DEFAULT_MASK_SECONDS = 0.5
DEFAULT_NOISE_STD = 0.1


class CTMParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class AlignmentConsistencyError(ValueError):
    """Alignment timings do not line up with the reference transcript."""


class PlanConsistencyError(ValueError):
    """A mask plan does not fit the waveform it is applied to."""


class MaskType(str, enum.Enum):
    SILENCE = "silence"
    WHITE_NOISE = "noise"


@dataclass(frozen=True)
class WordTiming:
    word: str
    start: float
    end: float

    def __post_init__(self):
        if not self.word:
            raise ValueError("empty word token")
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid timing [{self.start}, {self.end}] for {self.word!r}")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class MaskSegment:
    start: float
    end: float
    covered_token_indices: tuple[int, ...]

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"empty mask segment [{self.start}, {self.end}]")
        idx = self.covered_token_indices
        if not idx or any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("covered_token_indices must be non-empty and strictly increasing")


@dataclass
class MaskPlan:
    utterance_id: str
    segments: list[MaskSegment]
    mask_type: MaskType = MaskType.SILENCE
    mask_duration: float = DEFAULT_MASK_SECONDS
    rng_seed: int = 0
    masked_token_indices: frozenset[int] = field(default=frozenset())

    def __post_init__(self):
        self.mask_type = MaskType(self.mask_type)
        if self.mask_duration <= 0:
            raise ValueError("mask_duration must be positive")
        covered = frozenset(i for s in self.segments for i in s.covered_token_indices)
        if self.masked_token_indices and frozenset(self.masked_token_indices) != covered:
            raise ValueError("masked_token_indices must equal the tokens covered by the segments")
        self.masked_token_indices = covered
        for a, b in zip(self.segments, self.segments[1:]):
            if b.start < a.end:
                raise ValueError("mask segments must be sorted and non-overlapping")

    def to_dict(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "mask_type": self.mask_type.value,
            "mask_duration": self.mask_duration,
            "seed": self.rng_seed,
            "segments": [
                {"start": s.start, "end": s.end, "covered_token_indices": list(s.covered_token_indices)}
                for s in self.segments
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaskPlan":
        segs = [MaskSegment(s["start"], s["end"], tuple(s["covered_token_indices"])) for s in d["segments"]]
        return cls(d["utterance_id"], segs, MaskType(d["mask_type"]), d["mask_duration"], d["seed"])


def save_plans(plans: Iterable[MaskPlan], path) -> None:
    with open(path, "w") as fh:
        json.dump([p.to_dict() for p in plans], fh, indent=1)


def load_plans(path) -> dict[str, MaskPlan]:
    with open(path) as fh:
        return {d["utterance_id"]: MaskPlan.from_dict(d) for d in json.load(fh)}


# ---------------------------------------------------------------------------

def parse_ctm(text: str) -> dict[str, list[WordTiming]]:
    """Parse ``utt channel start duration word`` lines into sorted per-utterance timings."""
    out: dict[str, list[WordTiming]] = defaultdict(list)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith(";;") or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 5:
            raise CTMParseError(lineno, f"expected 5 fields, got {len(parts)}")
        utt, _channel, start_s, dur_s, word = parts[:5]
        try:
            start, dur = float(start_s), float(dur_s)
        except ValueError:
            raise CTMParseError(lineno, f"non-numeric time field in {line!r}") from None
        if not (np.isfinite(start) and np.isfinite(dur)):
            raise CTMParseError(lineno, "non-finite time field")
        if start < 0:
            raise CTMParseError(lineno, f"negative start {start}")
        if dur <= 0:
            raise CTMParseError(lineno, f"non-positive duration {dur}")
        out[utt].append(WordTiming(word, start, start + dur))
    result = {}
    for utt, words in out.items():
        words.sort(key=lambda w: (w.start, w.end))
        for a, b in zip(words, words[1:]):
            if b.start < a.end:
                log.warning("utterance %s: overlapping words %r and %r", utt, a.word, b.word)
        result[utt] = words
    return result


def _expand(t: WordTiming, expansion: float, limit: float | None) -> tuple[float, float]:
    d = t.end - t.start
    start = max(0.0, t.start - expansion * d)
    end = t.end + expansion * d
    if limit is not None:
        end = min(end, limit)
    return start, end


def plan_masks(
    timings: Sequence[WordTiming],
    tokens: Sequence[str],
    word_set: Iterable[str],
    expansion: float = DEFAULT_EXPANSION,
    mask_duration: float = DEFAULT_MASK_SECONDS,
    mask_type: MaskType | str = MaskType.SILENCE,
    seed: int = 0,
    utterance_id: str = "",
    utterance_end: float | None = None,
) -> MaskPlan:
    """Build the merged, expanded mask segments for one utterance.

    ``timings`` and ``tokens`` must describe the same words in the same order
    once timings are sorted by start time (comparison is case-insensitive).
    """
    ordered = sorted(timings, key=lambda t: (t.start, t.end, t.word))
    if len(ordered) != len(tokens):
        raise AlignmentConsistencyError(
            f"{utterance_id or 'utterance'}: {len(ordered)} timed words vs {len(tokens)} reference tokens"
        )
    for i, (t, tok) in enumerate(zip(ordered, tokens)):
        if t.word.lower() != tok.lower():
            raise AlignmentConsistencyError(
                f"{utterance_id or 'utterance'}: token {i} is {tok!r} but alignment has {t.word!r}"
            )
    words = {w.lower() for w in getattr(word_set, "words", word_set)}
    spans = [(*_expand(t, expansion, utterance_end), i)
             for i, t in enumerate(ordered) if t.word.lower() in words]
    spans.sort()
    segments: list[MaskSegment] = []
    cur_start = cur_end = None
    cur_idx: list[int] = []
    for start, end, i in spans:
        if cur_end is not None and start <= cur_end:
            cur_end = max(cur_end, end)
            cur_idx.append(i)
            continue
        if cur_end is not None:
            segments.append(MaskSegment(cur_start, cur_end, tuple(sorted(cur_idx))))
        cur_start, cur_end, cur_idx = start, end, [i]
    if cur_end is not None:
        segments.append(MaskSegment(cur_start, cur_end, tuple(sorted(cur_idx))))
    return MaskPlan(utterance_id, segments, MaskType(mask_type), mask_duration, seed)


def segment_rng(plan: MaskPlan, index: int) -> np.random.Generator:
    """Noise generator keyed on (seed, utterance, segment) so parallel runs agree."""
    key = zlib.crc32(plan.utterance_id.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([plan.rng_seed & 0xFFFFFFFF, key, index]))


def segment_sample_bounds(plan: MaskPlan, n_samples: int, rate: int) -> list[tuple[int, int]]:
    bounds = []
    for k, seg in enumerate(plan.segments):
        a = seconds_to_samples(seg.start, rate)
        b = min(seconds_to_samples(seg.end, rate), n_samples)
        if a < 0 or a >= b:
            raise PlanConsistencyError(
                f"{plan.utterance_id}: segment {k} [{seg.start}, {seg.end}] lies outside "
                f"the {n_samples / rate:.3f} s waveform"
            )
        bounds.append((a, b))
    return bounds


def apply_masks(w: Waveform, plan: MaskPlan, noise_amplitude: float = DEFAULT_NOISE_STD) -> Waveform:
    """Splice every plan segment out of ``w`` and insert a fixed-length mask in its place."""
    bounds = segment_sample_bounds(plan, len(w), w.rate)
    n_mask = seconds_to_samples(plan.mask_duration, w.rate)
    out = w.samples
    for k in range(len(bounds) - 1, -1, -1):
        a, b = bounds[k]
        if plan.mask_type is MaskType.SILENCE:
            fill = np.zeros(n_mask)
        else:
            fill = np.clip(segment_rng(plan, k).normal(0.0, noise_amplitude, n_mask), -1.0, 1.0)
        out = np.concatenate([out[:a], fill, out[b:]])
    return Waveform(out if plan.segments else w.samples.copy(), w.rate)


def shift_timings(timings: Sequence[WordTiming], plan: MaskPlan, rate: int | None = None) -> list[WordTiming]:
    """Word timings as they fall in the spliced audio.

    With ``rate`` the segment edges and mask length are snapped to whole
    samples, matching what ``apply_masks`` actually produced.
    """
    ordered = sorted(timings, key=lambda t: (t.start, t.end, t.word))

    def snap(t: float) -> float:
        return t if rate is None else seconds_to_samples(t, rate) / rate

    mask_len = snap(plan.mask_duration)
    new_spans = []  # (old_start, old_end, new_start, new_end)
    delta = 0.0
    for seg in plan.segments:
        s, e = snap(seg.start), snap(seg.end)
        new_spans.append((s, e, s + delta, s + delta + mask_len))
        delta += mask_len - (e - s)

    owner = {i: k for k, seg in enumerate(plan.segments) for i in seg.covered_token_indices}

    def move(t: float, is_start: bool) -> float:
        shift = 0.0
        for s, e, ns, ne in new_spans:
            if t >= e:
                shift = ne - e
            elif t > s:
                return ne if is_start else ns
            else:
                break
        return t + shift

    out = []
    for i, t in enumerate(ordered):
        if i in owner:
            _, _, ns, ne = new_spans[owner[i]]
            out.append(WordTiming(t.word, ns, ne))
            continue
        start, end = move(t.start, True), move(t.end, False)
        if end <= start:
            k = next(k for k, (s, e, _, _) in enumerate(new_spans) if s <= t.start < e or s < t.end <= e)
            start, end = new_spans[k][2], new_spans[k][3]
        out.append(WordTiming(t.word, start, end))
    return out
