"""Masked word sets: most frequent nouns and scene-category words."""

from __future__ import annotations

import enum
import logging
import re
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

NOUN_TAGS = ("NN",)
_CATEGORY_SPLIT = re.compile(r"[_/\-]+")


class Provenance(str, enum.Enum):
    TOP_NOUNS = "top_nouns"
    PLACE_CATEGORIES = "place_categories"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class TaggedToken:
    token: str
    pos: str

    def __post_init__(self):
        if not self.token:
            raise ValueError("empty token")
        object.__setattr__(self, "token", self.token.lower())


@dataclass(frozen=True)
class WordSet:
    name: str
    words: frozenset[str]
    provenance: Provenance = Provenance.EXPLICIT
    detail: str = ""

    def __post_init__(self):
        object.__setattr__(self, "words", frozenset(w.lower() for w in self.words))

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.words

    def __len__(self) -> int:
        return len(self.words)

    def __iter__(self):
        return iter(sorted(self.words))


# ---------------------------------------------------------------------------
# file formats

def parse_tagged_line(line: str) -> tuple[str, list[TaggedToken]]:
    """``utt_id<TAB>token/TAG token/TAG ...``; the tag is whatever follows the last slash."""
    utt, _, rest = line.rstrip("\n").partition("\t")
    toks = []
    for item in rest.split():
        word, sep, tag = item.rpartition("/")
        if not sep or not word:
            raise ValueError(f"{utt}: malformed tagged token {item!r}")
        toks.append(TaggedToken(word, tag))
    return utt, toks


def read_tagged(path) -> dict[str, list[TaggedToken]]:
    with open(path) as fh:
        return dict(parse_tagged_line(l) for l in fh if l.strip())


def read_transcripts(path) -> dict[str, list[str]]:
    """``utt_id<TAB>token token ...``, lowercased."""
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            utt, _, rest = line.rstrip("\n").partition("\t")
            out[utt] = rest.lower().split()
    return out


def write_transcripts(trans: dict[str, Sequence[str]], path) -> None:
    with open(path, "w") as fh:
        for utt, toks in trans.items():
            fh.write(f"{utt}\t{' '.join(toks)}\n")


def write_wordset(ws: WordSet, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# name: {ws.name}\n# provenance: {ws.provenance.value} {ws.detail}".rstrip() + "\n")
        for w in sorted(ws.words):
            fh.write(w + "\n")


def read_wordset(path) -> WordSet:
    name, prov, detail = str(path), Provenance.EXPLICIT, ""
    words = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# name:"):
                name = line.split(":", 1)[1].strip()
            elif line.startswith("# provenance:"):
                kind, _, detail = line.split(":", 1)[1].strip().partition(" ")
                prov = Provenance(kind)
            elif line and not line.startswith("#"):
                words.append(line.lower())
    return WordSet(name, frozenset(words), prov, detail)


# ---------------------------------------------------------------------------

def top_nouns(corpus: Iterable[Sequence[TaggedToken]], n: int = 100, tags: Sequence[str] = NOUN_TAGS) -> WordSet:
    """The ``n`` most frequent tokens tagged exactly as one of ``tags``.

    Ties at the cutoff go to the lexicographically smaller word.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    tagset = set(tags)
    counts = Counter(t.token for utt in corpus for t in utt if t.pos in tagset)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if len(ranked) < n:
        log.warning("only %d distinct %s tokens available, wanted %d", len(ranked), "/".join(tags), n)
    return WordSet(f"top{n}_nouns", frozenset(w for w, _ in ranked[:n]), Provenance.TOP_NOUNS, f"n={n}")


def category_units(category: str) -> list[str]:
    return [u for u in _CATEGORY_SPLIT.split(category.strip().lower()) if u]


def read_categories(path) -> list[str]:
    with open(path) as fh:
        cats = [l.strip() for l in fh if l.strip() and not l.startswith("#")]
    if not cats:
        raise ValueError(f"{path}: empty category file")
    return cats


def place_words(vocab: Iterable[str], categories: Sequence[str], strict: bool = False,
                source: str = "") -> WordSet:
    """Corpus words that name a scene category.

    By default multi-word categories such as ``basketball_court`` contribute
    each unit (``basketball``, ``court``); ``strict`` keeps only categories
    that are already a single token.
    """
    cats = [c for c in categories if c.strip()]
    if not cats:
        raise ValueError("empty category list")
    units: set[str] = set()
    for c in cats:
        parts = category_units(c)
        if strict and len(parts) != 1:
            continue
        units.update(parts)
    words = frozenset(w.lower() for w in vocab) & units
    return WordSet("places", words, Provenance.PLACE_CATEGORIES, source)


def coverage_fraction(corpus: Iterable[Sequence[str]], ws: Iterable[str]) -> Fraction:
    words = {w.lower() for w in getattr(ws, "words", ws)}
    total = hits = 0
    for utt in corpus:
        for tok in utt:
            total += 1
            hits += tok.lower() in words
    if total == 0:
        raise ValueError("coverage of an empty corpus is undefined")
    return Fraction(hits, total)


def coverage(corpus: Iterable[Sequence[str]], ws: Iterable[str]) -> float:
    """Percentage of corpus tokens that belong to ``ws``, rounded to one decimal."""
    return round(float(coverage_fraction(corpus, ws) * 100), 1)
