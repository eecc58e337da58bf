"""Synthetic spoken-caption corpus where every word is a fixed two-tone pattern.

Captions follow a small grammar over a 30-word vocabulary, e.g. "a young boy
plays near the dog". The slot after the second determiner holds the picture's
subject noun; sometimes a second prepositional phrase adds another noun. The
nouns are the words that get masked. The visual vector for an utterance is a
one-hot over the nouns pointing at its subject, so it identifies the first
masked word and says nothing about a second one.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..lexmask import Provenance, WordSet, write_transcripts, write_wordset
from ..signalio import FeatureMatrix, Waveform, mel_center_frequencies, write_features, write_wav

NOUNS = ("dog", "ball", "beach", "horse", "bike")
FILLERS = (
    "a", "the", "two", "red", "blue", "small", "big", "green", "old", "young",
    "man", "woman", "boy", "girl", "runs", "jumps", "sits", "plays", "is",
    "on", "in", "with", "near", "at", "by",
)
FILLER_TAGS = {
    **{w: "DT" for w in ("a", "the")},
    **{w: "CD" for w in ("two",)},
    **{w: "NN" for w in ("man", "woman", "boy", "girl")},
    **{w: "VBZ" for w in ("runs", "jumps", "sits", "plays", "is")},
    **{w: "IN" for w in ("on", "in", "with", "near", "at", "by")},
    **{w: "JJ" for w in ("red", "blue", "small", "big", "green", "old", "young")},
}

RATE = 16000
WORD_SECONDS = 0.10
GAP_SECONDS = 0.03
N_MEL_SLOTS = 40


def word_tones(vocab: tuple[str, ...], n_mels: int = N_MEL_SLOTS, rate: int = RATE) -> dict[str, tuple[float, float]]:
    """Per-word (first-half, second-half) frequencies.

    Both halves sit on mel filter centres, and the first-half filter is
    unique to each word, so every frame of a word already identifies it.
    """
    centers = mel_center_frequencies(n_mels, rate)
    slots = list(range(3, n_mels - 3))
    if len(vocab) > len(slots):
        raise ValueError(f"at most {len(slots)} words fit on a {n_mels}-band grid")
    half = len(vocab) // 2 or 1
    return {w: (float(centers[slots[i]]), float(centers[slots[(i + half) % len(vocab)]]))
            for i, w in enumerate(vocab)}


def render_word(f1: float, f2: float, rate: int = RATE, seconds: float = WORD_SECONDS,
                amplitude: float = 0.4) -> np.ndarray:
    n = int(round(seconds * rate))
    half = n // 2
    freq = np.where(np.arange(n) < half, f1, f2)
    phase = 2 * np.pi * np.cumsum(freq) / rate
    ramp = np.minimum(1.0, np.minimum(np.arange(n), n - 1 - np.arange(n)) / (0.005 * rate))
    return amplitude * ramp * np.sin(phase)


@dataclass
class SynthUtterance:
    utt_id: str
    words: list[str]
    subject: str
    samples: np.ndarray
    timings: list[tuple[str, float, float]]


@dataclass
class SynthCorpus:
    utterances: list[SynthUtterance]
    nouns: tuple[str, ...]
    splits: dict[str, str]

    @property
    def vocab(self) -> tuple[str, ...]:
        return tuple(self.nouns) + FILLERS

    def visual(self, utt: SynthUtterance) -> np.ndarray:
        v = np.zeros(len(self.nouns))
        v[self.nouns.index(utt.subject)] = 1.0
        return v


DETERMINERS = ("a", "the", "two")
ADJECTIVES = ("red", "blue", "small", "big", "green", "old", "young")
PERSONS = ("man", "woman", "boy", "girl")
VERBS = ("runs", "jumps", "sits", "plays", "is")
PREPOSITIONS = ("on", "in", "with", "near", "at", "by")


def caption(rng: np.random.Generator, subject: str, nouns: tuple[str, ...], second_noun_prob: float,
            adj_prob: float = 0.5) -> list[str]:
    """``det [adj] person verb prep det NOUN [prep det NOUN2]``."""
    words = [str(rng.choice(DETERMINERS))]
    if rng.random() < adj_prob:
        words.append(str(rng.choice(ADJECTIVES)))
    words += [str(rng.choice(PERSONS)), str(rng.choice(VERBS)), str(rng.choice(PREPOSITIONS)),
              str(rng.choice(DETERMINERS[:2])), subject]
    if rng.random() < second_noun_prob:
        other = str(rng.choice([n for n in nouns if n != subject]))
        words += [str(rng.choice(PREPOSITIONS)), str(rng.choice(DETERMINERS[:2])), other]
    return words


def make_corpus(n_utts: int = 200, seed: int = 1234, second_noun_prob: float = 0.1,
                test_fraction: float = 0.3, nouns: tuple[str, ...] = NOUNS) -> SynthCorpus:
    rng = np.random.default_rng(seed)
    vocab = tuple(nouns) + FILLERS
    tones = word_tones(vocab)
    gap = np.zeros(int(round(GAP_SECONDS * RATE)))
    utts = []
    for k in range(n_utts):
        subject = str(rng.choice(nouns))
        words = caption(rng, subject, tuple(nouns), second_noun_prob)
        pieces, timings, t = [gap], [], len(gap) / RATE
        for w in words:
            audio = render_word(*tones[w])
            timings.append((w, t, t + len(audio) / RATE))
            pieces += [audio, gap]
            t += (len(audio) + len(gap)) / RATE
        utts.append(SynthUtterance(f"utt{k:04d}", words, subject, np.concatenate(pieces), timings))
    n_test = int(round(test_fraction * n_utts))
    splits = {u.utt_id: ("test" if i >= n_utts - n_test else "train") for i, u in enumerate(utts)}
    return SynthCorpus(utts, tuple(nouns), splits)


def write_corpus(corpus: SynthCorpus, root) -> dict[str, str]:
    """Lay the corpus out on disk in the formats the experiment runner reads; returns the paths."""
    root = Path(root)
    wav_dir = root / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    for u in corpus.utterances:
        write_wav(Waveform(u.samples, RATE), wav_dir / f"{u.utt_id}.wav")
    write_transcripts({u.utt_id: u.words for u in corpus.utterances}, root / "text.txt")
    with open(root / "tagged.txt", "w") as fh:
        for u in corpus.utterances:
            tagged = " ".join(f"{w}/{'NN' if w in corpus.nouns else FILLER_TAGS[w]}" for w in u.words)
            fh.write(f"{u.utt_id}\t{tagged}\n")
    with open(root / "align.ctm", "w") as fh:
        for u in corpus.utterances:
            for w, s, e in u.timings:
                fh.write(f"{u.utt_id} 1 {s:.4f} {e - s:.4f} {w}\n")
    with open(root / "splits.txt", "w") as fh:
        for utt, split in corpus.splits.items():
            fh.write(f"{utt}\t{split}\n")
    write_wordset(WordSet("synthetic_nouns", frozenset(corpus.nouns), Provenance.EXPLICIT, "synthetic subject nouns"),
                  root / "nouns.txt")
    ids = [u.utt_id for u in corpus.utterances]
    write_features(FeatureMatrix(np.stack([corpus.visual(u) for u in corpus.utterances])), root / "visual.feat")
    (root / "visual.ids").write_text("\n".join(ids) + "\n")
    return {
        "wav_dir": str(wav_dir),
        "transcripts": str(root / "text.txt"),
        "tagged": str(root / "tagged.txt"),
        "alignments": str(root / "align.ctm"),
        "splits": str(root / "splits.txt"),
        "visual_features": str(root / "visual.feat"),
        "visual_ids": str(root / "visual.ids"),
        "wordset": str(root / "nouns.txt"),
    }


# Desk-scale settings under which the tone corpus is learnable in a couple of
# minutes per model on one core.
SYNTH_MODEL = {"hidden_dim": 32, "embed_dim": 16, "attention_dim": 32, "n_layers": 6,
               "subsample_layers": [3, 4], "n_mels": 40, "pitch": True, "max_decode_len": 20}
SYNTH_TRAIN = {"epochs": 30, "batch_size": 8, "lr": 3e-3, "init_scale": 0.8, "clip_norm": 5.0}


def synthetic_config(paths: dict[str, str], root=None, visual: str = "archive", congruency: str = "congruent",
                     seeds=(1, 2, 3), output_dir: str = "runs", name: str = "synthetic") -> dict:
    """An experiment config dict for a corpus written by ``write_corpus``.

    With ``root`` given, paths are made relative to it so the config can sit
    next to the data.
    """
    def rel(p):
        return str(Path(p).relative_to(Path(root).resolve())) if root is not None else p

    if root is not None:
        paths = {k: str(Path(v).resolve()) for k, v in paths.items()}
    data = {k: rel(paths[k]) for k in ("wav_dir", "transcripts", "alignments", "splits", "tagged")}
    if visual == "archive":
        data.update(visual_features=rel(paths["visual_features"]), visual_ids=rel(paths["visual_ids"]))
    return {
        "name": name,
        "data": data,
        "wordset": {"kind": "file", "path": rel(paths["wordset"])},
        "mask": {"type": "silence", "expansion": 0.25, "duration": 0.5, "noise_std": 0.1},
        "visual": visual,
        "congruency": congruency,
        "model": dict(SYNTH_MODEL),
        "train": dict(SYNTH_TRAIN),
        "seeds": list(seeds),
        "output_dir": output_dir,
    }
