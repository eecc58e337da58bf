"""Reference/hypothesis word alignment, WER and masked-word Recovery Rate."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Sequence

MATCH, SUB, DEL, INS = "M", "S", "D", "I"


class UndefinedMetricError(ValueError):
    pass


class ScoringConsistencyError(ValueError):
    pass


class Op(NamedTuple):
    kind: str
    ref_idx: int | None
    hyp_idx: int | None


@dataclass
class AlignmentResult:
    ops: list[Op]
    n_ref: int
    n_hyp: int

    @property
    def subs(self) -> int:
        return sum(op.kind == SUB for op in self.ops)

    @property
    def dels(self) -> int:
        return sum(op.kind == DEL for op in self.ops)

    @property
    def ins(self) -> int:
        return sum(op.kind == INS for op in self.ops)

    @property
    def matches(self) -> int:
        return sum(op.kind == MATCH for op in self.ops)

    @property
    def cost(self) -> int:
        return self.subs + self.dels + self.ins

    @property
    def op_string(self) -> str:
        return "".join(op.kind for op in self.ops)

    def matched_ref_indices(self) -> set[int]:
        return {op.ref_idx for op in self.ops if op.kind == MATCH}


def align(ref: Sequence[str], hyp: Sequence[str]) -> AlignmentResult:
    """Unit-cost minimum edit alignment.

    When several alignments share the minimum cost the traceback (run from
    the end of both sequences) prefers Match, then Sub, then Del, then Ins.
    """
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        r = ref[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (r != hyp[j - 1])
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)
    ops: list[Op] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and d[i][j] == d[i - 1][j - 1]:
            ops.append(Op(MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + 1:
            ops.append(Op(SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            ops.append(Op(DEL, i - 1, None))
            i -= 1
        else:
            ops.append(Op(INS, None, j - 1))
            j -= 1
    ops.reverse()
    return AlignmentResult(ops, n, m)


@dataclass
class UtteranceScore:
    utterance_id: str
    ops: str
    S: int
    D: int
    I: int
    N: int
    masked: int = 0
    recovered: int = 0


@dataclass
class ScoreReport:
    wer_percent: float | None = None
    S: int = 0
    D: int = 0
    I: int = 0
    N: int = 0
    rr_percent: float | None = None
    recovered: int = 0
    masked_total: int = 0
    per_utterance: list[UtteranceScore] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _ids(n: int, ids: Sequence[str] | None) -> list[str]:
    return list(ids) if ids is not None else [str(k) for k in range(n)]


def score(
    pairs: Sequence[tuple[Sequence[str], Sequence[str]]],
    masked: Sequence[Iterable[int]] | None = None,
    ids: Sequence[str] | None = None,
) -> ScoreReport:
    """Pooled WER over all pairs and, when ``masked`` is given, the Recovery Rate.

    A masked reference token counts as recovered only if the alignment
    matches it in place; the same word appearing elsewhere does not count.
    """
    if masked is not None and len(masked) != len(pairs):
        raise ScoringConsistencyError("need one masked-index set per utterance")
    rep = ScoreReport()
    for k, (utt, (ref, hyp)) in enumerate(zip(_ids(len(pairs), ids), pairs)):
        al = align(list(ref), list(hyp))
        u = UtteranceScore(utt, al.op_string, al.subs, al.dels, al.ins, al.n_ref)
        if masked is not None:
            idx = set(masked[k])
            bad = [i for i in idx if not 0 <= i < len(ref)]
            if bad:
                raise ScoringConsistencyError(f"{utt}: masked index {bad[0]} outside a {len(ref)}-token reference")
            u.masked = len(idx)
            u.recovered = len(idx & al.matched_ref_indices())
        rep.per_utterance.append(u)
        rep.S += u.S
        rep.D += u.D
        rep.I += u.I
        rep.N += u.N
        rep.masked_total += u.masked
        rep.recovered += u.recovered
    if rep.N > 0:
        rep.wer_percent = 100.0 * (rep.S + rep.D + rep.I) / rep.N
    if rep.masked_total > 0:
        rep.rr_percent = 100.0 * rep.recovered / rep.masked_total
    return rep


def wer(pairs, ids=None) -> ScoreReport:
    if not pairs:
        raise UndefinedMetricError("WER needs at least one utterance")
    rep = score(pairs, None, ids)
    if rep.N == 0:
        raise UndefinedMetricError("WER is undefined for an empty reference set")
    return rep


def recovery_rate(pairs, masked_indices, ids=None) -> ScoreReport:
    return score(pairs, masked_indices, ids)


def restricted_lm_accuracy(
    predictions: Sequence[Sequence[str]],
    truths: Sequence[str],
    ws: Iterable[str],
) -> tuple[float, float | None]:
    """Top-1 accuracy over all masked positions, and over those whose top-1 is in ``ws``.

    The second value is None when no top-1 prediction falls in the set.
    """
    if len(predictions) != len(truths):
        raise ScoringConsistencyError("need one prediction list per masked position")
    if not predictions:
        raise UndefinedMetricError("no masked positions to score")
    words = {w.lower() for w in getattr(ws, "words", ws)}
    correct = in_set = in_set_correct = 0
    for ranked, truth in zip(predictions, truths):
        if not ranked:
            raise UndefinedMetricError("empty prediction list")
        top = ranked[0]
        hit = top == truth
        correct += hit
        if top.lower() in words:
            in_set += 1
            in_set_correct += hit
    overall = 100.0 * correct / len(truths)
    restricted = 100.0 * in_set_correct / in_set if in_set else None
    return overall, restricted
