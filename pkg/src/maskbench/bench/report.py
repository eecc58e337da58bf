"""Side-by-side comparison of how several runs transcribe the masked words."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from ..corruptor import load_plans
from ..lexmask import read_transcripts
from ..scorer import align

DELETED = "*"


def words_at_reference(ref: Sequence[str], hyp: Sequence[str]) -> list[str]:
    """For each reference position, the hypothesis word aligned to it (``*`` if deleted)."""
    out = [DELETED] * len(ref)
    for op in align(list(ref), list(hyp)).ops:
        if op.kind in ("M", "S"):
            out[op.ref_idx] = hyp[op.hyp_idx]
    return out


@dataclass
class DumpRow:
    utterance_id: str
    disagreement: int
    ref: list[str]
    masked: list[int]
    hyps: dict[str, list[str]] = field(default_factory=dict)
    at_masked: dict[str, list[str]] = field(default_factory=dict)


def disagreement(outputs: Sequence[Sequence[str]]) -> int:
    """Sum over masked positions of (distinct run outputs - 1); 0 when all runs agree."""
    if not outputs:
        return 0
    return sum(len(set(col)) - 1 for col in zip(*outputs))


def qualitative_dump(runs: Mapping[str, Mapping[str, Sequence[str]]], refs: Mapping[str, Sequence[str]],
                     masked: Mapping[str, Sequence[int]], k: int) -> list[DumpRow]:
    """The ``k`` utterances where the runs disagree most at masked positions.

    ``runs`` maps a run name to its hypotheses by utterance id; every run must
    cover the same utterances. Ties go to the smaller utterance id.
    """
    if k <= 0 or not runs:
        return []
    names = sorted(runs)
    common = set(runs[names[0]])
    for n in names[1:]:
        if set(runs[n]) != common:
            raise ValueError(f"run {n!r} decoded a different utterance set than {names[0]!r}")
    rows = []
    for utt in sorted(common):
        ref = list(refs[utt])
        idx = sorted(masked.get(utt, ()))
        at = {}
        for n in names:
            aligned = words_at_reference(ref, runs[n][utt])
            at[n] = [aligned[i] for i in idx]
        rows.append(DumpRow(utt, disagreement([at[n] for n in names]), ref, idx,
                            {n: list(runs[n][utt]) for n in names}, at))
    rows.sort(key=lambda r: (-r.disagreement, r.utterance_id))
    return rows[:k]


def render_dump(rows: Sequence[DumpRow]) -> str:
    if not rows:
        return "(no utterances)"
    width = max(len("REF"), *(len(n) for r in rows for n in r.hyps))
    blocks = []
    for r in rows:
        ref = " ".join(f"[{w}]" if i in r.masked else w for i, w in enumerate(r.ref))
        lines = [f"{r.utterance_id}  disagreement={r.disagreement}", f"  {'REF':<{width}}  {ref}"]
        for n, hyp in r.hyps.items():
            lines.append(f"  {n:<{width}}  {' '.join(hyp)}    masked -> {' '.join(r.at_masked[n]) or '-'}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def read_hyps(path) -> dict[str, list[str]]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            utt, _, rest = line.partition("\t")
            out[utt] = rest.split()
    return out


def load_runs(run_dir) -> tuple[dict[str, dict[str, list[str]]], dict[str, list[str]], dict[str, list[int]]]:
    """Collect ``<condition>/seed*.hyp`` files, references and mask plans from an experiment directory."""
    root = Path(run_dir)
    runs = {}
    for hyp in sorted(root.glob("*/seed*.hyp")):
        runs[f"{hyp.parent.name.replace('__', '/')}/{hyp.stem}"] = read_hyps(hyp)
    refs = read_transcripts(root / "refs.txt")
    plans = load_plans(root / "plans.json")
    return runs, refs, {u: sorted(p.masked_token_indices) for u, p in plans.items()}
