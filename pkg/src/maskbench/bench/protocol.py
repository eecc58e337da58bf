"""Image/utterance pairing for the congruency conditions."""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np


class Congruency(str, enum.Enum):
    CONGRUENT = "congruent"
    INCONGRUENT_DECODE = "incongruent_decode"
    INCONGRUENT_TRAIN = "incongruent_train"


class DerangementError(ValueError):
    pass


def derange(ids: Sequence[str], seed: int) -> list[str]:
    """Seeded Sattolo shuffle: position k receives ``result[k]``, never ``ids[k]``.

    Sattolo's algorithm draws a uniformly random single n-cycle, so no element
    can stay in place (a plain shuffle leaves ~1/e of lists with a fixed point).
    """
    items = list(ids)
    n = len(items)
    if n < 2:
        raise DerangementError(f"cannot derange {n} item(s)")
    if len(set(items)) != n:
        raise DerangementError("ids must be distinct")
    rng = np.random.default_rng(seed)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i))
        items[i], items[j] = items[j], items[i]
    return items


def assign_visual(ids: Sequence[str], congruent: bool, seed: int) -> dict[str, str]:
    """Map each utterance id to the id whose visual feature it will be paired with."""
    ids = list(ids)
    if congruent:
        return {u: u for u in ids}
    return dict(zip(ids, derange(ids, seed)))


def pairing_seeds(run_seed: int) -> tuple[int, int]:
    """Independent derangement seeds (train, test) derived from a run seed."""
    ss = np.random.SeedSequence([run_seed, 0x1D3A])
    a, b = ss.generate_state(2)
    return int(a), int(b)
