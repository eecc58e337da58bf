import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maskbench.scorer import (
    ScoringConsistencyError, UndefinedMetricError, align, recovery_rate, restricted_lm_accuracy, score, wer,
)

from oracles import levenshtein

VOCAB = list("abcde")


def random_pair(rng):
    ref = list(rng.choice(VOCAB, size=int(rng.integers(0, 13))))
    hyp = list(rng.choice(VOCAB, size=int(rng.integers(0, 13))))
    return ref, hyp


def test_align_examples():
    assert align(["a", "dog"], ["a", "dog"]).op_string == "MM"
    al = align(["a", "dog", "runs"], ["a", "cat", "runs"])
    assert al.op_string == "MSM" and al.subs == 1
    assert align(["a"], []).op_string == "D"
    assert align([], ["a"]).op_string == "I"
    assert align([], []).ops == []


def test_align_tie_break_prefers_substitution():
    # cost 2 either way; Sub+Sub beats Del+Ins
    assert align(["a", "b"], ["b", "c"]).op_string == "SS"


def test_align_matches_oracle_on_random_pairs():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        ref, hyp = random_pair(rng)
        al = align(ref, hyp)
        assert al.cost == levenshtein(ref, hyp)
        assert [op.ref_idx for op in al.ops if op.ref_idx is not None] == list(range(len(ref)))
        assert [op.hyp_idx for op in al.ops if op.hyp_idx is not None] == list(range(len(hyp)))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(VOCAB), max_size=10), st.lists(st.sampled_from(VOCAB), max_size=10))
def test_align_ops_are_consistent(ref, hyp):
    al = align(ref, hyp)
    for op in al.ops:
        if op.kind == "M":
            assert ref[op.ref_idx] == hyp[op.hyp_idx]
        if op.kind == "S":
            assert ref[op.ref_idx] != hyp[op.hyp_idx]
    assert align(ref, hyp).ops == al.ops
    assert al.cost == align(hyp, ref).cost


def test_wer_examples():
    assert wer([(["a", "b"], ["a", "b"])]).wer_percent == 0.0
    assert round(wer([(list("abc"), list("axc"))]).wer_percent, 1) == 33.3
    assert wer([(["a"], ["a", "b"])]).wer_percent == 100.0
    assert wer([(["a"], ["x", "y"])]).wer_percent == 200.0


def test_wer_pools_counts():
    rep = wer([(["a"], ["x"]), (list("abcd"), list("abcd"))])
    assert rep.wer_percent == 20.0 and rep.N == 5


def test_wer_undefined():
    with pytest.raises(UndefinedMetricError):
        wer([])
    with pytest.raises(UndefinedMetricError):
        wer([([], ["a"])])


def test_wer_hand_arithmetic_on_random_corpora():
    rng = np.random.default_rng(7)
    for _ in range(100):
        pairs = [random_pair(rng) for _ in range(int(rng.integers(1, 6)))]
        n = sum(len(r) for r, _ in pairs)
        if n == 0:
            continue
        want = 100.0 * sum(levenshtein(r, h) for r, h in pairs) / n
        assert wer(pairs).wer_percent == pytest.approx(want, abs=1e-12)


def test_rr_examples():
    assert recovery_rate([(["the", "dog"], ["the", "dog"])], [{1}]).rr_percent == 100.0
    assert recovery_rate([(["the", "dog", "runs"], ["the", "cat", "runs"])], [{1}]).rr_percent == 0.0
    rep = recovery_rate(
        [(["a", "dog", "on", "grass"], ["a", "cat", "on", "grass"]),
         (["two", "dogs", "at", "beach"], ["two", "dogs", "at", "beach"])],
        [{1, 3}, {1, 3}],
    )
    assert (rep.recovered, rep.masked_total, rep.rr_percent) == (3, 4, 75.0)


def test_rr_word_elsewhere_does_not_count():
    # "dog" appears in the hypothesis, but at an inserted position
    rep = recovery_rate([(["a", "dog"], ["a", "x", "dog", "dog"])], [{1}])
    assert rep.recovered <= 1
    rep = recovery_rate([(["a", "dog", "b"], ["dog", "a", "x", "b"])], [{1}])
    assert rep.recovered == 0


def test_rr_errors_and_empty():
    with pytest.raises(ScoringConsistencyError):
        recovery_rate([(["a"], ["a"])], [{3}])
    with pytest.raises(ScoringConsistencyError):
        recovery_rate([(["a"], ["a"])], [])
    assert recovery_rate([(["a"], ["a"])], [set()]).rr_percent is None


def rr_fixture(rng):
    """Hypotheses differ from references only by substitutions with tokens absent from the vocabulary,
    so the alignment is positional and recovery can be read off position by position."""
    pairs, masked, expected = [], [], []
    for _ in range(int(rng.integers(1, 5))):
        ref = list(rng.choice(VOCAB, size=int(rng.integers(1, 10))))
        subbed = rng.random(len(ref)) < 0.4
        hyp = [f"#{i}" if s else w for i, (w, s) in enumerate(zip(ref, subbed))]
        m = {int(i) for i in np.flatnonzero(rng.random(len(ref)) < 0.5)}
        pairs.append((ref, hyp))
        masked.append(m)
        expected.append(sum(1 for i in m if not subbed[i]))
    return pairs, masked, expected


def test_rr_matches_positional_oracle():
    rng = np.random.default_rng(99)
    for _ in range(200):
        pairs, masked, expected = rr_fixture(rng)
        rep = recovery_rate(pairs, masked)
        total = sum(len(m) for m in masked)
        assert rep.recovered == sum(expected)
        assert [u.recovered for u in rep.per_utterance] == expected
        assert rep.rr_percent == (100.0 * sum(expected) / total if total else None)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.sampled_from(VOCAB), min_size=1, max_size=8), min_size=1, max_size=4), st.data())
def test_rr_identity_is_100_and_bounded(refs, data):
    masked = [data.draw(st.sets(st.integers(0, len(r) - 1))) for r in refs]
    rep = recovery_rate([(r, r) for r in refs], masked)
    if rep.masked_total:
        assert rep.rr_percent == 100.0
    hyps = [data.draw(st.lists(st.sampled_from(VOCAB), max_size=8)) for _ in refs]
    rep = recovery_rate(list(zip(refs, hyps)), masked)
    assert 0 <= rep.recovered <= rep.masked_total


def test_report_json_has_op_strings():
    rep = score([(["a", "b"], ["a", "x", "b"])], [{0}], ["u1"])
    d = json.loads(rep.to_json())
    assert d["per_utterance"][0]["ops"] == "MIM"
    assert d["per_utterance"][0]["utterance_id"] == "u1"


def test_restricted_lm_examples():
    assert restricted_lm_accuracy([["dog"], ["cat"]], ["dog", "cat"], {"dog", "cat"}) == (100.0, 100.0)
    overall, restricted = restricted_lm_accuracy([["dog", "a"], ["the"], ["cat"]], ["dog", "ball", "ball"],
                                                 {"dog", "cat", "ball"})
    assert round(overall, 1) == 33.3 and restricted == 50.0
    assert restricted_lm_accuracy([["the"]], ["the"], {"dog"}) == (100.0, None)


def test_restricted_lm_errors():
    with pytest.raises(UndefinedMetricError):
        restricted_lm_accuracy([[]], ["dog"], {"dog"})
    with pytest.raises(ScoringConsistencyError):
        restricted_lm_accuracy([["a"]], [], {"dog"})


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=30))
def test_restricted_at_least_overall_when_in_set_is_better(rows):
    # rows: (top-1 in set, top-1 correct)
    in_set = [c for s, c in rows if s]
    out_set = [c for s, c in rows if not s]
    preds, truths = [], []
    for k, (s, c) in enumerate(rows):
        top = f"n{k}" if s else f"o{k}"
        preds.append([top])
        truths.append(top if c else "zzz")
    ws = {f"n{k}" for k in range(len(rows))}
    overall, restricted = restricted_lm_accuracy(preds, truths, ws)
    assert overall == 100.0 * sum(c for _, c in rows) / len(rows)
    if not in_set:
        assert restricted is None
        return
    assert restricted == 100.0 * sum(in_set) / len(in_set)
    if not out_set or sum(in_set) / len(in_set) >= sum(out_set) / len(out_set):
        assert restricted >= overall - 1e-9
