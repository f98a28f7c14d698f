import math

import pytest
from hypothesis import given, strategies as st

from xmpc.hypotheses import Statement
from xmpc.metrics import faithfulness, ranking_metrics, rouge_l


def test_rouge_identical_and_disjoint():
    assert rouge_l("Heating was raised", "heating WAS raised") == 1.0
    assert rouge_l("vents opened", "heating was raised") == 0.0


def test_rouge_hand_value():
    assert rouge_l("a b c", "a x c y") == 0.5


def test_rouge_empty_reference():
    with pytest.raises(ValueError):
        rouge_l("a", "   ")


def _stmts(*tags):
    return [Statement("Primary Reason", t, "text") for t in tags]


def test_faithfulness_counts_instantaneous_tags():
    assert faithfulness(_stmts("current-state", "kkt")) == 1.0
    assert faithfulness(_stmts("current-state", "current-state", "current-state", "forecast")) == 0.75
    assert faithfulness(_stmts("forecast"), supported=lambda s: True) == 1.0
    with pytest.raises(ValueError):
        faithfulness([])


def test_exact_match():
    m = ranking_metrics(["T_lower", "T_out"], ["T_lower", "T_out"], 1)
    assert m["precision"] == m["ndcg"] == m["mrr"] == 1.0
    assert m["recall"] == 0.5
    assert m["f1"] == pytest.approx(2 / 3)


def test_first_hit_at_rank_two():
    m = ranking_metrics(["Q_rad", "T_out", "T_lower"], ["T_out"], 3)
    assert m["mrr"] == 0.5
    assert m["precision"] == pytest.approx(1 / 3)
    assert m["ndcg"] == pytest.approx(1 / math.log2(3))


def test_no_hits_and_bad_k():
    assert ranking_metrics([], ["x"], 3) == {"precision": 0.0, "recall": 0.0, "f1": 0.0, "mrr": 0.0, "ndcg": 0.0}
    with pytest.raises(ValueError):
        ranking_metrics(["x"], ["x"], 0)


words = st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=12).map(" ".join)
names = st.lists(st.sampled_from(["T_out", "Q_rad", "H_out", "C_out", "T_lower", "economic"]), unique=True,
                 max_size=6)


@given(words, words)
def test_rouge_bounded(c, r):
    assert 0.0 <= rouge_l(c, r) <= 1.0


@given(names, names.filter(bool), st.integers(1, 6))
def test_ranking_bounded(pred, truth, k):
    m = ranking_metrics(pred, truth, k)
    assert all(0.0 <= v <= 1.0 + 1e-12 for v in m.values())
    if pred and pred[0] in truth:
        assert m["mrr"] == 1.0
