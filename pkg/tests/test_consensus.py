import pytest
from hypothesis import given, strategies as st

from ttsr.consensus import (EMPTY, canonicalize_answer, extract_final_answer, majority_vote,
                            pseudo_correctness_score, pseudo_reward)


@pytest.mark.parametrize("raw,expected", [(" 042 ", "42"), ("", EMPTY), ("-0", "0"), ("+7", "7"),
                                          ("seven", EMPTY), ("4.0", EMPTY), (None, EMPTY)])
def test_canonicalize_toy(raw, expected):
    assert canonicalize_answer(raw) == expected


@pytest.mark.parametrize("raw,expected", [
    ("The answer is \\boxed{7}.", "7"),
    ("first \\boxed{1} then \\boxed{ 2 }", "2"),
    ("nested \\boxed{\\frac{1}{2}}", "\\frac{1}{2}"),
    ("work\n\nThe Answer  Is 3\n", "the answer is 3"),
    ("", EMPTY),
    ("\\boxed{}", EMPTY),
])
def test_canonicalize_remote(raw, expected):
    assert canonicalize_answer(raw, "remote") == expected


def test_unknown_kind():
    with pytest.raises(ValueError):
        canonicalize_answer("1", "latex")


def test_extract_unclosed_box_falls_back():
    assert extract_final_answer("\\boxed{3") == "\\boxed{3"


def test_vote_hand_values():
    r = majority_vote(["7", "7", "3", "7", "5"])
    assert (r.pseudo_target, r.score_s, r.tie_flag) == ("7", 0.6, False)
    r = majority_vote(["b", "a", "b", "a"])
    assert (r.pseudo_target, r.tie_flag, r.score_s) == ("a", True, 0.5)
    r = majority_vote(["x"])
    assert (r.pseudo_target, r.score_s) == ("x", 1.0)
    with pytest.raises(ValueError):
        majority_vote([])


def test_empty_sentinel_only_wins_when_alone():
    assert majority_vote([EMPTY, EMPTY, "4"]).pseudo_target == "4"
    assert majority_vote([EMPTY, EMPTY]).pseudo_target == EMPTY


def test_rewards():
    assert pseudo_reward("7", "7") == 1
    assert pseudo_reward("7", "8") == 0
    assert pseudo_reward(EMPTY, "7") == 0
    assert pseudo_correctness_score([1, 1, 0, 1, 0]) == 0.6
    assert pseudo_correctness_score([1, 1]) == 1.0
    assert pseudo_correctness_score([0, 0]) == 0.0
    with pytest.raises(ValueError):
        pseudo_correctness_score([])


@given(st.lists(st.sampled_from(["1", "2", "3", "10"]), min_size=1, max_size=12))
def test_vote_properties(answers):
    r = majority_vote(answers)
    top = max(answers.count(a) for a in set(answers))
    assert answers.count(r.pseudo_target) == top
    assert r.pseudo_target == min(a for a in set(answers) if answers.count(a) == top)
    assert r.tie_flag == (sum(1 for a in set(answers) if answers.count(a) == top) > 1)
    assert r.score_s == pseudo_correctness_score([pseudo_reward(a, r.pseudo_target) for a in answers])
    assert majority_vote(list(reversed(answers))) == r
