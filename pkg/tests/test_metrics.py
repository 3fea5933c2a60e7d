import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffbeam.metrics import cer, corpus_cer, corpus_wer, edit_distance, wer


def ref_distance(a, b):
    # plain recursive-table Levenshtein
    d = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        for j in range(len(b) + 1):
            if i == 0 or j == 0:
                d[i][j] = i + j
            else:
                d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return d[-1][-1]


def test_examples():
    assert wer("a cat", "a cat") == 0.0
    assert wer("the cat", "a cat") == 50.0
    assert wer(["x"], ["a", "b"]) == 100.0
    assert cer("ab", "ab") == 0.0
    assert cer("a b", "ab") == pytest.approx(50.0)


def test_counts():
    assert edit_distance("abc", "abc") == (0, 0, 0, 0)
    assert edit_distance("abxc", "abc") == (1, 0, 1, 0)
    assert edit_distance("ac", "abc") == (1, 0, 0, 1)
    assert edit_distance("axc", "abc") == (1, 1, 0, 0)


def test_empty_reference():
    with pytest.raises(ValueError):
        wer("a", "")
    with pytest.raises(ValueError):
        corpus_wer([("a", "b"), ("a", [])])


@given(st.lists(st.sampled_from("abcd"), max_size=8), st.lists(st.sampled_from("abcd"), max_size=8))
def test_matches_reference(a, b):
    d, s, i, dl = edit_distance(a, b)
    assert d == ref_distance(a, b)
    assert d == s + i + dl
    assert len(a) - len(b) == i - dl


def test_corpus_pooling():
    pairs = [("a b", "a c"), ("x", "y z w")]
    assert corpus_wer(pairs) == pytest.approx(100.0 * (1 + 3) / 5)
    assert corpus_cer([("ab", "ab"), ("", "cd")]) == pytest.approx(50.0)
