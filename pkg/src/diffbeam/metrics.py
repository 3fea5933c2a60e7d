"""Levenshtein-based error rates."""

import numpy as np


def edit_distance(a, b):
    """Unit-cost Levenshtein alignment of hypothesis ``a`` against reference ``b``.

    Returns ``(distance, substitutions, insertions, deletions)`` where
    insertions are extra hypothesis items and deletions are missed reference
    items. Among optimal alignments the backtrace prefers substitutions, then
    insertions.
    """
    a, b = list(a), list(b)
    n, m = len(a), len(b)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        ai = a[i - 1]
        for j in range(1, m + 1):
            d[i, j] = min(
                d[i - 1, j - 1] + (ai != b[j - 1]),
                d[i - 1, j] + 1,
                d[i, j - 1] + 1,
            )
    sub = ins = dele = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (a[i - 1] != b[j - 1]):
            sub += a[i - 1] != b[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            ins += 1
            i -= 1
        else:
            dele += 1
            j -= 1
    return int(d[n, m]), int(sub), ins, dele


def _rate(pairs, unit):
    errs = total = 0
    for hyp, ref in pairs:
        ref = unit(ref)
        if not ref:
            raise ValueError("empty reference")
        errs += edit_distance(unit(hyp), ref)[0]
        total += len(ref)
    return 100.0 * errs / total


def _words(x):
    return x.split() if isinstance(x, str) else list(x)


def _chars(x):
    return list(" ".join(_words(x)))


def wer(hyp, ref):
    """Word error rate in percent for one hypothesis/reference pair."""
    return _rate([(hyp, ref)], _words)


def cer(hyp, ref):
    """Character error rate in percent; words are joined by single spaces."""
    return _rate([(hyp, ref)], _chars)


def corpus_wer(pairs):
    """Total word edits over total reference words, in percent."""
    return _rate(pairs, _words)


def corpus_cer(pairs):
    return _rate(pairs, _chars)
