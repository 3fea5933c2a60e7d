"""Exhaustive-enumeration oracles over all |D|^T frame paths (tiny instances only)."""

import itertools

import numpy as np

from diffbeam import align
from diffbeam.lexicon import Lexicon, TokenSet, Trie
from diffbeam.lognum import NEG_INF, logadd_many


def all_paths(T, D):
    return itertools.product(range(D), repeat=T)


def alignment_score(em, trans, y):
    """logadd over every path that collapses to ``y``."""
    y = list(y)
    scores = [align.path_score(em, trans, p) for p in all_paths(*em.shape) if align.collapse(p) == y]
    return logadd_many(scores)


def alignment_argmax(em, trans, y):
    y = list(y)
    best = None
    for p in all_paths(*em.shape):
        if align.collapse(p) == y:
            s = align.path_score(em, trans, p)
            if best is None or s > best[0]:
                best = (s, list(p))
    return best


def asg_normalizer(em, trans):
    return logadd_many([align.path_score(em, trans, p) for p in all_paths(*em.shape)])


def parse_words(collapsed, lexicon):
    """Word sequence spelled by a collapsed token string, or None."""
    sep = lexicon.tokens.sep
    if not collapsed or collapsed[0] == sep or collapsed[-1] == sep:
        return None
    by_spelling = {tuple(s): w for w, s in zip(lexicon.words, lexicon.spellings)}
    words, cur = [], []
    for tok in list(collapsed) + [sep]:
        if tok == sep:
            w = by_spelling.get(tuple(cur))
            if w is None:
                return None
            words.append(w)
            cur = []
        else:
            cur.append(tok)
    return words


def word_sequence_scores(em, trans, lexicon, lm):
    """{word tuple: logadd over its alignments of path score + h(words)}."""
    groups = {}
    for p in all_paths(*em.shape):
        words = parse_words(align.collapse(p), lexicon)
        if words is None:
            continue
        groups.setdefault(tuple(words), []).append(align.path_score(em, trans, p) + lm.score(words))
    return {k: logadd_many(v) for k, v in groups.items()}


def exact_normalizer(em, trans, lexicon, lm):
    s = word_sequence_scores(em, trans, lexicon, lm)
    return logadd_many(list(s.values())) if s else NEG_INF


def tiny_instance(seed, words=None, T=None, letters="ab"):
    """Random lexicon of <= 3 words over ``letters`` + separator, emissions and transitions."""
    rng = np.random.default_rng(seed)
    toks = TokenSet(list(letters) + [" "], " ")
    if words is None:
        pool = [w for n in (1, 2) for w in map("".join, itertools.product(letters, repeat=n))
                if all(w[i] != w[i - 1] for i in range(1, len(w)))]
        k = int(rng.integers(1, 4))
        words = [pool[i] for i in rng.choice(len(pool), size=min(k, len(pool)), replace=False)]
    lex = Lexicon.from_words(list(words), toks)
    T = int(rng.integers(2, 7)) if T is None else T
    D = len(toks)
    em = rng.normal(size=(T, D))
    trans = align.TransitionMatrix(rng.normal(size=(D, D)), rng.normal(size=D))
    return lex, Trie(lex), em, trans, rng


def random_target(rng, lexicon, T):
    """A target word sequence whose token string fits in T frames, or None."""
    for _ in range(50):
        n = int(rng.integers(1, 3))
        words = [lexicon.words[i] for i in rng.integers(0, len(lexicon.words), size=n)]
        if len(lexicon.target_tokens(words)) <= T:
            return words
    return None
