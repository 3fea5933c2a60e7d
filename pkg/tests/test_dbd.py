import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from diffbeam import align, dbd
from diffbeam.align import TransitionMatrix
from diffbeam.gradcheck import check_dbd
from diffbeam.lexicon import Lexicon, TokenSet, Trie
from diffbeam.lm import BilinearLM, PretrainedWrapper, ZeroLM, ngram_train
from diffbeam.lognum import logadd_many

BIG = 10**6


def make_lm(kind, lex, rng):
    if kind == "zero":
        return ZeroLM()
    if kind == "wrapper":
        corpus = [list(rng.choice(lex.words, size=int(rng.integers(1, 4)))) for _ in range(15)]
        return PretrainedWrapper(ngram_train(corpus, 2), lam=rng.uniform(0.3, 1.5), gamma=rng.normal())
    lm = BilinearLM(lex.words, dim=2, order=2, seed=int(rng.integers(1000)), scale=0.5)
    lm.M[:] = rng.normal(scale=0.5, size=lm.M.shape)
    return lm


def instance(seed, kind=None):
    lex, trie, em, tr, rng = oracles.tiny_instance(seed)
    kind = kind or ("zero", "wrapper", "bilinear")[seed % 3]
    lm = make_lm(kind, lex, rng)
    words = oracles.random_target(rng, lex, em.shape[0])
    return lex, trie, em, tr, lm, words


@pytest.mark.parametrize("seed", range(30))
def test_saturated_beam_matches_enumeration(seed):
    lex, trie, em, tr, lm, words = instance(seed)
    if words is None:
        pytest.skip("no target fits")
    y = lex.target_tokens(words)
    rep, lat = dbd.dbd_forward(em, tr, trie, lm, y, BIG)
    assert lat.saturated
    exact = oracles.exact_normalizer(em, tr, lex, lm)
    assert rep.corrected_Z == pytest.approx(exact, abs=1e-9)
    assert rep.beam_Z == pytest.approx(exact, abs=1e-9)
    scores = oracles.word_sequence_scores(em, tr, lex, lm)
    assert rep.numerator == pytest.approx(scores[tuple(words)], abs=1e-9)
    assert rep.intersect_Z == pytest.approx(rep.numerator, abs=1e-9)


@pytest.mark.parametrize("seed", range(30))
def test_beam_bounds_and_loss_sign(seed):
    lex, trie, em, tr, lm, words = instance(seed)
    if words is None:
        pytest.skip("no target fits")
    y = lex.target_tokens(words)
    exact = oracles.exact_normalizer(em, tr, lex, lm)
    for beam in (1, 2, 4, 8, 16, 32, 64):
        rep, lat = dbd.dbd_forward(em, tr, trie, lm, y, beam)
        assert rep.beam_Z <= exact + 1e-9
        assert rep.corrected_Z <= exact + 1e-9
        assert rep.corrected_Z >= rep.numerator - 1e-9
        assert rep.loss >= -1e-9
        assert rep.intersect_Z <= min(rep.beam_Z, rep.numerator) + 1e-9
        if lat.saturated:
            assert rep.corrected_Z == pytest.approx(exact, abs=1e-9)


def test_single_word_lexicon_is_exact_and_zero():
    toks = TokenSet(["a", " "], " ")
    lex = Lexicon.from_words(["a"], toks)
    trie = Trie(lex)
    rng = np.random.default_rng(0)
    em = rng.normal(size=(2, 2))
    tr = TransitionMatrix(rng.normal(size=(2, 2)), rng.normal(size=2))
    for lm in (ZeroLM(), PretrainedWrapper(ngram_train([["a"]], 2), 0.8, 0.4)):
        rep, lat = dbd.dbd_forward(em, tr, trie, lm, [0], 5)
        assert rep.loss == pytest.approx(0.0, abs=1e-12)
        assert rep.beam_Z == pytest.approx(rep.numerator, abs=1e-12)
        # the only complete path is (a, a)
        assert rep.numerator == pytest.approx(align.path_score(em, tr, [0, 0]) + lm.score(["a"]), abs=1e-12)
        dem, dtr, dlm = dbd.dbd_backward(lat, rep)
        assert np.abs(dem).max() < 1e-12 and np.abs(dtr.G).max() < 1e-12 and np.abs(dtr.start).max() < 1e-12
        assert all(np.abs(v).max() < 1e-12 for v in dlm.values())


def test_figure_scenario_a_cat():
    toks = TokenSet(["a", "c", "t", " "], " ")
    lex = Lexicon.from_words(["a", "cat"], toks)
    trie = Trie(lex)
    rng = np.random.default_rng(1)
    em = rng.normal(size=(5, 4))
    tr = TransitionMatrix(rng.normal(size=(4, 4)), rng.normal(size=4))
    lm = PretrainedWrapper(ngram_train([["a", "cat"], ["cat"], ["a", "a", "cat"]], 2), 1.0, 0.5)
    y = lex.target_tokens(["a", "cat"])
    rep, lat = dbd.dbd_forward(em, tr, trie, lm, y, BIG)
    # five tokens in five frames: exactly one valid alignment
    assert rep.numerator == pytest.approx(align.path_score(em, tr, y) + lm.score(["a", "cat"]), abs=1e-12)
    assert rep.corrected_Z == pytest.approx(oracles.exact_normalizer(em, tr, lex, lm), abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_lattice_structure(seed):
    lex, trie, em, tr, lm, words = instance(seed)
    if words is None:
        pytest.skip("no target fits")
    beam = 3
    rep, lat = dbd.dbd_forward(em, tr, trie, lm, lex.target_tokens(words), beam)
    assert np.all(lat.src < lat.dst)  # topological numbering, so acyclic
    has_in = np.zeros(lat.n_nodes, dtype=bool)
    has_in[lat.dst] = True
    for level in range(lat.T):
        lo, hi = lat.level_ptr[level], lat.level_ptr[level + 1]
        nodes = np.unique(lat.dst[lo:hi])
        assert len(nodes) <= beam
        keys = [lat.node_key[n] for n in nodes]
        assert len(set(keys)) == len(keys)
        assert has_in[nodes].all()


@pytest.mark.parametrize("seed", range(10))
def test_beam_term_frame_mass(seed):
    lex, trie, em, tr, lm, words = instance(seed)
    if words is None:
        pytest.skip("no target fits")
    rep, lat = dbd.dbd_forward(em, tr, trie, lm, lex.target_tokens(words), 4)
    if rep.beam_Z == -math.inf:
        pytest.skip("no complete hypothesis")
    dem, _, _ = dbd.beam_term_grad(lat)
    np.testing.assert_allclose(dem.sum(axis=1), 1.0, atol=1e-12)


def test_frozen_replay_zero_perturbation_bitwise():
    lex, trie, em, tr, lm, words = instance(4, "wrapper")
    rep, lat = dbd.dbd_forward(em, tr, trie, lm, lex.target_tokens(words), 3)
    again = dbd.frozen_replay(lat, em.copy(), tr.copy(), lm)
    assert again == rep


def test_frozen_replay_shape_errors():
    lex, trie, em, tr, lm, words = instance(5)
    rep, lat = dbd.dbd_forward(em, tr, trie, lm, lex.target_tokens(words), 3)
    with pytest.raises(ValueError):
        dbd.frozen_replay(lat, em[:-1], tr, lm)
    with pytest.raises(ValueError):
        dbd.frozen_replay(lat, em, TransitionMatrix.zeros(em.shape[1] + 1), lm)


def test_lm_perturbation_touches_only_word_edges():
    lex, trie, em, tr, lm, words = instance(7, "wrapper")
    rep, lat = dbd.dbd_forward(em, tr, trie, lm, lex.target_tokens(words), 5)
    before = lat.escore.copy()
    lm.gamma[...] += 0.3
    dbd.frozen_replay(lat, em, tr, lm)
    changed = before != lat.escore
    assert changed.any()
    assert np.all(lat.e_lm[changed] >= 0)


@pytest.mark.parametrize("seed", range(12))
def test_backward_matches_frozen_replay_fd(seed):
    assert all(r.passed for r in check_dbd(seed)), [str(r) for r in check_dbd(seed)]


def test_argument_errors():
    lex, trie, em, tr, lm, words = instance(2)
    y = lex.target_tokens(words)
    with pytest.raises(ValueError):
        dbd.dbd_forward(em, tr, trie, lm, y, 0)
    with pytest.raises(align.UnalignableError):
        dbd.dbd_forward(em[:1], tr, trie, lm, np.array([0, 2, 1]), 5)
    with pytest.raises(ValueError):
        dbd.dbd_decode(em, tr, trie, lm, 0)
    with pytest.raises(ValueError):
        dbd.dbd_decode(em, tr, trie, lm, 5, aggregate="mean")


def test_target_off_lexicon_rejected():
    toks = TokenSet(["a", "b", " "], " ")
    lex = Lexicon.from_words(["ab"], toks)
    em = np.zeros((4, 3))
    with pytest.raises(ValueError):
        dbd.dbd_forward(em, TransitionMatrix.zeros(3), Trie(lex), ZeroLM(), [1, 0], 5)


def test_decode_single_word():
    toks = TokenSet(["a", "b", " "], " ")
    lex = Lexicon.from_words(["a"], toks)
    # two frames leave room for exactly one word, so "a" is the only sequence
    for seed in range(5):
        em = np.random.default_rng(seed).normal(size=(2, 3))
        words, _ = dbd.dbd_decode(em, TransitionMatrix.zeros(3), Trie(lex), ZeroLM(), 10)
        assert words == ["a"]


@pytest.mark.parametrize("seed", range(25))
def test_decode_matches_enumeration(seed):
    lex, trie, em, tr, lm, _ = instance(seed)
    scores = oracles.word_sequence_scores(em, tr, lex, lm)
    if not scores:
        with pytest.raises(dbd.NoCompleteHypothesis):
            dbd.dbd_decode(em, tr, trie, lm, BIG)
        return
    best = max(scores.items(), key=lambda kv: kv[1])
    words, score = dbd.dbd_decode(em, tr, trie, lm, BIG)
    assert tuple(words) == best[0]
    assert score == pytest.approx(best[1], abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_viterbi_decode_matches_best_path(seed):
    import itertools

    lex, trie, em, tr, lm, _ = instance(seed)
    best = None
    for p in itertools.product(range(em.shape[1]), repeat=em.shape[0]):
        w = oracles.parse_words(align.collapse(p), lex)
        if w is None:
            continue
        s = align.path_score(em, tr, p) + lm.score(w)
        if best is None or s > best[0]:
            best = (s, w)
    if best is None:
        return
    words, score = dbd.dbd_decode(em, tr, trie, lm, BIG, aggregate="viterbi")
    assert score == pytest.approx(best[0], abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_decode_peaked_emissions(seed):
    rng = np.random.default_rng(seed)
    toks = TokenSet(list("abc") + [" "], " ")
    lex = Lexicon.from_words(["ab", "ca", "b", "cab"], toks)
    words = [lex.words[i] for i in rng.integers(0, 4, size=int(rng.integers(1, 4)))]
    y = lex.target_tokens(words)
    T = len(y) + int(rng.integers(0, 4))
    tr = TransitionMatrix.zeros(4)
    _, path = align.viterbi_align(rng.normal(size=(T, 4)), tr, y)
    em = np.full((T, 4), -10.0)
    em[np.arange(T), path] = 10.0
    got, _ = dbd.dbd_decode(em, tr, Trie(lex), ZeroLM(), 20)
    assert got == words


def test_decode_tie_break_is_deterministic():
    toks = TokenSet(["a", "b", " "], " ")
    lex = Lexicon.from_words(["b", "a"], toks)
    em = np.zeros((1, 3))
    words, _ = dbd.dbd_decode(em, TransitionMatrix.zeros(3), Trie(lex), ZeroLM(), 10)
    assert words == ["b"]  # word id 0 wins an exact tie


def test_beam_one_can_have_empty_beam_term():
    # with beam 1 the single survivor may sit mid-word at the last frame
    toks = TokenSet(["a", "b", " "], " ")
    lex = Lexicon.from_words(["ab", "b"], toks)
    em = np.array([[0.0, 5.0, 0.0], [0.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
    rep, lat = dbd.dbd_forward(em, TransitionMatrix.zeros(3), Trie(lex), ZeroLM(), lex.target_tokens(["ab"]), 1)
    assert rep.beam_Z == -math.inf and rep.loss == 0.0
    dem, _, _ = dbd.dbd_backward(lat, rep)
    assert np.all(dem == 0.0)


def test_no_merge_equivalence():
    # merging preserves path sums: the saturated lattice total equals the
    # enumeration over individual paths (which never merges)
    lex, trie, em, tr, lm, words = instance(11, "wrapper")
    rep, lat = dbd.dbd_forward(em, tr, trie, lm, lex.target_tokens(words), BIG)
    scores = oracles.word_sequence_scores(em, tr, lex, lm)
    assert rep.beam_Z == pytest.approx(logadd_many(list(scores.values())), abs=1e-9)
