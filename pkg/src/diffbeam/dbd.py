"""Differentiable lexicon-constrained beam search.

The training pass (:func:`dbd_forward`) runs a beam search over frame-level
token paths constrained by a lexicon trie, adds word LM scores when a word is
closed by a separator (or by the end of the utterance), merges hypotheses
sharing ``(trie node, LM state, target position)`` with logadd, and records
every surviving merge as a layered lattice. The lattice is enough to
recompute all scores under new parameters (:func:`frozen_replay`) and to
backpropagate the loss exactly (:func:`dbd_backward`).

Loss, with N the Forward score over target alignments plus h(target), B the
logadd over complete beam paths and I the logadd over complete beam paths
that spell the target::

    Zc = log(e^B - e^I + e^N)
    loss = Zc - N
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import align, kernels
from .lexicon import ROOT, tokens_to_words
from .lognum import NEG_INF, LogDomainError, logadd, logsubexp

OFF_TARGET = -1


class NoCompleteHypothesis(RuntimeError):
    """Every hypothesis alive at the last frame is mid-word."""


@dataclass
class LossReport:
    numerator: float
    beam_Z: float
    intersect_Z: float
    corrected_Z: float
    loss: float

    @property
    def weights(self):
        """Signed weights (u_B, u_I, u_N) of the three terms of ``corrected_Z``."""
        zc = self.corrected_Z
        u_b = math.exp(self.beam_Z - zc)
        u_i = -math.exp(self.intersect_Z - zc) if self.intersect_Z != NEG_INF else 0.0
        u_n = math.exp(self.numerator - zc)
        return u_b, u_i, u_n


@dataclass
class DecodeLattice:
    """Frozen record of one training beam pass.

    Node 0 is the start state; nodes ``n_nodes - 2`` and ``n_nodes - 1`` are
    the beam and intersection sinks. Edge arrays are level ordered (one level
    per frame plus a final level into the sinks). Each edge carries the
    parameter references that make up its score: an emission ``(frame, tok)``,
    a transition index into ``G.ravel()`` or a start index, and an LM event.
    """

    T: int
    n_tokens: int
    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    level_ptr: np.ndarray
    e_frame: np.ndarray
    e_tok: np.ndarray
    e_trans: np.ndarray
    e_start: np.ndarray
    e_lm: np.ndarray
    lm_events: list
    node_key: list
    y: np.ndarray
    target_words: list
    max_candidates: int
    beam_size: int
    lex_words: list = None
    em: np.ndarray = None
    trans: object = None
    lm: object = None
    alpha: np.ndarray = field(default=None, repr=False)

    @property
    def sink_beam(self):
        return self.n_nodes - 2

    @property
    def sink_target(self):
        return self.n_nodes - 1

    @property
    def saturated(self):
        """True if no merged candidate was ever pruned."""
        return self.max_candidates <= self.beam_size

    @property
    def n_edges(self):
        return len(self.src)


class _LMCache:
    def __init__(self, lm, words):
        self.lm = lm
        self.words = words
        self._step = {}
        self._finish = {}

    def step(self, state, wid):
        key = (state, wid)
        r = self._step.get(key)
        if r is None:
            r = self.lm.step(state, self.words[wid])
            self._step[key] = r
        return r

    def finish(self, state):
        r = self._finish.get(state)
        if r is None:
            r = self.lm.finish(state)
            self._finish[state] = r
        return r


def _sort_key(item):
    key, score = item[0], item[1][0]
    return (-score, key[0], key[1], key[2])


def _target_words(y, trie, tokens_sep):
    words = []
    node = ROOT
    for tok in list(y) + [tokens_sep]:
        if tok == tokens_sep:
            if node == ROOT or not trie.words[node]:
                raise ValueError("target token string does not spell lexicon words")
            words.append(trie.words[node][0])
            node = ROOT
        else:
            node = trie.step(node, int(tok))
            if node < 0:
                raise ValueError("target token string leaves the lexicon trie")
    return words


def dbd_forward(em, trans, trie, lm, y, beam_size):
    """Training beam pass: ``(LossReport, DecodeLattice)``.

    If no surviving hypothesis can finish a word at the last frame the beam
    term is empty (``beam_Z = -inf``) and the loss is 0. Raises
    :class:`align.UnalignableError` if ``len(y) > T`` and
    :class:`LogDomainError` if the intersection term exceeds the beam term.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    em = np.ascontiguousarray(em, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    T, D = em.shape
    L = len(y)
    if L > T:
        raise align.UnalignableError(f"target length {L} exceeds frame count {T}")
    sep = trie.lexicon.tokens.sep
    target_wids = _target_words(y, trie, sep)
    lex_words = trie.lexicon.words
    cache = _LMCache(lm, lex_words)
    G = trans.G
    start = trans.start
    yl = [int(v) for v in y]
    node_tok = trie.token
    edges_of = trie.edges
    words_of = trie.words

    # lattice buffers
    src, dst, e_frame, e_tok, e_trans, e_start, e_lm = [], [], [], [], [], [], []
    level_ptr = [0]
    lm_events = []
    lm_event_id = {}

    def lm_event(kind, state, wid):
        k = (kind, state, wid)
        i = lm_event_id.get(k)
        if i is None:
            i = len(lm_events)
            lm_event_id[k] = i
            lm_events.append(k)
        return i

    node_key = [None]
    # previous frame: list of (global node id, key, score)
    prev = [(0, (ROOT, lm.start(), 0), 0.0)]
    max_cand = 0
    for t in range(T):
        emt = em[t]
        cand = {}

        def add(key, score, edge):
            c = cand.get(key)
            if c is None:
                cand[key] = [score, [edge]]
            else:
                c[0] = logadd(c[0], score)
                c[1].append(edge)

        for gid, (node, ls, tpos), s in prev:
            if t == 0:
                for tok, child in edges_of[ROOT]:
                    tp = 1 if L > 0 and yl[0] == tok else OFF_TARGET
                    add((child, ls, tp), s + start[tok] + emt[tok], (gid, tok, -1, tok, -1))
                continue
            last = node_tok[node] if node != ROOT else sep
            add((node, ls, tpos), s + emt[last] + G[last, last], (gid, last, last * D + last, -1, -1))
            for tok, child in edges_of[node]:
                if tpos >= 0 and tpos < L and yl[tpos] == tok:
                    tp = tpos + 1
                else:
                    tp = OFF_TARGET
                add(
                    (child, ls, tp),
                    s + emt[tok] + G[tok, last],
                    (gid, tok, tok * D + last, -1, -1),
                )
            if node != ROOT and words_of[node]:
                if tpos >= 0 and tpos < L and yl[tpos] == sep:
                    tp = tpos + 1
                else:
                    tp = OFF_TARGET
                base = s + emt[sep] + G[sep, last]
                for wid in words_of[node]:
                    ls2, lsc = cache.step(ls, wid)
                    add(
                        (ROOT, ls2, tp),
                        base + lsc,
                        (gid, sep, sep * D + last, -1, lm_event("step", ls, wid)),
                    )
        max_cand = max(max_cand, len(cand))
        kept = sorted(cand.items(), key=_sort_key)[:beam_size]
        prev = []
        for key, (score, edges) in kept:
            gid = len(node_key)
            node_key.append(key)
            prev.append((gid, key, score))
            for (sgid, tok, gidx, sidx, lmi) in edges:
                src.append(sgid)
                dst.append(gid)
                e_frame.append(t)
                e_tok.append(tok)
                e_trans.append(gidx)
                e_start.append(sidx)
                e_lm.append(lmi)
        level_ptr.append(len(src))

    sink_b = len(node_key)
    sink_i = sink_b + 1
    finals = []
    for gid, (node, ls, tpos), s in prev:
        if node == ROOT or not words_of[node]:
            continue
        for wid in words_of[node]:
            finals.append((gid, lm_event("final", ls, wid), tpos == L))
    if not prev:
        raise NoCompleteHypothesis("no complete hypothesis: every hypothesis died")
    for sinks in ((sink_b, None), (sink_i, True)):
        for gid, lmi, on_target in finals:
            if sinks[1] and not on_target:
                continue
            src.append(gid)
            dst.append(sinks[0])
            e_frame.append(-1)
            e_tok.append(-1)
            e_trans.append(-1)
            e_start.append(-1)
            e_lm.append(lmi)
    level_ptr.append(len(src))
    node_key.extend(["sink_beam", "sink_target"])

    i64 = np.int64
    lat = DecodeLattice(
        T=T,
        n_tokens=D,
        n_nodes=len(node_key),
        src=np.asarray(src, dtype=i64),
        dst=np.asarray(dst, dtype=i64),
        level_ptr=np.asarray(level_ptr, dtype=i64),
        e_frame=np.asarray(e_frame, dtype=i64),
        e_tok=np.asarray(e_tok, dtype=i64),
        e_trans=np.asarray(e_trans, dtype=i64),
        e_start=np.asarray(e_start, dtype=i64),
        e_lm=np.asarray(e_lm, dtype=i64),
        lm_events=lm_events,
        node_key=node_key,
        y=y,
        target_words=[lex_words[w] for w in target_wids],
        max_candidates=max_cand,
        beam_size=beam_size,
        lex_words=lex_words,
    )
    rep = _evaluate(lat, em, trans, lm)
    return rep, lat


def _lm_event_scores(lat, lm):
    out = np.empty(len(lat.lm_events))
    words = lat.lex_words
    for i, (kind, state, wid) in enumerate(lat.lm_events):
        st2, s = lm.step(state, words[wid])
        if kind == "final":
            s = s + lm.finish(st2)
        out[i] = s
    return out


def _edge_scores(lat, em, trans, lm):
    esc = np.zeros(lat.n_edges)
    m = lat.e_frame >= 0
    esc[m] = em[lat.e_frame[m], lat.e_tok[m]]
    m = lat.e_trans >= 0
    esc[m] += trans.G.ravel()[lat.e_trans[m]]
    m = lat.e_start >= 0
    esc[m] += trans.start[lat.e_start[m]]
    m = lat.e_lm >= 0
    if m.any():
        esc[m] += _lm_event_scores(lat, lm)[lat.e_lm[m]]
    return esc


def _evaluate(lat, em, trans, lm):
    """Scores of the frozen path set under ``(em, trans, lm)``; stores them on ``lat``."""
    esc = _edge_scores(lat, em, trans, lm)
    alpha = kernels.lattice_forward(lat.n_nodes, lat.src, lat.dst, esc, lat.level_ptr)
    beam_z = float(alpha[lat.sink_beam])
    inter_z = float(alpha[lat.sink_target])
    num = align.forward_score(em, trans, lat.y) + lm.score(lat.target_words)
    corrected = logadd(logsubexp(beam_z, inter_z), num)
    lat.em, lat.trans, lat.lm = em, trans, lm
    lat.alpha = alpha
    lat.escore = esc
    return LossReport(num, beam_z, inter_z, corrected, corrected - num)


def frozen_replay(lat, em, trans, lm):
    """Re-score the recorded path set under new parameters.

    The pruning decisions are those of the original pass, so the result is a
    smooth function of the parameters.
    """
    em = np.ascontiguousarray(em, dtype=np.float64)
    if em.shape != (lat.T, lat.n_tokens):
        raise ValueError(f"emission shape {em.shape} does not match lattice {(lat.T, lat.n_tokens)}")
    if trans.G.shape != (lat.n_tokens, lat.n_tokens) or trans.start.shape != (lat.n_tokens,):
        raise ValueError("transition shape does not match lattice")
    return _evaluate(lat, em, trans, lm)


def _lattice_grads(lat, seed_beam, seed_target):
    """Gradients of ``seed_beam * B + seed_target * I`` w.r.t. em, trans and LM."""
    seed = np.zeros(lat.n_nodes)
    seed[lat.sink_beam] = seed_beam
    seed[lat.sink_target] = seed_target
    w = kernels.lattice_adjoint(lat.alpha, lat.src, lat.dst, lat.escore, lat.level_ptr, seed)
    D = lat.n_tokens
    dem = np.zeros((lat.T, D))
    m = lat.e_frame >= 0
    np.add.at(dem, (lat.e_frame[m], lat.e_tok[m]), w[m])
    dG = np.zeros(D * D)
    m = lat.e_trans >= 0
    np.add.at(dG, lat.e_trans[m], w[m])
    dstart = np.zeros(D)
    m = lat.e_start >= 0
    np.add.at(dstart, lat.e_start[m], w[m])
    dtr = align.TransitionMatrix(dG.reshape(D, D), dstart)
    dlm = lat.lm.zero_grads()
    if dlm:
        m = lat.e_lm >= 0
        ev_w = np.bincount(lat.e_lm[m], weights=w[m], minlength=len(lat.lm_events))
        words = lat.lex_words
        for i, (kind, state, wid) in enumerate(lat.lm_events):
            if ev_w[i] == 0.0:
                continue
            lat.lm.step_grad(state, words[wid], ev_w[i], dlm)
            if kind == "final":
                st2, _ = lat.lm.step(state, words[wid])
                lat.lm.finish_grad(st2, ev_w[i], dlm)
    return dem, dtr, dlm


def beam_term_grad(lat):
    """Gradient of the beam term B alone (posterior marginals over beam paths)."""
    return _lattice_grads(lat, 1.0, 0.0)


def dbd_backward(lat, rep):
    """Gradient of ``rep.loss`` w.r.t. emissions, transitions and LM parameters.

    Returns ``(dEm, dTrans, dLM)``; ``dLM`` is keyed like ``lm.params()``.
    """
    u_b, u_i, u_n = rep.weights
    dem, dtr, dlm = _lattice_grads(lat, u_b, u_i)
    c = u_n - 1.0
    if c != 0.0:
        nem, ntr = align.forward_grad(lat.em, lat.trans, lat.y)
        dem += c * nem
        dtr.G += c * ntr.G
        dtr.start += c * ntr.start
        for k, g in lat.lm.grad(lat.target_words, c).items():
            dlm[k] += g
    return dem, dtr, dlm


def dbd_loss_and_grad(em, trans, trie, lm, y, beam_size):
    rep, lat = dbd_forward(em, trans, trie, lm, y, beam_size)
    return rep, dbd_backward(lat, rep)


def dbd_decode(em, trans, trie, lm, beam_size, aggregate="forward"):
    """Best word sequence under the beam: ``(words, score)``.

    Hypotheses are merged by ``(trie node, LM state, word history)``; with
    ``aggregate="forward"`` merged scores are logadd-ed (Forward score),
    with ``"viterbi"`` the max is kept. Ties between final word sequences go
    to the lexicographically smallest word-id tuple.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if aggregate not in ("forward", "viterbi"):
        raise ValueError(f"unknown aggregate {aggregate!r}")
    combine = logadd if aggregate == "forward" else max
    em = np.asarray(em, dtype=np.float64)
    T, D = em.shape
    sep = trie.lexicon.tokens.sep
    lex_words = trie.lexicon.words
    cache = _LMCache(lm, lex_words)
    G = trans.G
    start = trans.start
    node_tok = trie.token
    edges_of = trie.edges
    words_of = trie.words

    prev = [((ROOT, lm.start(), ()), 0.0)]
    for t in range(T):
        emt = em[t]
        cand = {}
        for (node, ls, hist), s in prev:
            if t == 0:
                for tok, child in edges_of[ROOT]:
                    _merge(cand, (child, ls, hist), s + start[tok] + emt[tok], combine)
                continue
            last = node_tok[node] if node != ROOT else sep
            _merge(cand, (node, ls, hist), s + emt[last] + G[last, last], combine)
            for tok, child in edges_of[node]:
                _merge(cand, (child, ls, hist), s + emt[tok] + G[tok, last], combine)
            if node != ROOT and words_of[node]:
                base = s + emt[sep] + G[sep, last]
                for wid in words_of[node]:
                    ls2, lsc = cache.step(ls, wid)
                    _merge(cand, (ROOT, ls2, hist + (wid,)), base + lsc, combine)
        prev = sorted(cand.items(), key=lambda kv: (-kv[1], kv[0][0], kv[0][1], kv[0][2]))[:beam_size]

    groups = {}
    for (node, ls, hist), s in prev:
        if node == ROOT or not words_of[node]:
            continue
        for wid in words_of[node]:
            ls2, lsc = cache.step(ls, wid)
            fs = s + lsc + cache.finish(ls2)
            h = hist + (wid,)
            groups[h] = combine(groups[h], fs) if h in groups else fs
    if not groups:
        raise NoCompleteHypothesis("no complete hypothesis at the last frame")
    best = min(groups.items(), key=lambda kv: (-kv[1], kv[0]))
    return [lex_words[w] for w in best[0]], float(best[1])


def _merge(cand, key, score, combine):
    old = cand.get(key)
    cand[key] = score if old is None else combine(old, score)


def greedy_decode(em, trans, tokens):
    """Lexicon-free decoding: best unconstrained token path, collapsed into words."""
    _, path = align.best_path(em, trans)
    return tokens_to_words(align.collapse(path), tokens)
