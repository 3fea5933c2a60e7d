"""Alignment-graph criteria: target Forward score, ASG normalizer, Viterbi.

An alignment of a target token string ``y`` (length L) over T frames gives
every position of ``y`` a non-empty run of consecutive frames, in order. The
score of a frame-level token path ``pi`` is

    start[pi_0] + sum_t em[t, pi_t] + sum_{t>0} G[pi_t, pi_{t-1}]

where ``G[i, j]`` scores a transition into ``i`` from ``j`` (self
transitions included).
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .lognum import NEG_INF

log = logging.getLogger(__name__)


class UnalignableError(ValueError):
    """Target token string longer than the utterance."""


@dataclass
class TransitionMatrix:
    """Token transition scores ``G[i, j] = g(i|j)`` and first-frame scores."""

    G: np.ndarray
    start: np.ndarray

    @classmethod
    def zeros(cls, n_tokens):
        return cls(np.zeros((n_tokens, n_tokens)), np.zeros(n_tokens))

    @property
    def n_tokens(self):
        return self.start.shape[0]

    def zeros_like(self):
        return TransitionMatrix(np.zeros_like(self.G), np.zeros_like(self.start))

    def copy(self):
        return TransitionMatrix(self.G.copy(), self.start.copy())

    def params(self):
        return {"G": self.G, "start": self.start}


def _as_target(y):
    return np.ascontiguousarray(y, dtype=np.int64)


def forward_score(em, trans, y):
    """Log-sum of path scores over all alignments of ``y``.

    Returns ``NEG_INF`` (and logs a warning) when ``len(y) > T``.
    """
    y = _as_target(y)
    if len(y) > em.shape[0]:
        log.warning("unalignable target: L=%d > T=%d", len(y), em.shape[0])
        return NEG_INF
    alpha = kernels.target_forward(em, trans.G, trans.start, y)
    return float(alpha[-1, -1])


def forward_grad(em, trans, y):
    """Gradient of :func:`forward_score`.

    Returns ``(dEm, dTrans)`` where ``dTrans`` is a :class:`TransitionMatrix`
    holding d/dG and d/dstart.
    """
    y = _as_target(y)
    T, L = em.shape[0], len(y)
    if L > T:
        raise UnalignableError(f"target length {L} exceeds frame count {T}")
    alpha = kernels.target_forward(em, trans.G, trans.start, y)
    beta = kernels.target_backward(em, trans.G, y)
    z = alpha[-1, -1]
    post = np.exp(alpha + beta - z)
    dem = np.zeros_like(em)
    np.add.at(dem, (np.arange(T)[:, None], y[None, :]), post)
    dtr = trans.zeros_like()
    dtr.start[y[0]] = 1.0
    if T > 1:
        ey = em[1:, y] + beta[1:]
        stay = np.exp(alpha[:-1] + trans.G[y, y] + ey - z).sum(axis=0)
        np.add.at(dtr.G, (y, y), stay)
        if L > 1:
            adv = np.exp(alpha[:-1, :-1] + trans.G[y[1:], y[:-1]] + ey[:, 1:] - z).sum(axis=0)
            np.add.at(dtr.G, (y[1:], y[:-1]), adv)
    return dem, dtr


def asg_normalizer(em, trans):
    """Log-sum of path scores over all |D|^T unconstrained token paths."""
    alpha = kernels.full_forward(em, trans.G, trans.start)
    m = alpha[-1].max()
    return float(m + np.log(np.exp(alpha[-1] - m).sum()))


def asg_normalizer_grad(em, trans):
    """Posterior marginals of the ASG normalizer: ``(logZ, dEm, dTrans)``."""
    alpha = kernels.full_forward(em, trans.G, trans.start)
    beta = kernels.full_backward(em, trans.G)
    m = alpha[-1].max()
    z = m + np.log(np.exp(alpha[-1] - m).sum())
    dem = np.exp(alpha + beta - z)
    dtr = trans.zeros_like()
    dtr.start[:] = dem[0]
    if em.shape[0] > 1:
        # [t, i, j]: alpha[t-1, j] + G[i, j] + em[t, i] + beta[t, i]
        nxt = em[1:] + beta[1:]
        w = alpha[:-1, None, :] + trans.G[None, :, :] + nxt[:, :, None] - z
        dtr.G[:] = np.exp(w).sum(axis=0)
    return float(z), dem, dtr


def asg_loss(em, trans, y):
    """ASG criterion: ``-(forward_score - asg_normalizer)`` and its gradient.

    Raises :class:`UnalignableError` if the target does not fit.
    """
    y = _as_target(y)
    if len(y) > em.shape[0]:
        raise UnalignableError(f"target length {len(y)} exceeds frame count {em.shape[0]}")
    num = forward_score(em, trans, y)
    dnum_em, dnum_tr = forward_grad(em, trans, y)
    z, dz_em, dz_tr = asg_normalizer_grad(em, trans)
    loss = z - num
    dtr = TransitionMatrix(dz_tr.G - dnum_tr.G, dz_tr.start - dnum_tr.start)
    return loss, dz_em - dnum_em, dtr


def viterbi_align(em, trans, y):
    """Best alignment of ``y``: ``(score, tokens)`` with one token id per frame.

    Ties favour the earlier token advance. Raises :class:`UnalignableError`
    if ``len(y) > T``.
    """
    y = _as_target(y)
    if len(y) > em.shape[0]:
        raise UnalignableError(f"target length {len(y)} exceeds frame count {em.shape[0]}")
    score, pos = kernels.target_viterbi(em, trans.G, trans.start, y)
    return score, y[pos]


def path_score(em, trans, path):
    """Score of one frame-level token path."""
    path = np.asarray(path)
    s = trans.start[path[0]] + em[np.arange(len(path)), path].sum()
    return float(s + trans.G[path[1:], path[:-1]].sum())


def best_path(em, trans):
    """Unconstrained max-scoring token path over all |D|^T sequences."""
    T, D = em.shape
    delta = trans.start + em[0]
    back = np.zeros((T, D), dtype=np.int64)
    for t in range(1, T):
        cand = delta[None, :] + trans.G
        back[t] = cand.argmax(axis=1)
        delta = cand[np.arange(D), back[t]] + em[t]
    path = np.empty(T, dtype=np.int64)
    path[-1] = int(delta.argmax())
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return float(delta.max()), path


def collapse(path):
    """Merge runs of equal consecutive tokens."""
    out = []
    for t in path:
        t = int(t)
        if not out or out[-1] != t:
            out.append(t)
    return out
