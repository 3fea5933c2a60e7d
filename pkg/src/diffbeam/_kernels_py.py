"""Pure numpy implementations of the dynamic-programming kernels.

These mirror :mod:`diffbeam._kernels` (Cython) function for function and are
used whenever the compiled extension is unavailable or ``DIFFBEAM_PURE=1``.

Conventions shared by both backends
-----------------------------------
``G[i, j]`` is the transition score into token ``i`` from token ``j``;
``start[i]`` scores token ``i`` at the first frame. Arrays are float64,
token/label arrays int64.
"""

import numpy as np

NEG_INF = -np.inf


def _lse_pair(a, b):
    return np.logaddexp(a, b)


def target_forward(em, G, start, y):
    """Forward trellis over monotone run-length alignments of ``y``.

    Returns ``alpha`` of shape (T, L); ``alpha[t, s]`` is the log score of all
    partial alignments of frames 0..t whose frame t is on label position s.
    """
    T = em.shape[0]
    L = y.shape[0]
    alpha = np.full((T, L), NEG_INF)
    if L > T or L == 0:
        return alpha
    stay = G[y, y]
    adv = G[y[1:], y[:-1]]
    ey = em[:, y]
    alpha[0, 0] = start[y[0]] + ey[0, 0]
    for t in range(1, T):
        prev = alpha[t - 1]
        cur = prev + stay
        cur[1:] = _lse_pair(cur[1:], prev[:-1] + adv)
        alpha[t] = cur + ey[t]
    return alpha


def target_backward(em, G, y):
    """Backward trellis; ``beta[t, s]`` scores frames t+1..T-1 given (t, s)."""
    T = em.shape[0]
    L = y.shape[0]
    beta = np.full((T, L), NEG_INF)
    if L > T or L == 0:
        return beta
    stay = G[y, y]
    adv = G[y[1:], y[:-1]]
    ey = em[:, y]
    beta[T - 1, L - 1] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + ey[t + 1]
        cur = nxt + stay
        cur[:-1] = _lse_pair(cur[:-1], nxt[1:] + adv)
        beta[t] = cur
    return beta


def target_viterbi(em, G, start, y):
    """Max-semiring trellis with backtrace.

    Ties prefer staying on the current label, which moves label boundaries
    toward earlier frames. Returns ``(score, labels)`` where ``labels[t]`` is
    the label position occupied at frame t, or ``(-inf, None)``.
    """
    T = em.shape[0]
    L = y.shape[0]
    if L > T or L == 0:
        return NEG_INF, None
    stay = G[y, y]
    adv = G[y[1:], y[:-1]]
    ey = em[:, y]
    delta = np.full((T, L), NEG_INF)
    took_adv = np.zeros((T, L), dtype=bool)
    delta[0, 0] = start[y[0]] + ey[0, 0]
    for t in range(1, T):
        prev = delta[t - 1]
        s_stay = prev + stay
        s_adv = np.full(L, NEG_INF)
        s_adv[1:] = prev[:-1] + adv
        choose = s_adv > s_stay
        took_adv[t] = choose
        delta[t] = np.where(choose, s_adv, s_stay) + ey[t]
    score = delta[T - 1, L - 1]
    if score == NEG_INF:
        return NEG_INF, None
    pos = np.empty(T, dtype=np.int64)
    s = L - 1
    for t in range(T - 1, -1, -1):
        pos[t] = s
        if t > 0 and took_adv[t, s]:
            s -= 1
    return float(score), pos


def full_forward(em, G, start):
    """Forward recursion over all token sequences (no target constraint)."""
    T, D = em.shape
    alpha = np.empty((T, D))
    alpha[0] = start + em[0]
    for t in range(1, T):
        # alpha[t, i] = em[t, i] + lse_j(alpha[t-1, j] + G[i, j])
        m = alpha[t - 1][None, :] + G
        mx = m.max(axis=1)
        alpha[t] = em[t] + mx + np.log(np.exp(m - mx[:, None]).sum(axis=1))
    return alpha


def full_backward(em, G):
    T, D = em.shape
    beta = np.empty((T, D))
    beta[T - 1] = 0.0
    for t in range(T - 2, -1, -1):
        # beta[t, j] = lse_i(G[i, j] + em[t+1, i] + beta[t+1, i])
        m = G + (em[t + 1] + beta[t + 1])[:, None]
        mx = m.max(axis=0)
        beta[t] = mx + np.log(np.exp(m - mx[None, :]).sum(axis=0))
    return beta


def _segment_logsumexp(vals, seg, n):
    mx = np.full(n, NEG_INF)
    np.maximum.at(mx, seg, vals)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    acc = np.zeros(n)
    np.add.at(acc, seg, np.exp(vals - safe[seg]))
    with np.errstate(divide="ignore"):
        return np.where(acc > 0, safe + np.log(acc), NEG_INF)


def lattice_forward(n_nodes, src, dst, escore, level_ptr):
    """Log-semiring forward pass over a layered DAG.

    Node 0 is the source with score 0. Edges are grouped into levels by
    ``level_ptr`` (CSR offsets); every edge in a level reads only nodes
    finalized by earlier levels. Returns node scores ``alpha``.
    """
    alpha = np.full(n_nodes, NEG_INF)
    alpha[0] = 0.0
    for k in range(len(level_ptr) - 1):
        a, b = level_ptr[k], level_ptr[k + 1]
        if a == b:
            continue
        d = dst[a:b]
        lo = d.min()
        hi = d.max() + 1
        vals = alpha[src[a:b]] + escore[a:b]
        alpha[lo:hi] = _lse_pair(alpha[lo:hi], _segment_logsumexp(vals, d - lo, hi - lo))
    return alpha


def lattice_adjoint(alpha, src, dst, escore, level_ptr, seed):
    """Reverse sweep: d(alpha[sink])/d(escore) weighted by ``seed``.

    ``seed`` holds the adjoint of each node (nonzero only at sinks). Returns
    one weight per edge; weights may be negative when seeds are.
    """
    adj = np.array(seed, dtype=np.float64, copy=True)
    w = np.zeros(len(src))
    for k in range(len(level_ptr) - 2, -1, -1):
        a, b = level_ptr[k], level_ptr[k + 1]
        if a == b:
            continue
        s = src[a:b]
        d = dst[a:b]
        ad = adj[d]
        live = ad != 0.0
        we = np.zeros(b - a)
        we[live] = ad[live] * np.exp(alpha[s[live]] + escore[a:b][live] - alpha[d[live]])
        w[a:b] = we
        np.add.at(adj, s, we)
    return w
