# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dynamic-programming kernels.

Same functions and conventions as :mod:`diffbeam._kernels_py`.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, INFINITY

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64

cdef f64 NEG = -INFINITY


cdef inline f64 lse2(f64 a, f64 b) nogil:
    cdef f64 t
    if a < b:
        t = a
        a = b
        b = t
    if b == NEG:
        return a
    return a + log1p(exp(b - a))


def target_forward(const f64[:, :] em, const f64[:, :] G, const f64[:] start, const i64[:] y):
    cdef Py_ssize_t T = em.shape[0], L = y.shape[0], t, s
    cdef f64 v
    alpha_np = np.full((T, L), -np.inf)
    cdef f64[:, :] alpha = alpha_np
    if L > T or L == 0:
        return alpha_np
    with nogil:
        alpha[0, 0] = start[y[0]] + em[0, y[0]]
        for t in range(1, T):
            for s in range(L):
                v = alpha[t - 1, s] + G[y[s], y[s]]
                if s > 0:
                    v = lse2(v, alpha[t - 1, s - 1] + G[y[s], y[s - 1]])
                alpha[t, s] = v + em[t, y[s]]
    return alpha_np


def target_backward(const f64[:, :] em, const f64[:, :] G, const i64[:] y):
    cdef Py_ssize_t T = em.shape[0], L = y.shape[0], t, s
    cdef f64 v
    beta_np = np.full((T, L), -np.inf)
    cdef f64[:, :] beta = beta_np
    if L > T or L == 0:
        return beta_np
    with nogil:
        beta[T - 1, L - 1] = 0.0
        for t in range(T - 2, -1, -1):
            for s in range(L):
                v = beta[t + 1, s] + em[t + 1, y[s]] + G[y[s], y[s]]
                if s + 1 < L:
                    v = lse2(v, beta[t + 1, s + 1] + em[t + 1, y[s + 1]] + G[y[s + 1], y[s]])
                beta[t, s] = v
    return beta_np


def target_viterbi(const f64[:, :] em, const f64[:, :] G, const f64[:] start, const i64[:] y):
    cdef Py_ssize_t T = em.shape[0], L = y.shape[0], t, s
    cdef f64 a, b
    if L > T or L == 0:
        return -np.inf, None
    delta_np = np.full((T, L), -np.inf)
    adv_np = np.zeros((T, L), dtype=np.uint8)
    cdef f64[:, :] delta = delta_np
    cdef cnp.uint8_t[:, :] took = adv_np
    with nogil:
        delta[0, 0] = start[y[0]] + em[0, y[0]]
        for t in range(1, T):
            for s in range(L):
                a = delta[t - 1, s] + G[y[s], y[s]]
                if s > 0:
                    b = delta[t - 1, s - 1] + G[y[s], y[s - 1]]
                    if b > a:
                        a = b
                        took[t, s] = 1
                delta[t, s] = a + em[t, y[s]]
    score = delta[T - 1, L - 1]
    if score == NEG:
        return -np.inf, None
    pos = np.empty(T, dtype=np.int64)
    s = L - 1
    for t in range(T - 1, -1, -1):
        pos[t] = s
        if t > 0 and took[t, s]:
            s -= 1
    return float(score), pos


def full_forward(const f64[:, :] em, const f64[:, :] G, const f64[:] start):
    cdef Py_ssize_t T = em.shape[0], D = em.shape[1], t, i, j
    cdef f64 mx, acc, v
    alpha_np = np.empty((T, D))
    cdef f64[:, :] alpha = alpha_np
    with nogil:
        for i in range(D):
            alpha[0, i] = start[i] + em[0, i]
        for t in range(1, T):
            for i in range(D):
                mx = NEG
                for j in range(D):
                    v = alpha[t - 1, j] + G[i, j]
                    if v > mx:
                        mx = v
                acc = 0.0
                for j in range(D):
                    acc += exp(alpha[t - 1, j] + G[i, j] - mx)
                alpha[t, i] = em[t, i] + mx + log(acc)
    return alpha_np


def full_backward(const f64[:, :] em, const f64[:, :] G):
    cdef Py_ssize_t T = em.shape[0], D = em.shape[1], t, i, j
    cdef f64 mx, acc, v
    beta_np = np.empty((T, D))
    cdef f64[:, :] beta = beta_np
    with nogil:
        for j in range(D):
            beta[T - 1, j] = 0.0
        for t in range(T - 2, -1, -1):
            for j in range(D):
                mx = NEG
                for i in range(D):
                    v = G[i, j] + em[t + 1, i] + beta[t + 1, i]
                    if v > mx:
                        mx = v
                acc = 0.0
                for i in range(D):
                    acc += exp(G[i, j] + em[t + 1, i] + beta[t + 1, i] - mx)
                beta[t, j] = mx + log(acc)
    return beta_np


def lattice_forward(Py_ssize_t n_nodes, const i64[:] src, const i64[:] dst,
                    const f64[:] escore, level_ptr=None):
    cdef Py_ssize_t e, E = src.shape[0]
    alpha_np = np.full(n_nodes, -np.inf)
    cdef f64[:] alpha = alpha_np
    alpha[0] = 0.0
    with nogil:
        for e in range(E):
            alpha[dst[e]] = lse2(alpha[dst[e]], alpha[src[e]] + escore[e])
    return alpha_np


def lattice_adjoint(const f64[:] alpha, const i64[:] src, const i64[:] dst,
                    const f64[:] escore, level_ptr, seed):
    cdef Py_ssize_t e, E = src.shape[0]
    cdef f64 a
    adj_np = np.array(seed, dtype=np.float64, copy=True)
    w_np = np.zeros(E)
    cdef f64[:] adj = adj_np
    cdef f64[:] w = w_np
    with nogil:
        for e in range(E - 1, -1, -1):
            a = adj[dst[e]]
            if a != 0.0:
                w[e] = a * exp(alpha[src[e]] + escore[e] - alpha[dst[e]])
                adj[src[e]] += w[e]
    return w_np
