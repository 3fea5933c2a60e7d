"""Log-domain scalar arithmetic.

All scores in the package live in the natural-log domain as double precision
floats. ``NEG_INF`` stands for log(0).
"""

import math

import numpy as np

NEG_INF = float("-inf")

#: absolute log-domain tolerance under which ``logsubexp`` treats a - b as exact cancellation
CANCEL_TOL = 1e-9


class LogDomainError(ArithmeticError):
    """Raised when a log-domain invariant is broken (e.g. log of a negative number)."""


def logadd(a, b):
    """Return log(e^a + e^b) without overflow."""
    if a < b:
        a, b = b, a
    if b == NEG_INF:
        return a
    return a + math.log1p(math.exp(b - a))


def logadd_many(xs):
    """Return log(sum(exp(xs))); an empty input gives ``NEG_INF``."""
    xs = np.asarray(xs, dtype=np.float64).ravel()
    if xs.size == 0:
        return NEG_INF
    m = xs.max()
    if m == NEG_INF:
        return NEG_INF
    if m == math.inf:
        return math.inf
    return float(m + math.log(np.exp(xs - m).sum()))


def logsubexp(a, b, tol=CANCEL_TOL):
    """Return log(e^a - e^b) for a >= b.

    Differences below ``tol`` are treated as exact cancellation and give
    ``NEG_INF``. Raises :class:`LogDomainError` if ``b`` exceeds ``a`` by more
    than ``tol``.
    """
    if b == NEG_INF:
        return a
    d = a - b
    if d < -tol:
        raise LogDomainError(f"logsubexp: b={b!r} exceeds a={a!r} by {-d:.3g}")
    if d < tol:
        return NEG_INF
    return a + math.log(-math.expm1(-d))


def dlogadd(xs):
    """Gradient of ``logadd_many`` w.r.t. its inputs, i.e. softmax(xs).

    Entries equal to ``NEG_INF`` get weight exactly 0.
    """
    xs = np.asarray(xs, dtype=np.float64)
    m = xs.max() if xs.size else NEG_INF
    if m == NEG_INF:
        raise LogDomainError("dlogadd: no finite entry")
    w = np.exp(xs - m)
    return w / w.sum()
