"""Finite-difference checks of every analytic gradient in the package.

Each suite draws small random instances from a seed, perturbs every
parameter entry with central differences and compares against the
analytic gradient. The relative error of one entry is

    |a - b| / max(|a|, |b|, 1)

so entries whose true derivative is near zero are judged on absolute error.
DBD gradients are checked against :func:`dbd.frozen_replay`, which keeps the
pruning decisions of the original pass fixed and is therefore smooth.
"""

from dataclasses import dataclass

import numpy as np

from . import align, dbd, lognum
from .lexicon import Lexicon, TokenSet, Trie
from .lm import BilinearLM, PretrainedWrapper, ngram_train
from .scorer import GLUConvScorer

EPS = 1e-5
TOL = 1e-5
SUITES = ("lognum", "align", "lm", "scorer", "dbd")


@dataclass
class CheckResult:
    suite: str
    name: str
    seed: int
    max_rel_err: float
    n_entries: int

    @property
    def passed(self):
        return self.max_rel_err <= TOL

    def __str__(self):
        flag = "ok" if self.passed else "FAIL"
        return f"{self.suite}/{self.name} seed={self.seed} entries={self.n_entries} max_rel_err={self.max_rel_err:.2e} {flag}"


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)


def numeric_grad(f, x, eps=EPS):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (modified in place, then restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * eps)
    return g


def _compare(suite, name, seed, f, x, analytic):
    num = numeric_grad(f, x)
    err = rel_err(num, analytic)
    return CheckResult(suite, name, seed, float(err.max()) if err.size else 0.0, int(err.size))


# ---------------------------------------------------------------- instances

def random_alignment_instance(rng, T=None, D=None):
    T = int(rng.integers(2, 7)) if T is None else T
    D = int(rng.integers(2, 5)) if D is None else D
    em = rng.normal(size=(T, D))
    trans = align.TransitionMatrix(rng.normal(size=(D, D)), rng.normal(size=D))
    L = int(rng.integers(1, T + 1))
    y = rng.integers(0, D, size=L)
    for i in range(1, L):  # no immediate repeats in a collapsed target
        while y[i] == y[i - 1]:
            y[i] = rng.integers(0, D)
    return em, trans, y


def random_lexicon(rng, letters="ab", n_words=None, max_len=2):
    toks = TokenSet(list(letters) + [" "], " ")
    n_words = int(rng.integers(1, 4)) if n_words is None else n_words
    words, seen = [], set()
    while len(words) < n_words:
        k = int(rng.integers(1, max_len + 1))
        w = "".join(rng.choice(list(letters), size=k))
        if any(w[i] == w[i - 1] for i in range(1, len(w))):
            continue
        if w not in seen:
            seen.add(w)
            words.append(w)
    return toks, Lexicon.from_words(words, toks)


def random_dbd_instance(rng, lm_kind="wrapper"):
    """Tiny decoder instance ``(em, trans, trie, lm, y, beam_size)``."""
    toks, lex = random_lexicon(rng)
    trie = Trie(lex)
    T = int(rng.integers(3, 7))
    D = len(toks)
    # a target that fits in T frames
    while True:
        n = int(rng.integers(1, 3))
        words = [lex.words[i] for i in rng.integers(0, len(lex.words), size=n)]
        y = lex.target_tokens(words)
        if len(y) <= T:
            break
    em = rng.normal(size=(T, D))
    trans = align.TransitionMatrix(rng.normal(size=(D, D)), rng.normal(size=D))
    if lm_kind == "wrapper":
        corpus = [list(rng.choice(lex.words, size=int(rng.integers(1, 4)))) for _ in range(20)]
        lm = PretrainedWrapper(ngram_train(corpus, 2), lam=rng.uniform(0.2, 1.5), gamma=rng.normal())
    elif lm_kind == "bilinear":
        lm = BilinearLM(lex.words, dim=3, order=2, seed=int(rng.integers(1 << 30)), scale=0.5)
        lm.M[...] = rng.normal(scale=0.5, size=lm.M.shape)
    else:
        from .lm import ZeroLM

        lm = ZeroLM()
    beam = int(rng.integers(1, 9))
    return em, trans, trie, lm, y, beam


# ---------------------------------------------------------------- suites

def check_lognum(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=3.0, size=int(rng.integers(1, 8)))
    return [_compare("lognum", "dlogadd", seed, lambda: lognum.logadd_many(x), x, lognum.dlogadd(x))]


def check_align(seed):
    rng = np.random.default_rng(seed)
    em, trans, y = random_alignment_instance(rng)
    out = []
    dem, dtr = align.forward_grad(em, trans, y)
    f = lambda: align.forward_score(em, trans, y)  # noqa: E731
    out.append(_compare("align", "forward_grad.em", seed, f, em, dem))
    out.append(_compare("align", "forward_grad.G", seed, f, trans.G, dtr.G))
    out.append(_compare("align", "forward_grad.start", seed, f, trans.start, dtr.start))
    _, dem, dtr = align.asg_loss(em, trans, y)
    f = lambda: align.asg_loss(em, trans, y)[0]  # noqa: E731
    out.append(_compare("align", "asg_loss.em", seed, f, em, dem))
    out.append(_compare("align", "asg_loss.G", seed, f, trans.G, dtr.G))
    out.append(_compare("align", "asg_loss.start", seed, f, trans.start, dtr.start))
    return out


def check_lm(seed):
    rng = np.random.default_rng(seed)
    vocab = ["w%d" % i for i in range(int(rng.integers(2, 6)))]
    words = list(rng.choice(vocab, size=int(rng.integers(1, 6))))
    up = rng.normal()
    out = []
    bl = BilinearLM(vocab, dim=3, order=int(rng.integers(2, 4)), seed=seed, scale=0.5)
    bl.M[...] = rng.normal(scale=0.5, size=bl.M.shape)
    g = bl.grad(words, up)
    f = lambda: up * bl.score(words)  # noqa: E731
    out.append(_compare("lm", "bilinear.emb", seed, f, bl.emb, g["emb"]))
    out.append(_compare("lm", "bilinear.M", seed, f, bl.M, g["M"]))
    corpus = [list(rng.choice(vocab, size=int(rng.integers(1, 4)))) for _ in range(10)]
    wr = PretrainedWrapper(
        ngram_train(corpus, 2), lam=rng.uniform(0.1, 2.0), gamma=rng.normal(), per_word=bool(rng.integers(2))
    )
    g = wr.grad(words, up)
    f = lambda: up * wr.score(words)  # noqa: E731
    out.append(_compare("lm", "wrapper.lambda", seed, f, wr.lam, g["lambda"]))
    out.append(_compare("lm", "wrapper.gamma", seed, f, wr.gamma, g["gamma"]))
    return out


def check_scorer(seed):
    rng = np.random.default_rng(seed)
    T, F, D = int(rng.integers(3, 8)), 3, 4
    n_layers = int(rng.integers(1, 3))
    sc = GLUConvScorer(
        F, D, channels=(4,) * n_layers, kernels=tuple(int(k) for k in rng.choice([1, 2, 3, 5], size=n_layers)), seed=seed
    )
    for p in sc.params().values():  # non-zero biases exercise every path
        p[...] = rng.normal(scale=0.5, size=p.shape)
    x = rng.normal(size=(T, F))
    R = rng.normal(size=(T, D))
    f = lambda: float(np.sum(sc.score(x) * R))  # noqa: E731
    grads = sc.score_backward(x, R)
    return [_compare("scorer", "glu." + name, seed, f, p, grads[name]) for name, p in sc.params().items()]


def check_dbd(seed):
    rng = np.random.default_rng(seed)
    lm_kind = ("wrapper", "bilinear", "zero")[seed % 3]
    em, trans, trie, lm, y, beam = random_dbd_instance(rng, lm_kind)
    rep, lat = dbd.dbd_forward(em, trans, trie, lm, y, beam)
    dem, dtr, dlm = dbd.dbd_backward(lat, rep)
    em2 = em.copy()
    tr2 = trans.copy()
    f = lambda: dbd.frozen_replay(lat, em2, tr2, lm).loss  # noqa: E731
    tag = f"dbd[{lm_kind},beam={beam}]"
    out = [
        _compare("dbd", tag + ".em", seed, f, em2, dem),
        _compare("dbd", tag + ".G", seed, f, tr2.G, dtr.G),
        _compare("dbd", tag + ".start", seed, f, tr2.start, dtr.start),
    ]
    for name, p in lm.params().items():
        out.append(_compare("dbd", f"{tag}.lm.{name}", seed, f, p, dlm[name]))
    return out


_SUITES = {
    "lognum": check_lognum,
    "align": check_align,
    "lm": check_lm,
    "scorer": check_scorer,
    "dbd": check_dbd,
}


def run_suite(suite, seed=0, n_seeds=50):
    """Run ``n_seeds`` consecutive seeds starting at ``seed``; returns a list of :class:`CheckResult`."""
    if suite not in _SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    results = []
    for s in range(seed, seed + n_seeds):
        results.extend(_SUITES[suite](s))
    return results
