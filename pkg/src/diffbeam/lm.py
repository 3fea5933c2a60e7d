"""Word-level transition models h(tau).

Every model exposes the same incremental interface used by the decoder::

    state = lm.start()
    state, s = lm.step(state, word)     # once per emitted word
    s_end = lm.finish(state)            # once at utterance end

and the total over a word sequence equals ``lm.score(words)``. States are
hashable tuples; equal states induce identical future scores. Trainable
models keep their parameters in ``lm.params()`` (name -> ndarray) and
accumulate gradients into a dict of the same shape.
"""

import math
import re
from collections import Counter

import numpy as np

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

LN10 = math.log(10.0)
ARPA_LOG_ZERO = -99.0


class LMError(ValueError):
    pass


class ArpaParseError(LMError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class ZeroLM:
    """h(tau) = 0."""

    def start(self):
        return ()

    def step(self, state, word):
        return (), 0.0

    def finish(self, state):
        return 0.0

    def score(self, words):
        return 0.0

    def params(self):
        return {}

    def zero_grads(self):
        return {}

    def step_grad(self, state, word, weight, grads):
        pass

    def finish_grad(self, state, weight, grads):
        pass

    def grad(self, words, upstream=1.0):
        return {}


class NGramLM:
    """Backoff n-gram with natural-log probabilities.

    ``probs[m]`` maps an m-gram tuple of word ids to ln P(w | context);
    ``backoffs`` maps a context tuple to its ln backoff weight. The decoder
    state is the tuple of the last ``order - 1`` ids (starting at ``(<s>,)``).
    """

    def __init__(self, order, vocab, probs, backoffs):
        if order < 1:
            raise LMError(f"order must be >= 1, got {order}")
        self.order = order
        self.vocab = list(vocab)
        self.ids = {w: i for i, w in enumerate(self.vocab)}
        self.probs = probs
        self.backoffs = backoffs
        self.bos = self.ids.get(BOS)
        self.eos = self.ids[EOS]
        self.unk = self.ids.get(UNK)
        self._cache = {}

    def word_id(self, word):
        i = self.ids.get(word)
        if i is None:
            if self.unk is None:
                raise LMError(f"word {word!r} is not in the LM vocabulary and there is no {UNK}")
            return self.unk
        return i

    def logprob_ids(self, ctx, w):
        key = ctx + (w,)
        v = self._cache.get(key)
        if v is not None:
            return v
        bo = 0.0
        while True:
            p = self.probs[len(ctx) + 1].get(ctx + (w,))
            if p is not None:
                v = bo + p
                break
            if not ctx:
                v = -math.inf
                break
            bo += self.backoffs.get(ctx, 0.0)
            ctx = ctx[1:]
        self._cache[key] = v
        return v

    def logprob(self, context, word):
        ctx = tuple(self.word_id(w) for w in context)[-(self.order - 1):] if self.order > 1 else ()
        return self.logprob_ids(ctx, self.word_id(word))

    def _next(self, state, w):
        if self.order == 1:
            return ()
        return (state + (w,))[-(self.order - 1):]

    def start(self):
        return (self.bos,) if self.order > 1 else ()

    def step(self, state, word):
        w = self.word_id(word)
        return self._next(state, w), self.logprob_ids(state, w)

    def finish(self, state):
        return self.logprob_ids(state, self.eos)

    def score(self, words):
        total = 0.0
        ctx = [BOS]
        for w in words:
            total += self.logprob(ctx, w)
            ctx.append(w)
        return total + self.logprob(ctx, EOS)

    def params(self):
        return {}

    def zero_grads(self):
        return {}

    def step_grad(self, state, word, weight, grads):
        pass

    def finish_grad(self, state, weight, grads):
        pass

    def grad(self, words, upstream=1.0):
        return {}

    def predicted_vocab(self):
        return [i for i, w in enumerate(self.vocab) if w != BOS]

    def perplexity(self, sentences):
        total, n = 0.0, 0
        for s in sentences:
            total += self.score(s)
            n += len(s) + 1
        return math.exp(-total / n)


def ngram_train(corpus, order, k=0.1, unk=False):
    """Add-k smoothed n-gram; backoff weights are all 1 (ln 0).

    Every context seen in ``corpus`` gets an explicit, normalized
    distribution over the predicted vocabulary (words + ``</s>``); unseen
    contexts back off to shorter ones.
    """
    if order < 1:
        raise LMError(f"order must be >= 1, got {order}")
    corpus = [list(s) for s in corpus]
    if not corpus:
        raise LMError("empty corpus")
    vocab = [BOS, EOS]
    if unk:
        vocab.append(UNK)
    seen = set(vocab)
    for s in corpus:
        for w in s:
            if w not in seen:
                seen.add(w)
                vocab.append(w)
    ids = {w: i for i, w in enumerate(vocab)}
    predicted = [i for i, w in enumerate(vocab) if w != BOS]
    V = len(predicted)

    counts = [Counter() for _ in range(order + 1)]
    for s in corpus:
        seq = [ids[BOS]] + [ids[w] for w in s] + [ids[EOS]]
        for m in range(1, order + 1):
            for i in range(1, len(seq)):
                if i - m + 1 < 0:
                    continue
                counts[m][tuple(seq[i - m + 1:i + 1])] += 1

    probs = {m: {} for m in range(1, order + 1)}
    backoffs = {}
    n_tokens = sum(counts[1].values())
    for w in predicted:
        probs[1][(w,)] = _addk(counts[1][(w,)], n_tokens, k, V)
    probs[1][(ids[BOS],)] = -math.inf
    for m in range(2, order + 1):
        ctx_counts = Counter()
        for gram, c in counts[m].items():
            ctx_counts[gram[:-1]] += c
        for ctx in sorted(ctx_counts):
            backoffs[ctx] = 0.0
            for w in predicted:
                probs[m][ctx + (w,)] = _addk(counts[m][ctx + (w,)], ctx_counts[ctx], k, V)
    return NGramLM(order, vocab, probs, backoffs)


def _addk(c, n, k, V):
    num = c + k
    if num == 0:
        return -math.inf
    return math.log(num / (n + k * V))


def _fmt(x):
    if x == -math.inf:
        return f"{ARPA_LOG_ZERO:.1f}"
    return repr(x / LN10)


def arpa_save(lm, path):
    """Write ``lm`` as an ARPA file (log10 probabilities and backoffs)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(arpa_dumps(lm))


def arpa_dumps(lm):
    lines = ["", "\\data\\"]
    for m in range(1, lm.order + 1):
        lines.append(f"ngram {m}={len(lm.probs[m])}")
    for m in range(1, lm.order + 1):
        lines.append("")
        lines.append(f"\\{m}-grams:")
        for gram in sorted(lm.probs[m]):
            row = _fmt(lm.probs[m][gram]) + "\t" + " ".join(lm.vocab[i] for i in gram)
            if m < lm.order and gram in lm.backoffs:
                row += "\t" + _fmt(lm.backoffs[gram])
            lines.append(row)
    lines.append("")
    lines.append("\\end\\")
    return "\n".join(lines) + "\n"


_NGRAM_COUNT = re.compile(r"^ngram\s+(\d+)\s*=\s*(\d+)$")
_SECTION = re.compile(r"^\\(\d+)-grams:$")


def arpa_load(path):
    with open(path, encoding="utf-8") as f:
        return arpa_loads(f.read())


def _parse_log10(tok, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise ArpaParseError(lineno, f"bad number {tok!r}") from None
    return -math.inf if v <= ARPA_LOG_ZERO else v * LN10


def arpa_loads(text):
    """Parse ARPA text. Errors carry the offending line number."""
    lines = text.splitlines()
    i = 0
    n = len(lines)
    while i < n and lines[i].strip() != "\\data\\":
        if lines[i].strip():
            raise ArpaParseError(i + 1, "expected \\data\\ header")
        i += 1
    if i == n:
        raise ArpaParseError(n, "missing \\data\\ header")
    i += 1
    declared = {}
    while i < n and lines[i].strip():
        m = _NGRAM_COUNT.match(lines[i].strip())
        if not m:
            raise ArpaParseError(i + 1, f"bad count line {lines[i]!r}")
        declared[int(m.group(1))] = int(m.group(2))
        i += 1
    if not declared or sorted(declared) != list(range(1, max(declared) + 1)):
        raise ArpaParseError(i, "n-gram counts must cover orders 1..N")
    order = max(declared)
    vocab, ids = [], {}
    raw = {m: [] for m in range(1, order + 1)}
    cur = None
    seen_end = False
    for j in range(i, n):
        line = lines[j].strip()
        lineno = j + 1
        if not line:
            continue
        if line == "\\end\\":
            seen_end = True
            break
        m = _SECTION.match(line)
        if m:
            cur = int(m.group(1))
            if cur not in declared:
                raise ArpaParseError(lineno, f"section for undeclared order {cur}")
            continue
        if cur is None:
            raise ArpaParseError(lineno, "n-gram entry outside a section")
        parts = line.split()
        if len(parts) not in (cur + 1, cur + 2):
            raise ArpaParseError(lineno, f"expected {cur} words in {cur}-gram entry")
        p = _parse_log10(parts[0], lineno)
        words = parts[1:cur + 1]
        bo = _parse_log10(parts[cur + 1], lineno) if len(parts) == cur + 2 else None
        if cur == 1:
            ids[words[0]] = len(vocab)
            vocab.append(words[0])
        raw[cur].append((lineno, words, p, bo))
    if not seen_end:
        raise ArpaParseError(n, "missing \\end\\ marker")
    probs = {m: {} for m in range(1, order + 1)}
    backoffs = {}
    for m in range(1, order + 1):
        if len(raw[m]) != declared[m]:
            raise ArpaParseError(
                i, f"header declares {declared[m]} {m}-grams but {len(raw[m])} were found"
            )
        for lineno, words, p, bo in raw[m]:
            try:
                gram = tuple(ids[w] for w in words)
            except KeyError as e:
                raise ArpaParseError(lineno, f"word {e.args[0]!r} missing from 1-grams") from None
            probs[m][gram] = p
            if bo is not None:
                backoffs[gram] = bo
    if EOS not in ids:
        raise ArpaParseError(n, f"vocabulary lacks {EOS}")
    return NGramLM(order, vocab, probs, backoffs)


def _scale(lam, lp):
    # 0 * -inf is 0 here: a zero-weight LM must not veto anything
    return 0.0 if lam == 0.0 else lam * lp


class PretrainedWrapper:
    """h(tau) = lambda * log P_lm(tau) + gamma, with trainable lambda and gamma.

    With ``per_word`` (default) gamma is added for every emitted word;
    otherwise once per utterance at ``finish``. ``use_finish`` controls
    whether the end-of-sentence probability is scored.
    """

    def __init__(self, base, lam=1.0, gamma=0.0, per_word=True, use_finish=True):
        self.base = base
        self.lam = np.array(float(lam))
        self.gamma = np.array(float(gamma))
        self.per_word = per_word
        self.use_finish = use_finish

    def params(self):
        return {"lambda": self.lam, "gamma": self.gamma}

    def zero_grads(self):
        return {"lambda": np.zeros(()), "gamma": np.zeros(())}

    def start(self):
        return self.base.start()

    def step(self, state, word):
        state, lp = self.base.step(state, word)
        s = _scale(float(self.lam), lp)
        if self.per_word:
            s += float(self.gamma)
        return state, s

    def finish(self, state):
        s = _scale(float(self.lam), self.base.finish(state)) if self.use_finish else 0.0
        if not self.per_word:
            s += float(self.gamma)
        return s

    def _logp(self, words):
        total = 0.0
        st = self.base.start()
        for w in words:
            st, lp = self.base.step(st, w)
            total += lp
        if self.use_finish:
            total += self.base.finish(st)
        return total

    def score(self, words):
        n_ins = len(words) if self.per_word else 1
        return _scale(float(self.lam), self._logp(words)) + float(self.gamma) * n_ins

    def step_grad(self, state, word, weight, grads):
        _, lp = self.base.step(state, word)
        grads["lambda"] += weight * lp
        if self.per_word:
            grads["gamma"] += weight

    def finish_grad(self, state, weight, grads):
        if self.use_finish:
            grads["lambda"] += weight * self.base.finish(state)
        if not self.per_word:
            grads["gamma"] += weight

    def grad(self, words, upstream=1.0):
        n_ins = len(words) if self.per_word else 1
        return {
            "lambda": np.array(upstream * self._logp(words)),
            "gamma": np.array(upstream * float(n_ins)),
        }


class BilinearLM:
    """Unnormalized bilinear LM: score(w | history) = e_w . sum_n M_n e_{w_{-n}}.

    Missing history positions use a learned begin-of-sentence embedding
    (the last row of ``emb``). There is no end-of-sentence term.
    """

    def __init__(self, vocab, dim=8, order=2, seed=0, scale=0.1):
        if order < 2:
            raise LMError("bilinear LM order must be >= 2")
        self.vocab = list(vocab)
        self.ids = {w: i for i, w in enumerate(self.vocab)}
        self.order = order
        self.dim = dim
        self.bos = len(self.vocab)
        rng = np.random.default_rng(seed)
        self.emb = rng.normal(0.0, scale, size=(len(self.vocab) + 1, dim))
        self.M = np.zeros((order, dim, dim))

    def params(self):
        return {"emb": self.emb, "M": self.M}

    def zero_grads(self):
        return {"emb": np.zeros_like(self.emb), "M": np.zeros_like(self.M)}

    def word_id(self, word):
        try:
            return self.ids[word]
        except KeyError:
            raise LMError(f"word {word!r} is not in the bilinear LM vocabulary") from None

    def start(self):
        return (self.bos,) * self.order

    def _ctx(self, state):
        # state[-n] is the n-th previous word
        c = np.zeros(self.dim)
        for n in range(1, self.order + 1):
            c += self.M[n - 1] @ self.emb[state[-n]]
        return c

    def step(self, state, word):
        w = self.word_id(word)
        s = float(self.emb[w] @ self._ctx(state))
        return state[1:] + (w,), s

    def finish(self, state):
        return 0.0

    def score(self, words):
        ids = [self.bos] * self.order + [self.word_id(w) for w in words]
        total = 0.0
        for N in range(self.order, len(ids)):
            ew = self.emb[ids[N]]
            for n in range(1, self.order + 1):
                total += ew @ self.M[n - 1] @ self.emb[ids[N - n]]
        return float(total)

    def step_grad(self, state, word, weight, grads):
        if weight == 0.0:
            return
        w = self.word_id(word)
        ew = self.emb[w]
        gemb, gM = grads["emb"], grads["M"]
        gemb[w] += weight * self._ctx(state)
        for n in range(1, self.order + 1):
            p = state[-n]
            gM[n - 1] += weight * np.outer(ew, self.emb[p])
            gemb[p] += weight * (self.M[n - 1].T @ ew)

    def finish_grad(self, state, weight, grads):
        pass

    def grad(self, words, upstream=1.0):
        grads = self.zero_grads()
        st = self.start()
        for w in words:
            self.step_grad(st, w, upstream, grads)
            st, _ = self.step(st, w)
        return grads


def bilinear_grad(lm, words, upstream=1.0):
    return lm.grad(words, upstream)
