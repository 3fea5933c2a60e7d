"""Token sets, word spelling and the lexicon trie."""

import io
import string
from dataclasses import dataclass, field

import numpy as np

DEAD = -1
ROOT = 0

SPACE = " "
REP = "<rep>"


class LexiconError(ValueError):
    pass


class TokenSet:
    """Dense bijection between token symbols and indices 0..|D|-1.

    Exactly one token is the word separator. The optional repetition token
    replaces the second of two equal consecutive letters.
    """

    def __init__(self, symbols, separator=SPACE, repetition=None):
        symbols = list(symbols)
        if len(set(symbols)) != len(symbols):
            raise LexiconError("duplicate token symbol")
        if separator not in symbols:
            raise LexiconError(f"separator {separator!r} not in token set")
        if repetition is not None and repetition not in symbols:
            raise LexiconError(f"repetition token {repetition!r} not in token set")
        self.symbols = symbols
        self.index = {s: i for i, s in enumerate(symbols)}
        self.separator = separator
        self.sep = self.index[separator]
        self.repetition = repetition
        self.rep = self.index[repetition] if repetition is not None else None

    @classmethod
    def default(cls, repetition=True):
        """26 letters, apostrophe, period and space (plus ``<rep>`` if enabled)."""
        syms = list(string.ascii_lowercase) + ["'", ".", SPACE]
        if repetition:
            syms.append(REP)
        return cls(syms, SPACE, REP if repetition else None)

    def __len__(self):
        return len(self.symbols)

    def __eq__(self, other):
        return (
            isinstance(other, TokenSet)
            and self.symbols == other.symbols
            and self.separator == other.separator
            and self.repetition == other.repetition
        )

    def encode(self, symbols):
        return [self.index[s] for s in symbols]

    def decode(self, ids):
        return [self.symbols[i] for i in ids]

    def to_text(self):
        lines = []
        for s in self.symbols:
            tag = ""
            if s == self.separator:
                tag = "\tsep"
            elif s == self.repetition:
                tag = "\trep"
            lines.append(_escape(s) + tag)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        syms, sep, rep = [], None, None
        for line in text.splitlines():
            if not line:
                continue
            sym, _, tag = line.partition("\t")
            sym = _unescape(sym)
            syms.append(sym)
            if tag == "sep":
                sep = sym
            elif tag == "rep":
                rep = sym
        if sep is None:
            raise LexiconError("token file has no separator entry")
        return cls(syms, sep, rep)


def _escape(sym):
    return "<space>" if sym == SPACE else sym


def _unescape(sym):
    return SPACE if sym == "<space>" else sym


def spell(word, tokens):
    """Token indices for ``word``.

    With a repetition token configured, the second letter of each doubled
    pair becomes the repetition token ("hello" -> h e l <rep> o). A tripled
    letter alternates (l <rep> l).
    """
    out = []
    for ch in word:
        if ch not in tokens.index or ch == tokens.separator or ch == tokens.repetition:
            raise LexiconError(f"character {ch!r} of word {word!r} is not a spellable token")
        tok = tokens.index[ch]
        if out and out[-1] == tok:
            if tokens.rep is None:
                raise LexiconError(
                    f"word {word!r} has a doubled letter but no repetition token is configured"
                )
            tok = tokens.rep
        out.append(tok)
    if not out:
        raise LexiconError("empty word")
    return out


def unspell(ids, tokens):
    """Inverse of :func:`spell` for a single word's token ids."""
    chars = []
    for t in ids:
        if tokens.rep is not None and t == tokens.rep:
            chars.append(chars[-1] if chars else "")
        else:
            chars.append(tokens.symbols[t])
    return "".join(chars)


def tokens_to_words(ids, tokens):
    """Split a collapsed token sequence at separators and unspell each word."""
    words, cur = [], []
    for t in ids:
        if t == tokens.sep:
            if cur:
                words.append(unspell(cur, tokens))
            cur = []
        else:
            cur.append(t)
    if cur:
        words.append(unspell(cur, tokens))
    return words


@dataclass
class Lexicon:
    tokens: TokenSet
    words: list = field(default_factory=list)
    spellings: list = field(default_factory=list)

    def __post_init__(self):
        self.word_id = {}
        for i, w in enumerate(self.words):
            if w in self.word_id:
                raise LexiconError(f"duplicate word {w!r}")
            self.word_id[w] = i
            self._check(w, self.spellings[i])

    def _check(self, word, sp):
        if not sp:
            raise LexiconError(f"empty spelling for {word!r}")
        if self.tokens.sep in sp:
            raise LexiconError(f"spelling of {word!r} contains the separator")
        for a, b in zip(sp, sp[1:]):
            if a == b:
                raise LexiconError(f"spelling of {word!r} repeats token {self.tokens.symbols[a]!r}")

    @classmethod
    def from_words(cls, words, tokens):
        words = list(words)
        return cls(tokens, words, [spell(w, tokens) for w in words])

    def add(self, word, spelling=None):
        if word in self.word_id:
            raise LexiconError(f"duplicate word {word!r}")
        sp = list(spelling) if spelling is not None else spell(word, self.tokens)
        self._check(word, sp)
        self.word_id[word] = len(self.words)
        self.words.append(word)
        self.spellings.append(sp)

    def __len__(self):
        return len(self.words)

    def target_tokens(self, transcript):
        """Token string of a word sequence with separators between words."""
        y = []
        for k, w in enumerate(transcript):
            if w not in self.word_id:
                raise LexiconError(f"word {w!r} not in lexicon")
            if k:
                y.append(self.tokens.sep)
            y.extend(self.spellings[self.word_id[w]])
        return np.asarray(y, dtype=np.int64)

    def to_text(self):
        buf = io.StringIO()
        for w, sp in zip(self.words, self.spellings):
            buf.write(w + "\t" + " ".join(_escape(s) for s in self.tokens.decode(sp)) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text, tokens):
        lex = cls(tokens)
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].rstrip()
            if not line.strip():
                continue
            word, sep, rest = line.partition("\t")
            if not sep:
                raise LexiconError(f"line {lineno}: expected word<TAB>tokens")
            try:
                sp = [tokens.index[_unescape(s)] for s in rest.split()]
            except KeyError as e:
                raise LexiconError(f"line {lineno}: unknown token {e.args[0]!r}") from None
            try:
                lex.add(word, sp)
            except LexiconError as e:
                raise LexiconError(f"line {lineno}: {e}") from None
        return lex

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path, tokens):
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read(), tokens)


class Trie:
    """Prefix tree over lexicon spellings.

    Node 0 is the root (the between-words state). ``children[n]`` maps token
    -> child id, ``words[n]`` lists word ids completed at node ``n`` and
    ``token[n]`` is the token on the edge into ``n`` (-1 for the root).
    """

    def __init__(self, lexicon):
        if len(lexicon) == 0:
            raise LexiconError("cannot build a trie from an empty lexicon")
        self.lexicon = lexicon
        self.children = [{}]
        self.words = [[]]
        self.token = [-1]
        self.depth = [0]
        for wid, sp in enumerate(lexicon.spellings):
            node = ROOT
            for tok in sp:
                nxt = self.children[node].get(tok)
                if nxt is None:
                    nxt = len(self.children)
                    self.children[node][tok] = nxt
                    self.children.append({})
                    self.words.append([])
                    self.token.append(tok)
                    self.depth.append(self.depth[node] + 1)
                node = nxt
            if self.words[node]:
                other = lexicon.words[self.words[node][0]]
                raise LexiconError(f"words {other!r} and {lexicon.words[wid]!r} share a spelling")
            self.words[node].append(wid)
        # children as sorted tuples for deterministic iteration in the decoder
        self.edges = [tuple(sorted(c.items())) for c in self.children]

    def __len__(self):
        return len(self.children)

    def step(self, state, tok):
        """Child of ``state`` along ``tok``, or ``DEAD``."""
        if state == DEAD:
            raise LexiconError("trie_step from DEAD state")
        return self.children[state].get(tok, DEAD)

    def walk(self, spelling, state=ROOT):
        for tok in spelling:
            state = self.step(state, tok)
            if state == DEAD:
                break
        return state


def build_trie(lexicon):
    return Trie(lexicon)


def trie_step(trie, state, tok):
    return trie.step(state, tok)
