"""Synthetic corpora, dataset directories and the flat ``key = value`` config format.

Dataset directory layout::

    tokens.txt        token symbols, one per line (<space> for the separator)
    lexicon.txt       word<TAB>token token ...
    {split}.tsv       utterance id<TAB>space-separated transcript
    feats/{id}.bin    int64 T, int64 F, then T*F float64, all little-endian
    lm_corpus.txt     text-only sentences from the same word bigram
"""

import dataclasses
import os
import string
import struct
from dataclasses import dataclass

import numpy as np

from .lexicon import Lexicon, TokenSet

SPLITS = ("train", "valid", "test")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# ---------------------------------------------------------------- config

def parse_config(text):
    """Parse flat ``key = value`` lines (``#`` starts a comment) into a dict of strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"line {lineno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def _convert(raw, typ, key):
    try:
        if typ is bool or typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int or typ == "int":
            return int(raw)
        if typ is float or typ == "float":
            return float(raw)
        if typ is str or typ == "str":
            return raw
        if typ in ("tuple", tuple) or str(typ).startswith("tuple"):
            inner = float if "float" in str(typ) else int
            return tuple(inner(v) for v in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    raise ConfigError(f"unsupported type for {key}")


def config_from_dict(cls, values, strict=True):
    """Build dataclass ``cls`` from string values; unknown keys raise unless ``strict=False``."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in values.items():
        if k not in fields:
            if strict:
                raise ConfigError(f"unknown config key {k!r}")
            continue
        kwargs[k] = _convert(v, fields[k].type, k)
    return cls(**kwargs)


def config_to_text(cfg):
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(cls, path, strict=True):
    with open(path, encoding="utf-8") as f:
        return config_from_dict(cls, parse_config(f.read()), strict=strict)


# ---------------------------------------------------------------- synthetic data

@dataclass
class SynthConfig:
    n_words: int = 50
    word_len: "tuple[int]" = (2, 6)
    feat_dim: int = 8
    duration: "tuple[int]" = (1, 3)
    noise: float = 0.0
    sent_len: "tuple[int]" = (2, 4)
    bigram_alpha: float = 0.1
    n_train: int = 200
    n_valid: int = 50
    n_test: int = 50
    n_lm: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.n_words < 1 or self.feat_dim < 1:
            raise ConfigError("n_words and feat_dim must be positive")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        for name in ("word_len", "duration", "sent_len"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigError(f"{name} must be a positive range")
        if min(self.n_train, self.n_valid, self.n_test) < 0 or self.bigram_alpha <= 0:
            raise ConfigError("corpus sizes must be >= 0 and bigram_alpha > 0")


@dataclass
class Utterance:
    id: str
    feats: np.ndarray
    words: list

    @property
    def T(self):
        return self.feats.shape[0]


@dataclass
class Dataset:
    tokens: TokenSet
    lexicon: Lexicon
    splits: dict
    lm_corpus: list
    bigram: np.ndarray = None


def _make_words(rng, n, lo, hi):
    letters = string.ascii_lowercase
    words, seen = [], set()
    while len(words) < n:
        k = int(rng.integers(lo, hi + 1))
        w = "".join(letters[i] for i in rng.integers(0, 26, size=k))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def word_bigram(rng, n_words, alpha):
    """Row ``i`` is P(next | word i); the last row is P(first word)."""
    return rng.dirichlet(np.full(n_words, alpha), size=n_words + 1)


def sample_sentence(rng, bigram, lo, hi):
    n = int(rng.integers(lo, hi + 1))
    prev = bigram.shape[0] - 1
    out = []
    for _ in range(n):
        prev = int(rng.choice(bigram.shape[1], p=bigram[prev]))
        out.append(prev)
    return out


def render(rng, y, emb, dur, noise):
    """Frames for token string ``y``: each token repeats k ~ U{dur} times plus noise."""
    reps = rng.integers(dur[0], dur[1] + 1, size=len(y))
    frames = np.repeat(emb[np.asarray(y)], reps, axis=0)
    if noise > 0:
        frames = frames + rng.normal(0.0, noise, size=frames.shape)
    return frames


def synth_generate(cfg):
    """Deterministic synthetic corpus: returns a :class:`Dataset`."""
    rng = np.random.default_rng(cfg.seed)
    tokens = TokenSet.default(repetition=True)
    words = _make_words(rng, cfg.n_words, *cfg.word_len)
    lex = Lexicon.from_words(words, tokens)
    bigram = word_bigram(rng, cfg.n_words, cfg.bigram_alpha)
    emb = rng.normal(size=(len(tokens), cfg.feat_dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    splits = {}
    for split, n in zip(SPLITS, (cfg.n_train, cfg.n_valid, cfg.n_test)):
        utts = []
        for i in range(n):
            ws = [words[j] for j in sample_sentence(rng, bigram, *cfg.sent_len)]
            y = lex.target_tokens(ws)
            utts.append(Utterance(f"{split}-{i:05d}", render(rng, y, emb, cfg.duration, cfg.noise), ws))
        splits[split] = utts
    lm_corpus = [
        [words[j] for j in sample_sentence(rng, bigram, *cfg.sent_len)] for _ in range(cfg.n_lm)
    ]
    return Dataset(tokens, lex, splits, lm_corpus, bigram)


# ---------------------------------------------------------------- file formats

_FEAT_HEADER = struct.Struct("<qq")


def write_features(path, feats):
    feats = np.ascontiguousarray(feats, dtype="<f8")
    with open(path, "wb") as f:
        f.write(_FEAT_HEADER.pack(*feats.shape))
        f.write(feats.tobytes())


def read_features(path):
    with open(path, "rb") as f:
        head = f.read(_FEAT_HEADER.size)
        if len(head) != _FEAT_HEADER.size:
            raise DataError(f"{path}: truncated header")
        T, F = _FEAT_HEADER.unpack(head)
        payload = f.read()
    if T < 1 or F < 1 or len(payload) != T * F * 8:
        raise DataError(f"{path}: header ({T}, {F}) does not match payload of {len(payload)} bytes")
    return np.frombuffer(payload, dtype="<f8").reshape(T, F).astype(np.float64)


def write_dataset(ds, out_dir):
    os.makedirs(os.path.join(out_dir, "feats"), exist_ok=True)
    with open(os.path.join(out_dir, "tokens.txt"), "w", encoding="utf-8") as f:
        f.write(ds.tokens.to_text())
    ds.lexicon.save(os.path.join(out_dir, "lexicon.txt"))
    for split, utts in ds.splits.items():
        with open(os.path.join(out_dir, f"{split}.tsv"), "w", encoding="utf-8") as f:
            for u in utts:
                f.write(f"{u.id}\t{' '.join(u.words)}\n")
                write_features(os.path.join(out_dir, "feats", f"{u.id}.bin"), u.feats)
    write_corpus(os.path.join(out_dir, "lm_corpus.txt"), ds.lm_corpus)


def write_corpus(path, sentences):
    with open(path, "w", encoding="utf-8") as f:
        for s in sentences:
            f.write(" ".join(s) + "\n")


def read_corpus(path):
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f if line.strip()]


def read_tokens(data_dir):
    path = os.path.join(data_dir, "tokens.txt")
    if not os.path.exists(path):
        raise DataError(f"{data_dir}: missing tokens.txt")
    with open(path, encoding="utf-8") as f:
        return TokenSet.from_text(f.read())


def read_split(data_dir, split, lexicon=None):
    path = os.path.join(data_dir, f"{split}.tsv")
    if not os.path.exists(path):
        raise DataError(f"{data_dir}: missing {split}.tsv")
    utts = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            uid, tab, text = line.partition("\t")
            if not tab:
                raise DataError(f"{path}:{lineno}: expected id<TAB>transcript")
            words = text.split()
            if lexicon is not None:
                for w in words:
                    if w not in lexicon.word_id:
                        raise DataError(f"{path}:{lineno}: word {w!r} not in lexicon")
            feats = read_features(os.path.join(data_dir, "feats", f"{uid}.bin"))
            utts.append(Utterance(uid, feats, words))
    return utts


def read_dataset(data_dir, splits=SPLITS):
    tokens = read_tokens(data_dir)
    lex = Lexicon.load(os.path.join(data_dir, "lexicon.txt"), tokens)
    out = {}
    for s in splits:
        if os.path.exists(os.path.join(data_dir, f"{s}.tsv")):
            out[s] = read_split(data_dir, s, lex)
    corpus_path = os.path.join(data_dir, "lm_corpus.txt")
    corpus = read_corpus(corpus_path) if os.path.exists(corpus_path) else []
    return Dataset(tokens, lex, out, corpus)


def read_hypotheses(path):
    """``id<TAB>words`` file -> dict."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            uid, _, text = line.partition("\t")
            out[uid] = text.split()
    return out
