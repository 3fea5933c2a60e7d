"""SGD training: ASG bootstrap, DBD fine-tuning, checkpoints and metrics files."""

import hashlib
import logging
import math
import os
import struct
import time
from dataclasses import dataclass

import numpy as np

from . import align, dbd
from .data import ConfigError, config_to_text
from .lexicon import Trie
from .lm import BilinearLM, PretrainedWrapper, ZeroLM, arpa_load
from .metrics import corpus_cer, corpus_wer
from .scorer import GLUConvScorer, LinearScorer, make_scorer

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, utt_id, loss):
        super().__init__(f"non-finite loss {loss!r} on utterance {utt_id}")
        self.utt_id = utt_id


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.3
    lr_dbd: float = 0.02
    clip: float = 5.0
    batch_size: int = 16
    asg_epochs: int = 50
    epochs: int = 5
    beam_size: int = 500
    decode_beam: int = 50
    seed: int = 0
    scorer: str = "glu"
    channels: "tuple[int]" = (32,)
    kernels: "tuple[int]" = (5,)
    lm: str = "zero"
    lm_lambda: float = 0.0
    lm_gamma: float = 0.0
    lm_gamma_per_word: bool = True
    lm_finish: bool = True
    freeze_lm: bool = False
    bilinear_dim: int = 8
    bilinear_order: int = 2
    train_eval_max: int = 64
    log_wallclock: bool = True
    from_scratch: bool = False

    def __post_init__(self):
        for name in ("lr", "lr_dbd", "clip", "batch_size", "beam_size", "decode_beam"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.asg_epochs < 0 or self.epochs < 0:
            raise ConfigError("epoch counts must be >= 0")

    def text(self):
        return config_to_text(self)

    def hash(self):
        return hashlib.sha256(self.text().encode("utf-8")).digest()


class Model:
    """Frame scorer + token transitions + word LM, with a flat parameter namespace."""

    def __init__(self, scorer, trans, lm=None):
        self.scorer = scorer
        self.trans = trans
        self.lm = lm if lm is not None else ZeroLM()

    @classmethod
    def build(cls, cfg, n_feats, n_tokens, lm=None):
        scorer = make_scorer(cfg.scorer, n_feats, n_tokens, cfg.channels, cfg.kernels, seed=cfg.seed)
        return cls(scorer, align.TransitionMatrix.zeros(n_tokens), lm)

    def params(self, with_lm=True):
        p = {f"scorer.{k}": v for k, v in self.scorer.params().items()}
        p["trans.G"] = self.trans.G
        p["trans.start"] = self.trans.start
        if with_lm:
            p.update({f"lm.{k}": v for k, v in self.lm.params().items()})
        return p

    def emissions(self, x):
        return self.scorer.score(x)


def build_lm(spec, cfg, lexicon):
    """``zero`` | ``arpa:PATH`` | ``bilinear``."""
    if spec == "zero":
        return ZeroLM()
    if spec.startswith("arpa:"):
        return PretrainedWrapper(
            arpa_load(spec[5:]),
            cfg.lm_lambda,
            cfg.lm_gamma,
            per_word=cfg.lm_gamma_per_word,
            use_finish=cfg.lm_finish,
        )
    if spec == "bilinear":
        return BilinearLM(lexicon.words, cfg.bilinear_dim, cfg.bilinear_order, seed=cfg.seed)
    raise ConfigError(f"unknown LM spec {spec!r}")


# ---------------------------------------------------------------- optimizer

def global_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def sgd_step(params, grads, lr, clip):
    """In-place clipped SGD on dicts of arrays; returns the pre-clip gradient norm."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if params[name].shape != np.shape(g):
            raise ValueError(f"shape mismatch for {name}: {params[name].shape} vs {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    norm = global_norm(grads)
    scale = clip / norm if norm > clip else 1.0
    for name, g in grads.items():
        params[name] -= (lr * scale) * g
    return norm


def make_batches(dataset, batch_size, rng=None):
    """Sort by frame count (stable on id), chunk, then optionally shuffle batch order."""
    order = sorted(dataset, key=lambda u: (u.T, u.id))
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        perm = rng.permutation(len(batches))
        batches = [batches[i] for i in perm]
    return batches


# ---------------------------------------------------------------- checkpoints

MAGIC = b"DBDCKPT\x00"
VERSION = 1
_HEAD = struct.Struct("<8sI32sII")


def save_checkpoint(path, params, epoch, config_text, config_hash=None):
    """Header (magic, version, config hash, epoch, config text) + named float64 tensors."""
    meta = config_text.encode("utf-8")
    digest = config_hash or hashlib.sha256(meta).digest()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(_HEAD.pack(MAGIC, VERSION, digest, epoch, len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.asarray(params[name], dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<HB", len(nb), arr.ndim))
            f.write(nb)
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns ``(params, epoch, config_text, config_hash)``."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < _HEAD.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, digest, epoch, meta_len = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = _HEAD.size
    meta = buf[off:off + meta_len].decode("utf-8")
    off += meta_len
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    params = {}
    try:
        for _ in range(n):
            nlen, ndim = struct.unpack_from("<HB", buf, off)
            off += 3
            name = buf[off:off + nlen].decode("utf-8")
            off += nlen
            shape = struct.unpack_from(f"<{ndim}Q", buf, off)
            off += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape)
            params[name] = arr.astype(np.float64)
            off += 8 * size
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: corrupt tensor section ({e})") from None
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")
    return params, epoch, meta, digest


def load_into(model, params, strict=True):
    """Copy checkpoint tensors into ``model``; LM tensors are optional unless ``strict``."""
    mine = model.params()
    for name, arr in mine.items():
        if name not in params:
            if strict or not name.startswith("lm."):
                raise CheckpointError(f"checkpoint lacks tensor {name!r}")
            continue
        if params[name].shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {name}: {params[name].shape} vs {arr.shape}")
        arr[...] = params[name]
    extra = set(params) - set(mine) - {"optim.step"}
    if strict and extra:
        raise CheckpointError(f"unexpected tensors {sorted(extra)}")


# ---------------------------------------------------------------- evaluation

def decode_utterances(model, utts, mode, trie=None, beam=50, aggregate="forward"):
    """``mode`` is ``greedy`` (lexicon-free) or ``beam`` (lexicon + model LM)."""
    hyps = []
    tokens = trie.lexicon.tokens if trie is not None else None
    for u in utts:
        em = model.emissions(u.feats)
        if mode == "greedy":
            hyps.append(dbd.greedy_decode(em, model.trans, tokens))
        else:
            try:
                words, _ = dbd.dbd_decode(em, model.trans, trie, model.lm, beam, aggregate)
            except dbd.NoCompleteHypothesis:
                words = []
            hyps.append(words)
    return hyps


def error_rates(hyps, utts):
    pairs = [(h, u.words) for h, u in zip(hyps, utts)]
    return corpus_cer(pairs), corpus_wer(pairs)


def grid_search_lm(model, utts, trie, ngram, lambdas, gammas, beam=50):
    """Decode ``utts`` for every (lambda, gamma); returns ``(best_wer, lam, gamma, table)``."""
    saved = model.lm
    table = []
    best = None
    try:
        for lam in lambdas:
            for gam in gammas:
                model.lm = PretrainedWrapper(ngram, lam, gam)
                _, w = error_rates(decode_utterances(model, utts, "beam", trie, beam), utts)
                table.append((lam, gam, w))
                if best is None or w < best[0]:
                    best = (w, lam, gam)
    finally:
        model.lm = saved
    return best[0], best[1], best[2], table


# ---------------------------------------------------------------- training loops

class MetricsWriter:
    HEADER = "epoch\tloss\ttrain_wer\tvalid_cer\tvalid_wer\twallclock_s\n"

    def __init__(self, path, wallclock=True):
        self.path = path
        self.wallclock = wallclock
        self.t0 = time.perf_counter()
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.HEADER)

    def write(self, epoch, loss, train_wer, valid_cer, valid_wer):
        wc = time.perf_counter() - self.t0 if self.wallclock else 0.0
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(f"{epoch}\t{loss:.6f}\t{train_wer:.4f}\t{valid_cer:.4f}\t{valid_wer:.4f}\t{wc:.2f}\n")


def _asg_utt(model, u, y):
    em, cache = model.scorer.forward(u.feats)
    loss, dem, dtr = align.asg_loss(em, model.trans, y)
    return loss, dem, dtr, {}, cache


def _dbd_utt(model, u, y, trie, beam):
    em, cache = model.scorer.forward(u.feats)
    rep, lat = dbd.dbd_forward(em, model.trans, trie, model.lm, y, beam)
    dem, dtr, dlm = dbd.dbd_backward(lat, rep)
    return rep.loss, dem, dtr, dlm, cache


def _run_epochs(cfg, model, data, lexicon, out_dir, phase, epochs, lr, start_epoch=0):
    trie = Trie(lexicon)
    os.makedirs(out_dir, exist_ok=True)
    metrics = MetricsWriter(os.path.join(out_dir, "metrics.tsv"), cfg.log_wallclock)
    train, valid = data["train"], data.get("valid", [])
    targets = {u.id: lexicon.target_tokens(u.words) for u in train}
    train_eval = sorted(train, key=lambda u: u.id)[: cfg.train_eval_max]
    decode_mode = "greedy" if phase == "asg" else "beam"
    params = model.params(with_lm=not cfg.freeze_lm)
    step = 0
    history = []
    for epoch in range(start_epoch + 1, start_epoch + epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        total, count, skipped = 0.0, 0, 0
        for batch in make_batches(train, cfg.batch_size, rng):
            grads = {k: np.zeros_like(v) for k, v in params.items()}
            n = 0
            for u in batch:
                y = targets[u.id]
                if len(y) > u.T:
                    log.warning("skipping unalignable utterance %s (L=%d > T=%d)", u.id, len(y), u.T)
                    skipped += 1
                    continue
                if phase == "asg":
                    loss, dem, dtr, dlm, cache = _asg_utt(model, u, y)
                else:
                    loss, dem, dtr, dlm, cache = _dbd_utt(model, u, y, trie, cfg.beam_size)
                if not math.isfinite(loss):
                    raise TrainingDiverged(u.id, loss)
                for k, g in model.scorer.backward(cache, dem).items():
                    grads[f"scorer.{k}"] += g
                grads["trans.G"] += dtr.G
                grads["trans.start"] += dtr.start
                if not cfg.freeze_lm:
                    for k, g in dlm.items():
                        grads[f"lm.{k}"] += g
                total += loss
                count += 1
                n += 1
            if n == 0:
                continue
            for g in grads.values():
                g /= n
            sgd_step(params, grads, lr, cfg.clip)
            step += 1
        mean_loss = total / max(count, 1)
        if not math.isfinite(mean_loss):
            raise TrainingDiverged("<epoch>", mean_loss)
        _, train_wer = error_rates(decode_utterances(model, train_eval, decode_mode, trie, cfg.decode_beam), train_eval)
        if valid:
            vc, vw = error_rates(decode_utterances(model, valid, decode_mode, trie, cfg.decode_beam), valid)
        else:
            vc = vw = float("nan")
        metrics.write(epoch, mean_loss, train_wer, vc, vw)
        history.append({"epoch": epoch, "loss": mean_loss, "train_wer": train_wer,
                        "valid_cer": vc, "valid_wer": vw, "skipped": skipped})
        log.info("%s epoch %d loss %.4f train_wer %.2f valid_cer %.2f valid_wer %.2f",
                 phase, epoch, mean_loss, train_wer, vc, vw)
        ckpt = model.params()
        ckpt["optim.step"] = np.array(float(step))
        path = os.path.join(out_dir, f"epoch{epoch:03d}.ckpt")
        save_checkpoint(path, ckpt, epoch, cfg.text(), cfg.hash())
        save_checkpoint(os.path.join(out_dir, "last.ckpt"), ckpt, epoch, cfg.text(), cfg.hash())
    return history


def train_asg(cfg, data, model, lexicon, out_dir):
    """ASG bootstrap for ``cfg.asg_epochs`` epochs; returns per-epoch history."""
    return _run_epochs(cfg, model, data, lexicon, out_dir, "asg", cfg.asg_epochs, cfg.lr)


def train_dbd(cfg, data, model, lexicon, out_dir, start=None):
    """DBD fine-tuning for ``cfg.epochs`` epochs starting from checkpoint ``start``.

    ``start`` is a checkpoint path; it is required unless ``cfg.from_scratch``.
    """
    first = 0
    if start is None:
        if not cfg.from_scratch:
            raise ValueError("train_dbd needs a start checkpoint (set from_scratch to override)")
    else:
        params, first, _, _ = load_checkpoint(start)
        load_into(model, params, strict=False)
    return _run_epochs(cfg, model, data, lexicon, out_dir, "dbd", cfg.epochs, cfg.lr_dbd, first)
