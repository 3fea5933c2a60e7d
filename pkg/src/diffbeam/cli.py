"""Command-line entry point: ``diffbeam <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
invariant failure (divergence, log-domain cancellation, failed gradient check).
"""

import argparse
import logging
import os
import sys

from . import data, gradcheck, train
from .dbd import NoCompleteHypothesis
from .lexicon import LexiconError, Trie
from .lm import LMError, arpa_save, ngram_train
from .lognum import LogDomainError
from .metrics import corpus_cer, corpus_wer

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("diffbeam")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; this project reserves 2 for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _existing(path, kind="file"):
    ok = os.path.isdir(path) if kind == "dir" else os.path.isfile(path)
    if not ok:
        raise UsageError(f"no such {kind}: {path}")
    return path


def _load_train_config(path, **overrides):
    if path is None:
        cfg = train.TrainConfig()
    else:
        cfg = data.load_config(train.TrainConfig, _existing(path))
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    cfg.__post_init__()
    return cfg


# ---------------------------------------------------------------- subcommands

def cmd_synth(args):
    cfg = data.SynthConfig() if args.config is None else data.load_config(data.SynthConfig, _existing(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    ds = data.synth_generate(cfg)
    data.write_dataset(ds, args.out)
    sizes = ", ".join(f"{k}={len(v)}" for k, v in ds.splits.items())
    print(f"wrote {args.out}: {len(ds.lexicon)} words, {sizes}, lm_corpus={len(ds.lm_corpus)}")


def cmd_lm_train(args):
    corpus = data.read_corpus(_existing(args.corpus))
    lm = ngram_train(corpus, args.order, k=args.k, unk=args.unk)
    arpa_save(lm, args.out)
    print(f"wrote {args.out}: order {args.order}, {len(lm.vocab)} vocabulary entries")


def _model_for(cfg, ds, lm_spec):
    lm = train.build_lm(lm_spec, cfg, ds.lexicon)
    n_feats = ds.splits["train"][0].feats.shape[1] if ds.splits.get("train") else None
    if n_feats is None:
        n_feats = next(iter(ds.splits.values()))[0].feats.shape[1]
    return train.Model.build(cfg, n_feats, len(ds.tokens), lm)


def _report(history):
    for h in history:
        print(
            f"epoch {h['epoch']}: loss {h['loss']:.4f} train_wer {h['train_wer']:.2f} "
            f"valid_cer {h['valid_cer']:.2f} valid_wer {h['valid_wer']:.2f}"
        )


def cmd_train_asg(args):
    cfg = _load_train_config(args.config, asg_epochs=args.epochs, seed=args.seed)
    ds = data.read_dataset(_existing(args.data, "dir"))
    if not ds.splits.get("train"):
        raise data.DataError(f"{args.data}: no training utterances")
    model = _model_for(cfg, ds, "zero")
    _report(train.train_asg(cfg, ds.splits, model, ds.lexicon, args.out))


def cmd_train_dbd(args):
    cfg = _load_train_config(
        args.config, lm=args.lm, beam_size=args.beam, epochs=args.epochs, seed=args.seed,
        from_scratch=True if args.from_ckpt is None else None,
    )
    ds = data.read_dataset(_existing(args.data, "dir"))
    if not ds.splits.get("train"):
        raise data.DataError(f"{args.data}: no training utterances")
    start = _existing(args.from_ckpt) if args.from_ckpt is not None else None
    model = _model_for(cfg, ds, cfg.lm)
    _report(train.train_dbd(cfg, ds.splits, model, ds.lexicon, args.out, start=start))


def cmd_decode(args):
    params, _, meta, _ = train.load_checkpoint(_existing(args.ckpt))
    cfg = data.config_from_dict(train.TrainConfig, data.parse_config(meta), strict=False)
    if args.lm_weight is not None:
        cfg.lm_lambda = args.lm_weight
    if args.word_bonus is not None:
        cfg.lm_gamma = args.word_bonus
    ds = data.read_dataset(_existing(args.data, "dir"), splits=(args.split,))
    utts = ds.splits.get(args.split)
    if not utts:
        raise data.DataError(f"{args.data}: no {args.split} utterances")
    lm_spec = args.lm if args.lm is not None else cfg.lm
    model = _model_for(cfg, ds, lm_spec)
    # checkpoint LM weights win over config defaults unless overridden on the command line
    train.load_into(model, params, strict=False)
    if args.lm_weight is not None or args.word_bonus is not None:
        lm_params = model.lm.params()
        if args.lm_weight is not None and "lambda" in lm_params:
            lm_params["lambda"][...] = args.lm_weight
        if args.word_bonus is not None and "gamma" in lm_params:
            lm_params["gamma"][...] = args.word_bonus
    trie = Trie(ds.lexicon)
    if args.criterion == "greedy":
        hyps = train.decode_utterances(model, utts, "greedy", trie)
    else:
        hyps = train.decode_utterances(model, utts, "beam", trie, args.beam, args.criterion)
    os.makedirs(args.out, exist_ok=True)
    hyp_path = os.path.join(args.out, f"{args.split}.hyp")
    ref_path = os.path.join(args.out, f"{args.split}.ref")
    with open(hyp_path, "w", encoding="utf-8") as f:
        for u, h in zip(utts, hyps):
            f.write(f"{u.id}\t{' '.join(h)}\n")
    with open(ref_path, "w", encoding="utf-8") as f:
        for u in utts:
            f.write(f"{u.id}\t{' '.join(u.words)}\n")
    cer, wer = train.error_rates(hyps, utts)
    report = f"utterances\t{len(utts)}\nWER\t{wer:.4f}\nCER\t{cer:.4f}\n"
    with open(os.path.join(args.out, f"{args.split}.report"), "w", encoding="utf-8") as f:
        f.write(report)
    print(f"WER {wer:.4f}\nCER {cer:.4f}")


def cmd_eval(args):
    hyp = data.read_hypotheses(_existing(args.hyp))
    ref = data.read_hypotheses(_existing(args.ref))
    missing = sorted(set(ref) - set(hyp))
    if missing:
        raise data.DataError(f"{len(missing)} reference utterances have no hypothesis (first: {missing[0]})")
    pairs = [(hyp[k], ref[k]) for k in ref]
    try:
        wer, cer = corpus_wer(pairs), corpus_cer(pairs)
    except ValueError as e:
        raise data.DataError(str(e)) from None
    print(f"WER {wer:.4f}\nCER {cer:.4f}")


def cmd_gradcheck(args):
    results = gradcheck.run_suite(args.suite, args.seed, args.n_seeds)
    failed = [r for r in results if not r.passed]
    for r in results if args.verbose else failed:
        print(r)
    worst = max(r.max_rel_err for r in results)
    print(f"{args.suite}: {len(results) - len(failed)}/{len(results)} checks passed, max rel err {worst:.2e}")
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="diffbeam", description="Differentiable lexicon-constrained beam search decoder.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="generate a synthetic dataset directory")
    s.add_argument("--config", help="SynthConfig key = value file (defaults if omitted)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("lm-train", help="train an add-k n-gram and write ARPA")
    s.add_argument("--corpus", required=True)
    s.add_argument("--order", type=int, required=True)
    s.add_argument("--k", type=float, default=0.1, help="add-k smoothing constant")
    s.add_argument("--unk", action="store_true", help="reserve an <unk> entry")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_lm_train)

    s = sub.add_parser("train-asg", help="ASG bootstrap training")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=int, help="override asg_epochs")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_asg)

    s = sub.add_parser("train-dbd", help="DBD fine-tuning from a checkpoint")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--from", dest="from_ckpt", help="start checkpoint (omit to train from scratch)")
    s.add_argument("--lm", help="zero | arpa:PATH | bilinear")
    s.add_argument("--beam", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_dbd)

    s = sub.add_parser("decode", help="decode a split and write hypotheses plus a WER/CER report")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--lm", help="zero | arpa:PATH | bilinear (default: the checkpoint's config)")
    s.add_argument("--beam", type=int, default=50)
    s.add_argument("--criterion", choices=("forward", "viterbi", "greedy"), default="forward")
    s.add_argument("--lm-weight", type=float, help="override lambda")
    s.add_argument("--word-bonus", type=float, help="override gamma")
    s.add_argument("--split", default="valid")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("eval", help="WER/CER of a hypothesis file against a reference file")
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    s.add_argument("--suite", required=True, choices=gradcheck.SUITES)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-seeds", type=int, default=50)
    s.add_argument("--verbose", action="store_true", help="print every check")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        rc = args.func(args)
    except UsageError as e:
        print(f"diffbeam: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (data.DataError, data.ConfigError, train.CheckpointError, LexiconError, LMError,
            FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as e:
        print(f"diffbeam: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (LogDomainError, train.TrainingDiverged, FloatingPointError, NoCompleteHypothesis) as e:
        print(f"diffbeam: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK if rc is None else rc


if __name__ == "__main__":
    sys.exit(main())
