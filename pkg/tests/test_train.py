import struct

import numpy as np
import pytest

from diffbeam import data, train
from diffbeam.data import SynthConfig, Utterance
from diffbeam.lm import BilinearLM, PretrainedWrapper, ZeroLM, arpa_save, ngram_train


def _params():
    return {"a": np.array([1.0, 2.0]), "b": np.array([[3.0]])}


def test_sgd_zero_grads():
    p = _params()
    train.sgd_step(p, {k: np.zeros_like(v) for k, v in p.items()}, 0.5, 1.0)
    assert all(np.array_equal(p[k], v) for k, v in _params().items())


def test_sgd_clip_boundary_and_halving():
    p = _params()
    g = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}  # norm 5
    train.sgd_step(p, g, 1.0, 5.0)
    np.testing.assert_allclose(p["a"], [-2.0, 2.0])
    np.testing.assert_allclose(p["b"], [[-1.0]])
    p = _params()
    g2 = {k: 2 * v for k, v in g.items()}  # norm 10 = 2 * clip
    norm = train.sgd_step(p, g2, 1.0, 5.0)
    assert norm == pytest.approx(10.0)
    np.testing.assert_allclose(p["a"], [-2.0, 2.0])


def test_sgd_clipping_invariance():
    rng = np.random.default_rng(0)
    g = {"a": rng.normal(size=2) * 10, "b": rng.normal(size=(1, 1)) * 10}
    p1, p2 = _params(), _params()
    train.sgd_step(p1, g, 0.1, 1.0)
    train.sgd_step(p2, {k: 7.0 * v for k, v in g.items()}, 0.1, 1.0)
    for k in p1:
        np.testing.assert_allclose(p1[k], p2[k], rtol=1e-14)


def test_sgd_errors():
    p = _params()
    with pytest.raises(FloatingPointError, match="'b'|b"):
        train.sgd_step(p, {"a": np.zeros(2), "b": np.array([[np.nan]])}, 0.1, 1.0)
    with pytest.raises(ValueError):
        train.sgd_step(p, {"a": np.zeros(3)}, 0.1, 1.0)
    with pytest.raises(KeyError):
        train.sgd_step(p, {"c": np.zeros(1)}, 0.1, 1.0)


def _utt(uid, T):
    return Utterance(uid, np.zeros((T, 1)), ["w"])


def test_make_batches():
    utts = [_utt("x", 5), _utt("y", 3), _utt("z", 9)]
    b = train.make_batches(utts, 2)
    assert [[u.T for u in bb] for bb in b] == [[3, 5], [9]]
    assert len(train.make_batches([_utt("x", 4)], 16)) == 1
    many = [_utt(f"u{i}", i % 7 + 1) for i in range(50)]
    o1 = [[u.id for u in bb] for bb in train.make_batches(many, 4, np.random.default_rng([0, 1]))]
    o2 = [[u.id for u in bb] for bb in train.make_batches(many, 4, np.random.default_rng([0, 1]))]
    assert o1 == o2
    assert sorted(map(tuple, o1)) == sorted(map(tuple, [[u.id for u in bb] for bb in train.make_batches(many, 4)]))


def test_train_config_validation():
    with pytest.raises(data.ConfigError):
        train.TrainConfig(beam_size=0)
    with pytest.raises(data.ConfigError):
        train.TrainConfig(lr=-1)
    assert train.TrainConfig().batch_size == 16 and train.TrainConfig().beam_size == 500
    assert len(train.TrainConfig().hash()) == 32


def test_checkpoint_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    params = {"x": rng.normal(size=(3, 4)), "s": np.array(2.5), "v": rng.normal(size=7)}
    cfg = train.TrainConfig()
    p = tmp_path / "c.ckpt"
    train.save_checkpoint(str(p), params, 12, cfg.text(), cfg.hash())
    back, epoch, meta, digest = train.load_checkpoint(str(p))
    assert epoch == 12 and meta == cfg.text() and digest == cfg.hash()
    assert set(back) == set(params)
    for k in params:
        assert back[k].shape == params[k].shape and back[k].tobytes() == params[k].tobytes()
    raw = p.read_bytes()
    assert raw[:8] == b"DBDCKPT\x00"
    assert struct.unpack_from("<I", raw, 8)[0] == 1


def test_checkpoint_errors(tmp_path):
    p = tmp_path / "c.ckpt"
    train.save_checkpoint(str(p), {"x": np.ones(3)}, 1, "a = 1\n")
    raw = p.read_bytes()
    for bad, msg in [
        (b"XXXXXXXX" + raw[8:], "not a checkpoint"),
        (raw[:20], "truncated"),
        (raw + b"\x00", "trailing"),
        (raw[:-4], "corrupt"),
        (raw[:8] + struct.pack("<I", 9) + raw[12:], "version"),
    ]:
        p.write_bytes(bad)
        with pytest.raises(train.CheckpointError, match=msg):
            train.load_checkpoint(str(p))


def _tiny_ds(noise=0.3, **kw):
    base = dict(noise=noise, n_train=24, n_valid=6, n_test=0, n_lm=100, n_words=10, seed=1)
    base.update(kw)
    return data.synth_generate(SynthConfig(**base))


def test_load_into_strictness():
    ds = _tiny_ds()
    cfg = train.TrainConfig(channels=(4,), kernels=(3,))
    m = train.Model.build(cfg, 8, len(ds.tokens))
    params = {k: v.copy() + 1.0 for k, v in m.params().items()}
    m2 = train.Model.build(cfg, 8, len(ds.tokens), PretrainedWrapper(ngram_train(ds.lm_corpus, 2), 0.3, 0.1))
    with pytest.raises(train.CheckpointError, match="lm.lambda"):
        train.load_into(m2, params, strict=True)
    train.load_into(m2, params, strict=False)
    assert float(m2.lm.lam) == 0.3
    np.testing.assert_array_equal(m2.trans.G, params["trans.G"])
    params["scorer.proj.W"] = params["scorer.proj.W"][:, :-1]
    with pytest.raises(train.CheckpointError, match="shape"):
        train.load_into(m2, params, strict=False)
    extra = {k: v.copy() for k, v in m.params().items()}
    extra["junk"] = np.zeros(1)
    with pytest.raises(train.CheckpointError, match="unexpected"):
        train.load_into(m, extra)


def test_build_lm(tmp_path):
    ds = _tiny_ds()
    cfg = train.TrainConfig(lm_lambda=0.4, lm_gamma=-0.2)
    assert isinstance(train.build_lm("zero", cfg, ds.lexicon), ZeroLM)
    assert isinstance(train.build_lm("bilinear", cfg, ds.lexicon), BilinearLM)
    arpa_save(ngram_train(ds.lm_corpus, 2), str(tmp_path / "x.arpa"))
    wr = train.build_lm("arpa:" + str(tmp_path / "x.arpa"), cfg, ds.lexicon)
    assert float(wr.lam) == 0.4 and float(wr.gamma) == -0.2
    with pytest.raises(data.ConfigError):
        train.build_lm("rnn", cfg, ds.lexicon)


def test_train_dbd_needs_start(tmp_path):
    ds = _tiny_ds()
    cfg = train.TrainConfig(channels=(4,), kernels=(3,), epochs=1, beam_size=5, decode_beam=5)
    m = train.Model.build(cfg, 8, len(ds.tokens))
    with pytest.raises(ValueError, match="start checkpoint"):
        train.train_dbd(cfg, ds.splits, m, ds.lexicon, str(tmp_path))
    cfg.from_scratch = True
    hist = train.train_dbd(cfg, ds.splits, m, ds.lexicon, str(tmp_path))
    assert len(hist) == 1


def test_divergence_guard_names_utterance(tmp_path):
    ds = _tiny_ds()
    bad = ds.splits["train"][3]
    bad.feats[0, 0] = np.nan
    cfg = train.TrainConfig(channels=(4,), kernels=(3,), asg_epochs=1)
    m = train.Model.build(cfg, 8, len(ds.tokens))
    with pytest.raises(train.TrainingDiverged) as e:
        train.train_asg(cfg, ds.splits, m, ds.lexicon, str(tmp_path))
    assert e.value.utt_id == bad.id


def test_unalignable_utterances_skipped(tmp_path, caplog):
    ds = _tiny_ds()
    u = ds.splits["train"][0]
    u.feats = u.feats[:1]
    cfg = train.TrainConfig(channels=(4,), kernels=(3,), asg_epochs=1, log_wallclock=False)
    m = train.Model.build(cfg, 8, len(ds.tokens))
    hist = train.train_asg(cfg, ds.splits, m, ds.lexicon, str(tmp_path))
    assert hist[0]["skipped"] == 1
    assert "unalignable" in caplog.text


def test_metrics_file_and_checkpoints(tmp_path):
    ds = _tiny_ds()
    cfg = train.TrainConfig(channels=(4,), kernels=(3,), asg_epochs=2, log_wallclock=False)
    m = train.Model.build(cfg, 8, len(ds.tokens))
    train.train_asg(cfg, ds.splits, m, ds.lexicon, str(tmp_path))
    lines = (tmp_path / "metrics.tsv").read_text().splitlines()
    assert lines[0] == "epoch\tloss\ttrain_wer\tvalid_cer\tvalid_wer\twallclock_s"
    assert len(lines) == 3 and all(len(l.split("\t")) == 6 for l in lines)
    assert lines[1].split("\t")[-1] == "0.00"
    for name in ("epoch001.ckpt", "epoch002.ckpt", "last.ckpt"):
        assert (tmp_path / name).exists()
    params, epoch, _, _ = train.load_checkpoint(str(tmp_path / "last.ckpt"))
    assert epoch == 2
    assert all(params[k].tobytes() == v.tobytes() for k, v in m.params().items())


def test_asg_then_dbd_learns_and_is_deterministic(tmp_path):
    ds = _tiny_ds(noise=0.0, n_train=60)
    cfg = train.TrainConfig(channels=(8,), kernels=(3,), asg_epochs=6, log_wallclock=False)

    def run(tag):
        m = train.Model.build(cfg, 8, len(ds.tokens))
        h = train.train_asg(cfg, ds.splits, m, ds.lexicon, str(tmp_path / tag))
        return h, (tmp_path / tag / "metrics.tsv").read_bytes()

    h1, m1 = run("a")
    _, m2 = run("b")
    assert m1 == m2
    assert h1[-1]["loss"] < h1[0]["loss"]
    dcfg = train.TrainConfig(channels=(8,), kernels=(3,), epochs=2, beam_size=20, decode_beam=10,
                             lm="bilinear", log_wallclock=False)
    dm = train.Model.build(dcfg, 8, len(ds.tokens), train.build_lm("bilinear", dcfg, ds.lexicon))
    before = dm.lm.M.copy()
    hd = train.train_dbd(dcfg, ds.splits, dm, ds.lexicon, str(tmp_path / "d"), start=str(tmp_path / "a" / "last.ckpt"))
    assert [h["epoch"] for h in hd] == [7, 8]
    assert not np.array_equal(before, dm.lm.M)


def test_freeze_lm_keeps_weights(tmp_path):
    ds = _tiny_ds()
    arpa_save(ngram_train(ds.lm_corpus, 2), str(tmp_path / "x.arpa"))
    cfg = train.TrainConfig(channels=(4,), kernels=(3,), epochs=1, beam_size=10, decode_beam=5,
                            lm="arpa:" + str(tmp_path / "x.arpa"), lm_lambda=0.5, freeze_lm=True, from_scratch=True)
    m = train.Model.build(cfg, 8, len(ds.tokens), train.build_lm(cfg.lm, cfg, ds.lexicon))
    train.train_dbd(cfg, ds.splits, m, ds.lexicon, str(tmp_path / "o"))
    assert float(m.lm.lam) == 0.5 and float(m.lm.gamma) == 0.0


def test_grid_search_restores_lm():
    ds = _tiny_ds()
    cfg = train.TrainConfig(channels=(4,), kernels=(3,))
    m = train.Model.build(cfg, 8, len(ds.tokens))
    from diffbeam.lexicon import Trie

    lm0 = m.lm
    best, lam, gam, table = train.grid_search_lm(m, ds.splits["valid"], Trie(ds.lexicon),
                                                 ngram_train(ds.lm_corpus, 2), [0.0, 1.0], [0.0, 1.0], beam=5)
    assert m.lm is lm0 and len(table) == 4
    assert best == min(w for _, _, w in table)
