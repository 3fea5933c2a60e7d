"""Time the compiled DP kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--T 200] [--repeat 5]

Each kernel runs on identical inputs in both backends; outputs are checked
for agreement before timing. The lattice kernels use a lattice recorded by a
real beam-500 decoder pass over a synthetic utterance.
"""

import argparse
import timeit

import numpy as np

from diffbeam import _kernels_py, data, dbd
from diffbeam.align import TransitionMatrix
from diffbeam.lexicon import Trie
from diffbeam.lm import ZeroLM

try:
    from diffbeam import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def make_inputs(T, D, L, seed):
    rng = np.random.default_rng(seed)
    em = rng.normal(size=(T, D))
    G = rng.normal(size=(D, D))
    start = rng.normal(size=D)
    y = rng.integers(0, D, size=L)
    for i in range(1, L):
        while y[i] == y[i - 1]:
            y[i] = rng.integers(0, D)
    return em, G, start, y.astype(np.int64)


def make_lattice(beam, seed):
    ds = data.synth_generate(data.SynthConfig(n_train=1, n_valid=0, n_test=0, n_lm=1, seed=seed))
    u = ds.splits["train"][0]
    rng = np.random.default_rng(seed)
    D = len(ds.tokens)
    em = rng.normal(size=(u.T, D))
    trans = TransitionMatrix(rng.normal(scale=0.1, size=(D, D)), np.zeros(D))
    y = ds.lexicon.target_tokens(u.words)
    rep, lat = dbd.dbd_forward(em, trans, Trie(ds.lexicon), ZeroLM(), y, beam)
    seed_vec = np.zeros(lat.n_nodes)
    seed_vec[lat.sink_beam] = 1.0
    return lat, seed_vec


def bench(name, fn_py, fn_c, args, repeat):
    out_py = fn_py(*args)
    t_py = min(timeit.repeat(lambda: fn_py(*args), number=1, repeat=repeat))
    if fn_c is None:
        print(f"{name:18s} python {t_py * 1e3:9.3f} ms   cython      n/a")
        return
    out_c = fn_c(*args)
    a = out_py if not isinstance(out_py, tuple) else out_py[0]
    b = out_c if not isinstance(out_c, tuple) else out_c[0]
    if not np.allclose(np.asarray(a), np.asarray(b), atol=1e-9, equal_nan=True):
        raise AssertionError(f"{name}: backends disagree")
    t_c = min(timeit.repeat(lambda: fn_c(*args), number=1, repeat=repeat))
    print(f"{name:18s} python {t_py * 1e3:9.3f} ms   cython {t_c * 1e3:9.3f} ms   speedup {t_py / t_c:7.1f}x")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=200)
    ap.add_argument("--D", type=int, default=30)
    ap.add_argument("--L", type=int, default=60)
    ap.add_argument("--beam", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    em, G, start, y = make_inputs(args.T, args.D, args.L, args.seed)
    py, c = _kernels_py, _kernels_c
    get = (lambda n: getattr(c, n)) if c is not None else (lambda n: None)
    print(f"T={args.T} D={args.D} L={args.L}")
    bench("target_forward", py.target_forward, get("target_forward"), (em, G, start, y), args.repeat)
    bench("target_backward", py.target_backward, get("target_backward"), (em, G, y), args.repeat)
    bench("target_viterbi", py.target_viterbi, get("target_viterbi"), (em, G, start, y), args.repeat)
    bench("full_forward", py.full_forward, get("full_forward"), (em, G, start), args.repeat)
    bench("full_backward", py.full_backward, get("full_backward"), (em, G), args.repeat)

    lat, seed_vec = make_lattice(args.beam, args.seed)
    print(f"lattice: {lat.n_nodes} nodes, {lat.n_edges} edges (beam {args.beam}, T={lat.T})")
    fwd_args = (lat.n_nodes, lat.src, lat.dst, lat.escore, lat.level_ptr)
    bench("lattice_forward", py.lattice_forward, get("lattice_forward"), fwd_args, args.repeat)
    adj_args = (lat.alpha, lat.src, lat.dst, lat.escore, lat.level_ptr, seed_vec)
    bench("lattice_adjoint", py.lattice_adjoint, get("lattice_adjoint"), adj_args, args.repeat)


if __name__ == "__main__":
    main()
