import os
import runpy
import sys

BENCH = os.path.join(os.path.dirname(__file__), os.pardir, "benchmarks", "bench_kernels.py")


def test_benchmark_runs_and_backends_agree(capsys, monkeypatch):
    monkeypatch.setattr(sys, "argv", ["bench_kernels.py", "--T", "20", "--L", "6", "--beam", "20", "--repeat", "1"])
    runpy.run_path(BENCH, run_name="__main__")
    out = capsys.readouterr().out
    for name in ("target_forward", "full_backward", "lattice_forward", "lattice_adjoint"):
        assert name in out
