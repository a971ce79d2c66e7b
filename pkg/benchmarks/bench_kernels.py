"""Compare the compiled and pure-Python kernel backends.

Usage: python benchmarks/bench_kernels.py [--frames 2000] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from lvdsk import _kernels
from lvdsk.lvem import EmConfig, init_flat, run_em_table
from lvdsk.mixer import random_bank


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    bank = random_bank(10, 10, dim=38, n_components=8, seed=0, min_dist=0.5)
    rng = np.random.default_rng(0)
    X = rng.normal(0, 3, (args.frames, 38))
    backends = _kernels.available_backends()
    print(f"backends available: {', '.join(sorted(backends))}; T={args.frames}, M=N=10, K=8, D=38")

    cases = {
        "bank_loglik": lambda impl: _kernels.bank_loglik(X, *bank.stacked(), impl=impl),
    }
    table = _kernels.bank_loglik(X, *bank.stacked()).reshape(args.frames, 10, 10)
    cases["log_posterior"] = lambda impl: _kernels.log_posterior(table.reshape(args.frames, 100), impl=impl)

    for name, fn in cases.items():
        times = {b: min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
                 for b, impl in sorted(backends.items())}
        line = "  ".join(f"{b} {t * 1e3:8.2f} ms" for b, t in times.items())
        if len(times) == 2:
            line += f"  speedup x{times['python'] / times['cython']:.1f}"
        print(f"{name:14s} {line}")

    em_times = {}
    for b, impl in sorted(backends.items()):
        _kernels._impl = impl  # run_em_table dispatches through the module default
        em_times[b] = min(timeit.repeat(
            lambda: run_em_table(table, init_flat(10, 10), EmConfig(max_iters=50, rel_tol=0.0)),
            number=1, repeat=args.repeat))
    _kernels._impl = backends.get(_kernels.BACKEND)
    print(f"{'run_em (50 it)':14s} " + "  ".join(f"{b} {t * 1e3:8.2f} ms" for b, t in em_times.items()))


if __name__ == "__main__":
    main()
