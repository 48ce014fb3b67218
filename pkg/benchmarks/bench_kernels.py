"""Time the compiled and pure-Python kernel backends on identical inputs.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel and backend with the best wall time and the
speedup of the compiled backend. Exits nonzero if the backends disagree.
"""

import argparse
import sys
import timeit

import numpy as np

from polytraj import kernels


def _nll_inputs(rng, R=64, K=12, T=40):
    means = rng.normal(size=(R, K, 2, T)) * 3
    log_sigma = rng.normal(size=(R, K, 2, T)) * 0.5
    logits = rng.normal(size=(R, K))
    log_pi = logits - np.log(np.exp(logits).sum(1, keepdims=True))
    gt = rng.normal(size=(R, 2, T)) * 3
    return means, log_sigma, log_pi, gt, np.array([1.0, 3.0])


def _grid_inputs(rng, n=20000):
    return np.column_stack([rng.uniform(-65, 65, n), rng.uniform(-12, 12, n)])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = {}
    for name in ("cython", "python"):
        try:
            backends[name] = kernels.get_backend(name)
        except ImportError as exc:
            print(f"{name}: unavailable ({exc})")
    if "python" not in backends:
        return 1

    rng = np.random.default_rng(args.seed)
    cases = {
        "mixture_nll": ("mixture_nll", _nll_inputs(rng)),
        "lidar_grid": ("lidar_grid", (_grid_inputs(rng),)),
    }
    status = 0
    for label, (fn_name, inputs) in cases.items():
        times, outputs = {}, {}
        for name, mod in backends.items():
            fn = getattr(mod, fn_name)
            outputs[name] = fn(*inputs)
            times[name] = min(timeit.repeat(lambda: fn(*inputs), number=1, repeat=args.repeat))
            print(f"{label:12s} {name:7s} {times[name] * 1e3:9.3f} ms")
        if "cython" in times:
            print(f"{label:12s} speedup {times['python'] / times['cython']:8.2f}x")
            for a, b in zip(outputs["cython"], outputs["python"]):
                if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
                    print(f"{label}: backends disagree", file=sys.stderr)
                    status = 1
    return status


if __name__ == "__main__":
    sys.exit(main())
