"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--size N] [--repeat R]

Each kernel is run on the same inputs through both backends; the outputs
are checked for bit-equality before timings are reported.
"""
import argparse
import sys
import timeit

import numpy as np

from mergeforge import _pykernels

try:
    from mergeforge import _ckernels
except ImportError:
    _ckernels = None


def cases(n: int, rng: np.random.Generator):
    a = rng.standard_normal(n)
    b = rng.standard_normal(n)
    f32 = a.astype(np.float32)
    return {
        "dot_norms": lambda k: k.dot_norms(a, b),
        "axpby": lambda k: k.axpby(a, b, 0.3, 0.7),
        "f32_to_bf16_bits": lambda k: k.f32_to_bf16_bits(f32),
        "f64_to_bf16_bits": lambda k: k.f64_to_bf16_bits(a),
    }


def same(x, y, n: int) -> bool:
    if isinstance(x, tuple):
        return all(same(p, q, n) for p, q in zip(x, y))
    if isinstance(x, np.ndarray):
        return x.dtype == y.dtype and x.tobytes() == y.tobytes()
    # reductions sum in a different order; allow the usual n*eps bound
    return abs(x - y) <= n * np.finfo(float).eps * max(abs(x), abs(y), 1.0)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=4_000_000)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the numpy fallback is available", file=sys.stderr)
        return 1

    rng = np.random.default_rng(0)
    print(f"{'kernel':<18} {'numpy ms':>10} {'compiled ms':>12} {'speedup':>8}  match")
    for name, run in cases(args.size, rng).items():
        py_t = min(timeit.repeat(lambda: run(_pykernels), number=1, repeat=args.repeat)) * 1e3
        c_t = min(timeit.repeat(lambda: run(_ckernels), number=1, repeat=args.repeat)) * 1e3
        ok = same(run(_pykernels), run(_ckernels), args.size)
        print(f"{name:<18} {py_t:>10.2f} {c_t:>12.2f} {py_t / c_t:>7.2f}x  {'yes' if ok else 'NO'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
