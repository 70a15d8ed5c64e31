"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 32] [--width 40] [--csv out.csv]

Every case is checked for agreement between backends (1e-12) before it is
timed, so a fast but wrong kernel shows up as an error, not a speedup.
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from gopforge import _backend
from gopforge.operators import OperatorSet

OPSETS = [
    ("multiplication", "summation", "sigmoid"),
    ("gaussian", "summation", "tanh"),
    ("exponential", "1-correlation", "relu"),
    ("dog", "2-correlation", "tanh"),
    ("harmonic", "maximum", "sigmoid"),
]


def gop_cases(batch, width):
    g = np.random.default_rng(0)
    y = g.normal(size=(batch, width))
    w = g.uniform(-0.5, 0.5, (width, width))
    b = g.uniform(-0.1, 0.1, width)
    up = g.normal(size=(batch, width))
    for names in OPSETS:
        s = OperatorSet.from_names(*names)
        ops = (int(s.nodal), int(s.pool), int(s.act))
        label = "/".join(names)

        def fwd(k, ops=ops):
            return k.gop_forward(y, w, b, *ops)

        def bwd(k, ops=ops):
            _, z, x = k.gop_forward(y, w, b, *ops)
            return k.gop_backward(y, w, z, x, up, *ops)

        yield f"forward  {label}", fwd
        yield f"fwd+bwd  {label}", bwd


def eig_case(n):
    a = np.random.default_rng(1).normal(size=(n, n))
    s = a + a.T

    def run(k):
        m, v = s.copy(), np.eye(n)
        k.jacobi_eig(m, v, 100)
        return np.diag(m).copy(), v

    return f"jacobi   {n}x{n}", run


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--width", type=int, default=40)
    ap.add_argument("--eig", type=int, default=40)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)

    backends = _backend.available()
    if "cython" not in backends:
        print("compiled backend not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    py, cy = _backend.get("python"), _backend.get("cython")
    rows = []
    cases = list(gop_cases(args.batch, args.width)) + [eig_case(args.eig)]
    print(f"{'case':48s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for label, fn in cases:
        if not agree(fn(py), fn(cy)):
            print(f"{label}: backends disagree", file=sys.stderr)
            return 2
        times = {}
        for name, k in (("python", py), ("cython", cy)):
            number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(k), number=1), 1e-6)))
            best = min(timeit.repeat(lambda: fn(k), number=number, repeat=args.repeat)) / number
            times[name] = best * 1e3
        speedup = times["python"] / times["cython"]
        rows.append([label, f"{times['python']:.4f}", f"{times['cython']:.4f}", f"{speedup:.2f}"])
        print(f"{label:48s} {times['python']:10.3f} {times['cython']:10.3f} {speedup:7.2f}x")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "python_ms", "cython_ms", "speedup"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
