"""Compiled kernels versus the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--skip-end-to-end]

Prints per-kernel best-of-N timings, the speedup, and the largest absolute
disagreement between the two backends on identical inputs.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from quantldp import _kernels_py

try:
    from quantldp import _kernels as _compiled
except ImportError:
    _compiled = None


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(rng):
    n = 1_000_000
    y = rng.normal(scale=3.0, size=n)
    u = rng.random(n)
    rounds, batch, dim = 2000, 2, 4
    A = rng.normal(scale=0.45, size=(rounds, batch, dim))
    b = np.where(rng.random((rounds, batch)) < 0.5, -1.0, 1.0)
    theta = rng.normal(size=dim)
    targets = rng.normal(size=(rounds, batch, dim))
    corpus = rng.normal(size=(20_000, dim))
    labels = np.where(rng.random(20_000) < 0.5, -1.0, 1.0)

    def quantize(k):
        def run():
            out = np.empty_like(y)
            k.quantize_into(y, 0.37, u, out)
            return out
        return run

    def sweep(fn):
        # what a T-round simulation does: one online gradient per round, growing history
        def run():
            acc = np.zeros(dim)
            for t in range(1, rounds + 1, 10):
                acc += fn(t)
            return acc
        return run

    return {
        "quantize_into (1e6 scalars)": quantize,
        "logistic_online_grad (sweep to 2000 rounds)":
            lambda k: sweep(lambda t: k.logistic_online_grad(A, b, theta, t)),
        "quadratic_online_grad (sweep to 2000 rounds)":
            lambda k: sweep(lambda t: k.quadratic_online_grad(targets, theta, t)),
        "logistic_losses (2e4 points)": lambda k: (lambda: k.logistic_losses(corpus, labels, theta)),
    }


def end_to_end(config, horizon):
    code = ("import time;from quantldp import config, engine, _backend;"
            f"c=config.load({config!r}).with_overrides(horizon={horizon});"
            "t=time.perf_counter();engine.run(c.run);"
            "print(_backend.BACKEND, time.perf_counter()-t)")
    rows = []
    for pure in ("0", "1"):
        env = dict(os.environ, QUANTLDP_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        rows.append((backend, float(secs)))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args()

    if _compiled is None:
        print("compiled extension not built; only the fallback can be timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':48s} {'python [s]':>11s} {'compiled [s]':>13s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, make in cases(rng).items():
        tp, outp = best_of(make(_kernels_py), args.repeat)
        if _compiled is None:
            print(f"{name:48s} {tp:11.4f} {'-':>13s} {'-':>8s} {'-':>11s}")
            continue
        tc, outc = best_of(make(_compiled), args.repeat)
        diff = float(np.max(np.abs(np.asarray(outp) - np.asarray(outc))))
        print(f"{name:48s} {tp:11.4f} {tc:13.4f} {tp / tc:8.1f} {diff:11.2e}")

    if not args.skip_end_to_end and _compiled is not None:
        from quantldp.problems import DATA_DIR
        for cfg, T in ((DATA_DIR / "five_node.toml", 1000), (DATA_DIR / "five_node_quadratic.toml", 2000)):
            rows = dict(end_to_end(str(cfg), T))
            print(f"end-to-end {cfg.name} T={T}: python {rows['python']:.2f}s, compiled {rows['compiled']:.2f}s, "
                  f"speedup {rows['python'] / rows['compiled']:.1f}")


if __name__ == "__main__":
    main()
