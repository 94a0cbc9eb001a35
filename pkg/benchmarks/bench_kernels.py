"""Time the dense-layer kernels of every available backend.

    python3 benchmarks/bench_kernels.py [--batch 64] [--length 5000] [--repeat 3]

Runs one forward and one backward sweep through the 8 dilated layers of the
embedder per repeat, reports the best time per backend and checks that the
backends agree.
"""

import argparse
import time

import numpy as np

from gazeband.kernels import BACKEND, backends

DILATIONS = (1, 2, 4, 8, 16, 32, 64, 1)
IN_CH, GROWTH, K = 2, 8, 3


def sweep(mod, x, weights, biases, upstream):
    B, _, T = x.shape
    buf = np.zeros((B, IN_CH + GROWTH * len(DILATIONS), T), x.dtype)
    buf[:, :IN_CH] = x
    t0 = time.perf_counter()
    for i, d in enumerate(DILATIONS):
        mod.dense_layer_forward(buf, IN_CH + GROWTH * i, weights[i], biases[i], d)
    t1 = time.perf_counter()
    dbuf = upstream.copy()
    grads = []
    for i in reversed(range(len(DILATIONS))):
        dw, db = np.zeros_like(weights[i]), np.zeros_like(biases[i])
        mod.dense_layer_backward(buf, dbuf, IN_CH + GROWTH * i, weights[i], DILATIONS[i], dw, db)
        grads.append(dw)
    t2 = time.perf_counter()
    return t1 - t0, t2 - t1, buf, dbuf


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--length", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    args = ap.parse_args()

    dt = np.dtype(args.dtype)
    rng = np.random.Generator(np.random.PCG64(0))
    x = rng.standard_normal((args.batch, IN_CH, args.length)).astype(dt)
    weights = [(rng.standard_normal((GROWTH, IN_CH + GROWTH * i, K)) * 0.3).astype(dt)
               for i in range(len(DILATIONS))]
    biases = [np.zeros(GROWTH, dt) for _ in DILATIONS]
    upstream = rng.standard_normal((args.batch, IN_CH + GROWTH * len(DILATIONS), args.length)).astype(dt)

    print(f"default backend: {BACKEND}; batch {args.batch} x {args.length} samples, {args.dtype}")
    results = {}
    for name, mod in backends().items():
        best_f = best_b = np.inf
        for _ in range(args.repeat):
            f, b, buf, dbuf = sweep(mod, x, weights, biases, upstream)
            best_f, best_b = min(best_f, f), min(best_b, b)
        results[name] = (buf, dbuf)
        print(f"{name:>8}: forward {best_f * 1e3:9.1f} ms   backward {best_b * 1e3:9.1f} ms")
    if len(results) > 1:
        (a, da), (b, db) = results.values()
        tol = 1e-3 if dt == np.float32 else 1e-9
        print(f"max |forward diff| {np.max(np.abs(a - b)):.2e}, max |backward diff| {np.max(np.abs(da - db)):.2e}"
              f" (tolerance {tol:g} relative)")
        assert np.allclose(a, b, rtol=tol, atol=tol) and np.allclose(da, db, rtol=tol, atol=tol * 10)


if __name__ == "__main__":
    main()
