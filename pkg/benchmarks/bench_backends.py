"""Time the compiled convolution kernels against the numpy fallback.

Runs each primitive (forward, input gradient, weight gradient) on a few
representative geometries, then a full forward/backward pass of the dual-state
model, once per available backend.

Usage: python benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from dualsr import backend
from dualsr.autodiff import Tensor, backward, mse_half
from dualsr.models import build_model

# (label, x shape, w shape, stride, pad)
GEOMETRIES = (
    ("embed 1->32 64px", (4, 1, 64, 64), (32, 1, 3, 3), 1, 1),
    ("body 32->32 32px", (4, 32, 32, 32), (32, 32, 3, 3), 1, 1),
    ("body 64->64 24px", (2, 64, 24, 24), (64, 64, 3, 3), 1, 1),
    ("down 32->32 s2", (4, 32, 64, 64), (32, 32, 3, 3), 2, 1),
)


def median_time(fn, repeats):
    fn()  # warm up caches and any lazy allocation
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    times.sort()
    return times[len(times) // 2]


def bench_primitives(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for label, xs, ws, stride, pad in GEOMETRIES:
        x = rng.standard_normal(xs)
        w = rng.standard_normal(ws)
        y = backend.corr_forward(x, w, stride, pad)
        gy = rng.standard_normal(y.shape)
        rows.append((label + " fwd",
                     median_time(lambda: backend.corr_forward(x, w, stride, pad), repeats)))
        rows.append((label + " dx",
                     median_time(lambda: backend.corr_input_grad(
                         gy, w, stride, pad, xs[2], xs[3]), repeats)))
        rows.append((label + " dw",
                     median_time(lambda: backend.corr_weight_grad(
                         x, gy, stride, pad, ws[2], ws[3]), repeats)))
    return rows


def bench_model_step(repeats):
    rng = np.random.default_rng(1)
    model = build_model("dsrn", scale=2, t_steps=4, width=32,
                        rng=np.random.default_rng(7))
    x = Tensor(rng.standard_normal((4, 1, 24, 24)))
    target = Tensor(rng.standard_normal((4, 1, 48, 48)))

    def step():
        model.params.zero_grads()
        out = model.forward(x)
        backward(mse_half(out.residual, target))

    return [("dsrn T=4 w=32 step", median_time(step, repeats))]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    names = backend.available_backends()
    if "cython" not in names:
        print("note: compiled extension not built, only the numpy fallback runs")

    results = {}
    for name in names:
        backend.set_backend(name)
        rows = bench_primitives(args.repeats) + bench_model_step(args.repeats)
        results[name] = dict(rows)
    backend.set_backend(names[-1] if "cython" not in names else "cython")

    labels = list(results[names[0]])
    width = max(len(s) for s in labels)
    header = f"{'case':<{width}}" + "".join(f"  {n:>10}" for n in names)
    if len(names) > 1:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for label in labels:
        line = f"{label:<{width}}"
        for n in names:
            line += f"  {results[n][label] * 1e3:9.2f}ms"
        if len(names) > 1:
            line += f"  {results['numpy'][label] / results['cython'][label]:7.2f}x"
        print(line)


if __name__ == "__main__":
    main()
