"""Compiled vs numpy convolution kernels.

Times forward, input-gradient and weight-gradient kernels on layer shapes
from the desk and paper presets, then one full desk-scale training step
with each backend swapped in.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from adapose.diffcore import Tape, kernels
from adapose.losses import ConsistencyConfig, total_objective
from adapose.model import PRESETS, init_params

# (label, x shape, w shape, stride, pad)
LAYERS = [
    ("desk stem", (16, 3, 30, 32), (8, 3, 3, 3), 2, 1),
    ("desk block", (16, 16, 8, 8), (32, 16, 3, 3), 2, 1),
    ("desk 1x1", (32, 32, 4, 4), (32, 32, 1, 1), 1, 0),
    ("paper block", (2, 128, 34, 34), (256, 128, 3, 3), 2, 1),
]


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_layers(backends, repeat):
    rng = np.random.default_rng(0)
    print(f"{'layer':<12} {'op':<8}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for label, xs, ws, stride, pad in LAYERS:
        x = rng.normal(size=xs)
        w = rng.normal(size=ws)
        y = kernels.conv2d_forward(x, w, stride, pad, impl="python")
        g = rng.normal(size=y.shape)
        ops = {
            "fwd": lambda impl: kernels.conv2d_forward(x, w, stride, pad, impl=impl),
            "dx": lambda impl: kernels.conv2d_backward_input(g, w, xs, stride, pad, impl=impl),
            "dw": lambda impl: kernels.conv2d_backward_weight(g, x, ws, stride, pad, impl=impl),
        }
        for op, fn in ops.items():
            times = {name: best_of(lambda: fn(mod), repeat) for name, mod in backends.items()}
            line = f"{label:<12} {op:<8}" + "".join(f"{1e3 * t:>10.2f}ms" for t in times.values())
            if "ext" in times:
                line += f"{times['python'] / times['ext']:>9.1f}x"
            print(line)


def bench_step(backends, repeat):
    scale = PRESETS["desk"]
    rng = np.random.default_rng(1)
    xs = np.abs(rng.normal(size=(16,) + scale.input_shape))
    xt = np.abs(rng.normal(loc=0.2, size=(16,) + scale.input_shape))
    ys = rng.uniform(100, 400, size=(16, 17, 2))
    params = init_params(scale, seed=0, dtype=np.float32)
    params.set_normalization(ys.reshape(16, -1).mean(0), 30.0)

    def step():
        with Tape() as tape:
            total, _ = total_objective((xs, ys), xt, params, ConsistencyConfig(r1=0.5, r2=0.5))
        tape.backward(total)
        tape.clear()
        params.zero_grad()

    original = kernels._impl
    try:
        for name, mod in backends.items():
            kernels._impl = mod
            print(f"desk adapose step, batch 16+16, {name:<6}: {1e3 * best_of(step, repeat):8.1f}ms")
    finally:
        kernels._impl = original


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    print(f"import-time backend: {kernels.BACKEND}; available: {', '.join(backends)}\n")
    bench_layers(backends, args.repeat)
    print()
    bench_step(backends, args.repeat)


if __name__ == "__main__":
    main()
