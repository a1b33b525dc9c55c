"""Time the NumPy and compiled kernel backends on the layer shapes the models use.

    python benchmarks/bench_kernels.py --batch 32 --window 10 --repeat 20
"""
import argparse
import statistics
import time

import numpy as np

from patchsense.models import build_conv1d, build_gru, build_lstm
from patchsense.nn import available_backends, use_backend


def _time(fn, repeat):
    fn()  # warm-up
    samples = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t)
    return statistics.median(samples)


def cases(kernels, batch, length, rng):
    x = rng.normal(size=(batch, length, 64))
    w, b = rng.normal(size=(2, 64, 64)) * 0.1, np.zeros(64)
    dy_conv = rng.normal(size=(batch, length - 1, 64))
    pooled, idx = kernels.maxpool1d_forward(np.ascontiguousarray(dy_conv), 2)
    lw = [rng.normal(size=s) * 0.1 for s in ((64, 400), (100, 400), (400,))]
    gw = [rng.normal(size=s) * 0.1 for s in ((64, 300), (100, 300), (300,), (300,))]
    dh = rng.normal(size=(batch, length, 100))
    lstm_state = kernels.lstm_forward(x, *lw)
    gru_state = kernels.gru_forward(x, *gw)
    return {
        "conv1d fwd+bwd": lambda: (kernels.conv1d_forward(x, w, b), kernels.conv1d_backward(x, w, dy_conv)),
        "maxpool fwd+bwd": lambda: (
            kernels.maxpool1d_forward(dy_conv, 2),
            kernels.maxpool1d_backward(pooled, idx, length - 1, 2),
        ),
        "lstm(100) fwd+bwd": lambda: (
            kernels.lstm_forward(x, *lw),
            kernels.lstm_backward(x, lw[0], lw[1], *lstm_state, dh),
        ),
        "gru(100) fwd+bwd": lambda: (
            kernels.gru_forward(x, *gw),
            kernels.gru_backward(x, gw[0], gw[1], *gru_state, dh),
        ),
    }


def model_steps(batch, length, rng):
    x = rng.normal(size=(batch, length, 64))
    y = (rng.random(batch) > 0.5).astype(float)
    out = {}
    for name, builder in (("conv1d", build_conv1d), ("lstm", build_lstm), ("gru", build_gru)):
        graph = builder(length, seed=0)
        drop = np.random.default_rng(0)
        out[f"{name} train step"] = lambda g=graph, d=drop: g.loss_and_grad(x, y, rng=d)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--window", type=int, default=10, help="W; sequences have 2W+1 events")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    length = 2 * args.window + 1
    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the NumPy backend is timed")
    results = {}
    for name, kernels in backends.items():
        rng = np.random.default_rng(0)
        for label, fn in cases(kernels, args.batch, length, rng).items():
            results.setdefault(label, {})[name] = _time(fn, args.repeat)
        with use_backend(name):
            for label, fn in model_steps(args.batch, length, np.random.default_rng(0)).items():
                results.setdefault(label, {})[name] = _time(fn, args.repeat)

    names = list(backends)
    print(f"batch {args.batch}, length {length}, median of {args.repeat} runs (ms)")
    print(f"{'case':22s}" + "".join(f"{n:>10s}" for n in names) + ("   speedup" if len(names) > 1 else ""))
    for label, row in results.items():
        line = f"{label:22s}" + "".join(f"{row[n] * 1e3:10.3f}" for n in names)
        if len(names) > 1:
            line += f"{row['numpy'] / row['cython']:9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
