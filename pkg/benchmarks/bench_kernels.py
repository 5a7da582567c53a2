"""Micro-benchmark comparing the compiled and NumPy kernel backends.

Each kernel family runs on training-shaped inputs (batch 128 by hidden 64
unless stated otherwise). The reported figure is the median per-call time
over --repeats timed loops after a warmup pass, and the speedup column is
the NumPy time divided by the compiled time. Without the extension built
the script still runs and reports the NumPy backend alone.

Usage: python3 benchmarks/bench_kernels.py [--batch 128] [--hidden 64]
       [--inner 200] [--repeats 7]
"""
import argparse
import statistics
import time

import numpy as np

from primed import kernels


def build_cases(rng, batch, hidden):
    """Returns (name, shape label, callable, fresh-args factory) rows.

    The factory is invoked once per timed loop so in-place kernels
    (adam_step) never accumulate across loops.
    """
    x = rng.standard_normal((batch, hidden))
    g = rng.standard_normal((batch, hidden))
    pos = np.abs(x) + 1e-3
    logits = rng.standard_normal((batch, 1))
    targets = (rng.random((batch, 1)) < 0.5).astype(np.float64)
    att = rng.standard_normal((batch, 20))
    att_g = rng.standard_normal((batch, 20))
    att_p = kernels.softmax_fw(att)
    sig_out = kernels.sigmoid_fw(x)
    tanh_out = np.tanh(x)
    exp_out = np.exp(np.clip(x, -5.0, 5.0))
    flat_n = hidden * hidden
    shape = f"{batch}x{hidden}"

    def const(*args):
        return lambda: args

    def adam_args():
        p = rng.standard_normal(flat_n)
        gr = rng.standard_normal(flat_n)
        m = np.zeros(flat_n)
        v = np.zeros(flat_n)
        return p, gr, m, v, 1e-4, 0.9, 0.999, 1e-8, 5e-4, 0.1, 0.001

    return [
        ("sigmoid_fw", shape, lambda a: kernels.sigmoid_fw(a[0]), const(x)),
        ("sigmoid_bw", shape, lambda a: kernels.sigmoid_bw(*a), const(g, sig_out)),
        ("tanh_fw", shape, lambda a: kernels.tanh_fw(a[0]), const(x)),
        ("tanh_bw", shape, lambda a: kernels.tanh_bw(*a), const(g, tanh_out)),
        ("relu_fw", shape, lambda a: kernels.relu_fw(a[0]), const(x)),
        ("relu_bw", shape, lambda a: kernels.relu_bw(*a), const(g, x)),
        ("exp_fw", shape, lambda a: kernels.exp_fw(a[0]), const(x)),
        ("exp_bw", shape, lambda a: kernels.exp_bw(*a), const(g, exp_out)),
        ("log_fw", shape, lambda a: kernels.log_fw(a[0]), const(pos)),
        ("log_bw", shape, lambda a: kernels.log_bw(*a), const(g, pos)),
        ("clip_fw", shape, lambda a: kernels.clip_fw(*a), const(x, -1.0, 1.0)),
        ("clip_bw", shape, lambda a: kernels.clip_bw(*a), const(g, x, -1.0, 1.0)),
        ("softmax_fw", f"{batch}x20", lambda a: kernels.softmax_fw(a[0]), const(att)),
        ("softmax_bw", f"{batch}x20", lambda a: kernels.softmax_bw(*a), const(att_g, att_p)),
        ("bce_logits_fw", f"{batch}x1", lambda a: kernels.bce_logits_fw(*a),
         const(logits, targets)),
        ("bce_logits_bw", f"{batch}x1", lambda a: kernels.bce_logits_bw(*a),
         const(g[:, :1], logits, targets)),
        ("sum_all", shape, lambda a: kernels.sum_all(a[0]), const(x)),
        ("adam_step", str(flat_n), lambda a: kernels.adam_step(*a), adam_args),
    ]


def time_case(call, make_args, inner, repeats):
    """Median seconds per call over `repeats` loops of `inner` calls."""
    call(make_args())
    samples = []
    for _ in range(repeats):
        args = make_args()
        start = time.perf_counter()
        for _ in range(inner):
            call(args)
        samples.append((time.perf_counter() - start) / inner)
    return statistics.median(samples)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=128)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--inner", type=int, default=200,
                        help="kernel calls per timed loop")
    parser.add_argument("--repeats", type=int, default=7,
                        help="timed loops per kernel (median reported)")
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    if "compiled" not in backends:
        print("compiled extension not built; timing the numpy backend only\n")

    rng = np.random.default_rng(0)
    cases = build_cases(rng, args.batch, args.hidden)

    results = {}
    for backend in backends:
        kernels.use_backend(backend)
        for name, shape, call, make_args in cases:
            results[(name, backend)] = time_case(call, make_args,
                                                 args.inner, args.repeats)

    header = f"{'kernel':<15} {'shape':<9} " + "".join(
        f"{b + ' (us)':>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    totals = dict.fromkeys(backends, 0.0)
    for name, shape, _, _ in cases:
        row = f"{name:<15} {shape:<9} "
        for backend in backends:
            t = results[(name, backend)]
            totals[backend] += t
            row += f"{t * 1e6:>14.2f}"
        if len(backends) == 2:
            ratio = results[(name, "numpy")] / results[(name, "compiled")]
            row += f"{ratio:>9.2f}x"
        print(row)
    print("-" * len(header))
    row = f"{'total':<15} {'':<9} "
    for backend in backends:
        row += f"{totals[backend] * 1e6:>14.2f}"
    if len(backends) == 2:
        row += f"{totals['numpy'] / totals['compiled']:>9.2f}x"
    print(row)


if __name__ == "__main__":
    main()
