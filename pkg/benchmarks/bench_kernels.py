#!/usr/bin/env python3
"""Time every hot kernel under the numba and the numpy backend.

Prints one row per kernel (best and mean wall time per call, speed-up and
the largest absolute difference between the two outputs). ``--json PATH``
also writes the raw numbers.

    python3 benchmarks/bench_kernels.py --runs 20
"""

import argparse
import json
import sys
import time

import numpy as np

from ptal.kernels import get_backend


def make_cases(rng, T, D, H, n_params, n_preds, n_gts):
    x = rng.normal(size=(T, D))
    W = rng.normal(size=(3, D, H)) * 0.1
    b = rng.normal(size=H)
    gy = rng.normal(size=(T, H))
    curve = rng.random(T)
    starts = rng.integers(0, 900, size=n_preds)
    g_starts = rng.integers(0, 900, size=n_gts)
    match_args = (
        starts, starts + rng.integers(1, 100, size=n_preds), rng.integers(0, 10, size=n_preds),
        g_starts, g_starts + rng.integers(1, 100, size=n_gts), rng.integers(0, 10, size=n_gts), 0.5,
    )
    grads = rng.normal(size=n_params)

    def adam(k):
        p, m, v = np.zeros(n_params), np.zeros(n_params), np.zeros(n_params)
        k.adam_update(p, grads, m, v, 1e-4, 0.9, 0.999, 1e-8, 1)
        return p

    return {
        "conv1d_forward": lambda k: k.conv1d_forward(x, W, b),
        "conv1d_backward": lambda k: k.conv1d_backward(x, W, gy),
        "adam_update": adam,
        "peak_mask": lambda k: k.peak_mask(curve, 0.15),
        "greedy_match": lambda k: k.greedy_match(*match_args),
        "linear_resample": lambda k: k.linear_resample(x, 64),
    }


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(o).astype(np.float64) for o in out])
    return np.ravel(out).astype(np.float64)


def time_call(fn, warmup, runs):
    for _ in range(warmup):
        out = fn()
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), sum(times) / len(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--T", type=int, default=256)
    ap.add_argument("--D", type=int, default=32)
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--params", type=int, default=25_000)
    ap.add_argument("--preds", type=int, default=400)
    ap.add_argument("--gts", type=int, default=200)
    ap.add_argument("--warmup", type=int, default=3)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", dest="json_path")
    args = ap.parse_args(argv)

    cases = make_cases(np.random.default_rng(args.seed), args.T, args.D, args.hidden,
                       args.params, args.preds, args.gts)
    backends = {"numba": get_backend("numba"), "numpy": get_backend("numpy")}
    rows = []
    print(f"{'kernel':<18}{'numba best':>12}{'numpy best':>12}{'speed-up':>10}{'max |diff|':>12}")
    for name, case in cases.items():
        res = {b: time_call(lambda: case(k), args.warmup, args.runs) for b, k in backends.items()}
        diff = float(np.max(np.abs(_flat(res["numba"][2]) - _flat(res["numpy"][2]))))
        row = {
            "kernel": name,
            "numba_best_s": res["numba"][0], "numba_mean_s": res["numba"][1],
            "numpy_best_s": res["numpy"][0], "numpy_mean_s": res["numpy"][1],
            "speedup": res["numpy"][0] / res["numba"][0],
            "max_abs_diff": diff,
        }
        rows.append(row)
        print(f"{name:<18}{row['numba_best_s'] * 1e6:>10.1f}us{row['numpy_best_s'] * 1e6:>10.1f}us"
              f"{row['speedup']:>9.1f}x{diff:>12.2e}")
    if args.json_path:
        with open(args.json_path, "w") as fh:
            json.dump({"args": vars(args), "results": rows}, fh, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
