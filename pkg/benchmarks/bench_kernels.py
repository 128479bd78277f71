"""Compiled vs pure-Python kernel timings.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from embedforge import kernels


def cases(rng):
    tokens = [f"tok{i}".encode() for i in rng.integers(0, 50_000, size=20_000)]
    sims = rng.uniform(-1, 1, size=(256, 512))
    labels = np.arange(256, dtype=np.int64)
    rel = (rng.random(1000) < 0.1).astype(np.int8)
    scores = np.sort(np.round(rng.random(5000), 2))[::-1].copy()
    lab = (rng.random(5000) < 0.4).astype(np.int8)
    gains = rng.integers(0, 4, size=1000).astype(np.float64)
    return {
        "hash_buckets (20k tokens)": lambda k: k.hash_buckets(tokens, 4096),
        "infonce_loss_grad (256x512)": lambda k: k.infonce_loss_grad(sims, labels, 0.05),
        "ranked_average_precision (1k)": lambda k: k.ranked_average_precision(rel),
        "tied_average_precision (5k)": lambda k: k.tied_average_precision(scores, lab),
        "dcg_at_k (1k, k=100)": lambda k: k.dcg_at_k(gains, 100),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the python backend only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s}" + "".join(f"{name:>14s}" for name in backends) + "   speedup")
    for label, fn in cases(rng).items():
        times = {}
        for name, mod in backends.items():
            n = 3
            times[name] = min(timeit.repeat(lambda: fn(mod), number=n, repeat=args.repeat)) / n
        row = f"{label:32s}" + "".join(f"{times[n] * 1e3:12.3f}ms" for n in backends)
        if "compiled" in times:
            row += f"   {times['python'] / times['compiled']:7.1f}x"
        print(row)


if __name__ == "__main__":
    main()
