#!/usr/bin/env python3
"""Time the single-pass self-similarity layer against the per-patch
reference at several sizes and pattern counts."""

import argparse
import time

import numpy as np

from selfsim import similarity
from selfsim.selfcheck import random_conv_stack


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[24, 40, 64])
    ap.add_argument("--patterns", type=int, nargs="+", default=[16, 64])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'size':>6} {'patterns':>9} {'reference_s':>12} {'efficient_s':>12} {'speedup':>9}")
    for size in args.sizes:
        for num in args.patterns:
            rng = np.random.default_rng(args.seed)
            image = rng.uniform(0.0, 1.0, size=(3, size, size))
            layers = random_conv_stack(rng, 3, 1)
            offs = rng.integers(-3, 4, size=(num, 2)).astype(np.float64)
            offt = rng.integers(-3, 4, size=(num, 2)).astype(np.float64)

            t0 = time.perf_counter()
            act = similarity.run_conv_stack(image, layers, True)
            similarity.self_dissimilarity(act, offs, offt, mode="integer-nearest")
            t_eff = time.perf_counter() - t0

            t0 = time.perf_counter()
            similarity.self_dissimilarity_reference(image, offs, offt, layers, True)
            t_ref = time.perf_counter() - t0
            print(f"{size:>6} {num:>9} {t_ref:>12.3f} {t_eff:>12.4f} {t_ref / max(t_eff, 1e-9):>8.0f}x")


if __name__ == "__main__":
    main()
