"""Ablation over descriptor variants on the synthetic layout-stress split.

Run: python3 demos/ablation.py [n-seeds]
Each seed takes about two minutes on one CPU.
"""

import sys

import numpy as np

from s2ica.pipeline import run_ablation

VARIANTS = ("combined", "baseline", "modified", "no_pyramid", "mean_pool")


def main(n_seeds):
    rows = []
    for seed in range(n_seeds):
        row = run_ablation(seed)
        rows.append(row)
        print(f"seed {seed}: " + " ".join(f"{k}={row[k]:.2f}" for k in VARIANTS) + f" ({row['seconds']:.0f}s)")
    print("mean:   " + " ".join(f"{k}={np.mean([r[k] for r in rows]):.3f}" for k in VARIANTS))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 5)
