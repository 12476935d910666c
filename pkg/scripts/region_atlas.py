"""Classify a grid of (alpha, xi) cells by long-term outcome and write it as CSV."""

import argparse
import collections
import csv
import time

import numpy as np

from bazykin_af.bifurcation import region_atlas
from bazykin_af.model import Parameters

BASE = Parameters(gamma=1.0, alpha=1.0, xi=2.0, omega=4.0, epsilon=0.5, delta=8.0, m=6.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=100, help="cells per axis")
    ap.add_argument("--alpha-max", type=float, default=2.0)
    ap.add_argument("--xi-max", type=float, default=5.0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--cycles", action="store_true", help="also detect limit cycles (slow)")
    ap.add_argument("--output", default="region_atlas.csv")
    args = ap.parse_args()

    alphas = np.linspace(0.0, args.alpha_max, args.n)
    xis = np.linspace(0.0, args.xi_max, args.n)
    t0 = time.perf_counter()
    labels = region_atlas(BASE, alphas, xis, detect_cycles=args.cycles, workers=args.workers)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "xi", "subregion", "phi_class", "outcome", "boundary"])
        for lab in labels:
            w.writerow([f"{lab.alpha:.6g}", f"{lab.xi:.6g}", lab.subregion, lab.phi_class, lab.outcome or "", int(lab.boundary)])
    counts = collections.Counter(lab.outcome for lab in labels)
    print(f"{len(labels)} cells in {time.perf_counter() - t0:.1f}s -> {args.output}")
    for outcome, n in counts.most_common():
        print(f"  {outcome}: {n}")


if __name__ == "__main__":
    main()
