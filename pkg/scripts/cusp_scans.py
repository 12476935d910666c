"""Count coexisting stable equilibria over the (alpha, epsilon) and (xi, epsilon) planes.

Reports the bistable fraction at two resolutions and whether the bistable
cells border monostable ones.  ``--gamma`` rescales the carrying capacity to
explore where bistability appears.
"""

import argparse
import time

from bazykin_af.bifurcation import cusp_scan
from bazykin_af.model import Parameters

BASE = Parameters(gamma=0.6545, alpha=0.1, xi=1.0, omega=0.1, epsilon=0.1, delta=0.6, m=0.2)
PLANES = {"alpha-epsilon": (0.0, 1.0), "xi-epsilon": (0.0, 5.0)}


def render(cmap) -> str:
    # rows: epsilon from high to low, columns: u; digits are stable counts
    return "\n".join("".join(str(min(int(c), 9)) for c in row) for row in cmap.counts[::-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gamma", type=float, default=BASE.gamma)
    ap.add_argument("--n", type=int, default=40, help="coarse cells per axis; the fine scan doubles it")
    ap.add_argument("--show", action="store_true", help="print the coarse count map")
    args = ap.parse_args()

    p = BASE.replace(gamma=args.gamma)
    for plane, u_range in PLANES.items():
        t0 = time.perf_counter()
        coarse = cusp_scan(p, plane, u_range, (0.01, 1.0), (args.n, args.n))
        fine = cusp_scan(p, plane, u_range, (0.01, 1.0), (2 * args.n, 2 * args.n))
        print(f"{plane} gamma={args.gamma}: bistable fraction {coarse.bistable_fraction:.4f} -> "
              f"{fine.bistable_fraction:.4f}, adjacent to monostable={coarse.adjacent_to_monostable()}, "
              f"{time.perf_counter() - t0:.1f}s")
        if args.show:
            print(render(coarse))


if __name__ == "__main__":
    main()
