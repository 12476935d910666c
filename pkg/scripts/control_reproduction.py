"""Solve both minimum-time food control problems over a sweep of control bounds.

For each bound the script reports the physical time T, the transformed
horizon S, the switching structure, the PMP node consistency and the
endpoint error of an independent physical-time re-simulation.
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from bazykin_af.control import ControlProblem, resimulate, solve_time_optimal, verify_pmp
from bazykin_af.errors import NoConvergenceError
from bazykin_af.model import Parameters

BASE = Parameters(gamma=8.0, alpha=0.1, xi=0.1, omega=0.01, epsilon=0.01, delta=0.96, m=0.3)
PROBLEMS = {
    "quality": ("QualityControl", (4.0, 2.0), (1.0, 3.0)),
    "quantity": ("QuantityControl", (5.0, 2.0), (1.0, 4.0)),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--problem", choices=[*PROBLEMS, "both"], default="both")
    ap.add_argument("--upper", type=float, nargs="+", default=[2.0, 5.0, 10.0], help="upper control bounds, ascending")
    args = ap.parse_args()

    names = list(PROBLEMS) if args.problem == "both" else [args.problem]
    for name in names:
        which, start, target = PROBLEMS[name]
        print(f"{which} {start} -> {target}")
        prev = None
        for ub in args.upper:
            prob = ControlProblem(which, BASE, 0.0, ub, start, target)
            t0 = time.perf_counter()
            try:
                # warm start from the narrower bound keeps T monotone in the bound
                sol = solve_time_optimal(prob, initial=prev)
            except NoConvergenceError as exc:
                print(f"  [0,{ub:g}]: no convergence, smallest violation {exc.best:.3g} ({time.perf_counter() - t0:.0f}s)")
                continue
            prev = sol
            pmp = verify_pmp(prob, sol).fraction_consistent
            resim = float(np.max(np.abs(resimulate(prob, sol) - np.array(target))))
            sw = ", ".join(f"{s:.3f}" for s in sol.switching_points) or "none"
            print(f"  [0,{ub:g}]: T={sol.total_T:.5f} S={sol.total_S:.4f} switches(s)=[{sw}] "
                  f"pmp={pmp:.3f} resim={resim:.1e} ({time.perf_counter() - t0:.0f}s)")


if __name__ == "__main__":
    main()
