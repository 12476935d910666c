"""Closest approach to a control target over bang-bang plans.

Arc durations in transformed time are optimised by Nelder-Mead from many
random starts (up to four arcs alternating between the bounds).  A distance
that stays well above zero for every start is evidence that the target is
out of reach for those bounds.
"""

import argparse

import numpy as np
from scipy.optimize import minimize

from bazykin_af.control import ControlProblem, bang_bang_closest_approach
from bazykin_af.model import Parameters

BASE = Parameters(gamma=8.0, alpha=0.1, xi=0.1, omega=0.01, epsilon=0.01, delta=0.96, m=0.3)
PROBLEMS = {
    "quality": ("QualityControl", (4.0, 2.0), (1.0, 3.0)),
    "quantity": ("QuantityControl", (5.0, 2.0), (1.0, 4.0)),
}


def plan_distance(prob, durations, levels, step):
    d = np.abs(durations)
    return bang_bang_closest_approach(prob, np.cumsum(d)[:-1], levels, float(d.sum()) + step, step)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--problem", choices=list(PROBLEMS), default="quality")
    ap.add_argument("--upper", type=float, nargs="+", default=[2.0, 10.0])
    ap.add_argument("--trials", type=int, default=60)
    ap.add_argument("--step", type=float, default=0.005)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    which, start, target = PROBLEMS[args.problem]
    for ub in args.upper:
        prob = ControlProblem(which, BASE, 0.0, ub, start, target)
        rng = np.random.default_rng(args.seed)
        best = (np.inf, None, None)
        for _ in range(args.trials):
            k = int(rng.integers(1, 5))
            first = int(rng.integers(0, 2))
            levels = np.array([ub * ((first + j) % 2) for j in range(k)], dtype=float)
            res = minimize(lambda d: plan_distance(prob, d, levels, args.step)[0], rng.exponential(2.0, size=k),
                           method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 3000})
            if res.fun < best[0]:
                best = (res.fun, np.abs(res.x), levels)
        d, dur, levels = best
        arcs = " -> ".join(f"{u:g} for {t:.4f}" for u, t in zip(levels, dur))
        print(f"bounds [0,{ub:g}]: closest distance {d:.5f} along {arcs}")


if __name__ == "__main__":
    main()
