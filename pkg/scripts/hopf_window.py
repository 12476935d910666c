"""Scan the predator self-limitation rate for oscillations and locate what ends them.

Prints the interior equilibria along an epsilon grid, the trace-zero points
of the equilibrium curve with their determinant sign, the interior folds and
the cycle period as epsilon approaches the lower fold.
"""

import argparse

import numpy as np

from bazykin_af.bifurcation import equilibrium_curve, hopf_epsilon, interior_folds
from bazykin_af.equilibria import interior_equilibria
from bazykin_af.model import Parameters
from bazykin_af.simulate import detect_limit_cycle, integrate

BASE = Parameters(gamma=15.0, alpha=0.1, xi=0.45, omega=0.01, epsilon=0.024, delta=0.45, m=0.28)


def cycle_period(p: Parameters, t_end: float, dt: float):
    eq = min(interior_equilibria(p), key=lambda e: e.location.x)
    tr = integrate(p, (1.01 * eq.location.x, 1.01 * eq.location.y), t_end, dt, record_every=4)
    info = detect_limit_cycle(tr)
    return None if info is None else info.period


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lo", type=float, default=0.020)
    ap.add_argument("--hi", type=float, default=0.032)
    ap.add_argument("--n", type=int, default=13)
    ap.add_argument("--t-end", type=float, default=4000.0)
    ap.add_argument("--dt", type=float, default=0.05)
    args = ap.parse_args()

    print("epsilon  equilibria (x, y, stability)  cycle period")
    for eps in np.linspace(args.lo, args.hi, args.n):
        p = BASE.replace(epsilon=float(eps))
        eqs = ", ".join(f"({e.location.x:.3f}, {e.location.y:.3f}, {e.stability.name})" for e in interior_equilibria(p))
        per = cycle_period(p, args.t_end, args.dt)
        print(f"{eps:.4f}  {eqs}  {'-' if per is None else f'{per:.2f}'}")

    x = np.linspace(1e-3, BASE.gamma - 1e-3, 200001)
    eps, y, tr, det = equilibrium_curve(BASE, x)
    ok = np.isfinite(eps) & (eps > args.lo) & (eps < args.hi) & (y > 0)
    flips = np.where(ok[:-1] & ok[1:] & (np.sign(tr[:-1]) != np.sign(tr[1:])))[0]
    print("\ntrace-zero points on the equilibrium curve")
    for k in flips:
        print(f"  x={x[k]:.4f} epsilon={eps[k]:.6f} det={det[k]:.3e} ({'saddle' if det[k] < 0 else 'Hopf candidate'})")
    hp = hopf_epsilon(BASE, bracket=(args.lo, args.hi))
    print(f"hopf_epsilon: {'none' if hp is None else f'{hp.epsilon:.6f}'}")

    folds = interior_folds(BASE, (args.lo, args.hi))
    print("\ninterior folds")
    for e, s in folds:
        print(f"  epsilon={e:.6f} at ({s.x:.4f}, {s.y:.4f})")
    if folds:
        e_fold = min(e for e, _ in folds)
        print("\nperiod growth below the lower fold")
        for gap in (1e-3, 3e-4, 1e-4, 3e-5):
            per = cycle_period(BASE.replace(epsilon=e_fold - gap), 4 * args.t_end, args.dt)
            print(f"  epsilon=fold-{gap:.0e}  period={'-' if per is None else f'{per:.2f}'}")


if __name__ == "__main__":
    main()
