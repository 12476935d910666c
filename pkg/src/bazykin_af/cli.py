"""Command-line front end.

Precedence for every setting is: command-line flag, then the JSON config
file, then the built-in default.  Sweeps use the inclusive grid syntax
``lo..hi:n``.  Domain errors exit with status 1 and a JSON object on
standard error; usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import bifurcation as bif
from . import control as ctl
from .equilibria import equilibria, nullcline_case
from .errors import BazykinError, InvalidInputError
from .model import FIELD_ORDER, Parameters, bound_constant, check, load_parameters, parameters_from_doc, validate
from .simulate import detect_limit_cycle, integrate, read_trajectory_csv

PROG = "bazykin-af"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# formatting


def fmt(v) -> str:
    return format(float(v), ".17g")


def _json_text(obj, indent: int = 2, level: int = 0) -> str:
    """JSON with floats written to 17 significant digits; non-finite floats become null."""
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_text(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [pad + _json_text(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def emit(results, fmt_name: str, out: str | None, header=None) -> None:
    """Write rows (csv) or an object (json) to ``out`` or standard output.

    Output is byte-stable: fixed field order, 17 significant digits, LF endings.
    """
    buf = io.StringIO(newline="")
    if fmt_name == "csv":
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(header)
        for row in results:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    elif fmt_name == "json":
        buf.write(_json_text(results) + "\n")
    else:
        raise UsageError(f"unknown format {fmt_name!r}")
    text = buf.getvalue()
    if out in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    try:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------------------
# argument helpers


def parse_sweep(text: str) -> np.ndarray:
    """``lo..hi:n`` -> n evenly spaced values including both ends; a bare number is one point."""
    try:
        if ".." not in text:
            return np.array([float(text)])
        rng, _, n = text.partition(":")
        lo, _, hi = rng.partition("..")
        n = int(n) if n else 2
        if n < 1:
            raise ValueError
        return np.linspace(float(lo), float(hi), n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad sweep {text!r}; expected lo..hi:n") from None


def parse_pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    return a, b


def _workers() -> int:
    cpus = os.cpu_count() or 1
    env = os.environ.get("BAZYKIN_THREADS")
    if env:
        try:
            return max(1, min(int(env), cpus))
        except ValueError:
            raise UsageError("BAZYKIN_THREADS must be an integer") from None
    return cpus


def _load_config(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    _, doc = load_parameters(args.config)
    return doc


def _parameters(args, doc: dict, skip=()):
    values = {}
    if doc:
        values = parameters_from_doc(doc).as_dict()
    for k in FIELD_ORDER:
        if k in skip:
            continue
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    missing = [k for k in FIELD_ORDER if k not in values and k not in skip]
    if missing:
        raise UsageError(f"missing parameters (give --config or flags): {', '.join(missing)}")
    for k in skip:
        values.setdefault(k, 0.0)
    return check(Parameters.from_dict(values))


def _block(doc: dict, name: str) -> dict:
    b = doc.get(name, {}) if doc else {}
    if not isinstance(b, dict):
        raise InvalidInputError(f"config block {name!r} must be an object")
    return b


def _pick(flag, block: dict, key: str, default):
    if flag is not None:
        return flag
    return block.get(key, default)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    doc = _load_config(args)
    p = _parameters(args, doc)
    blk = _block(doc, "simulate")
    t_end = float(_pick(args.t_end, blk, "t_end", 200.0))
    dt = float(_pick(args.dt, blk, "dt", 0.01))
    start = _pick(args.start, blk, "start", (1.0, 1.0))
    every = int(_pick(args.record_every, blk, "record_every", 1))
    if t_end <= 0 or dt <= 0 or every < 1:
        raise InvalidInputError("t_end and dt must be positive and record_every >= 1")
    traj = integrate(p, start, t_end, dt, record_every=every)
    emit(zip(traj.t, traj.x, traj.y), "csv", args.output, header=["t", "x", "y"])
    if not args.no_detect_cycle:
        try:
            found = detect_limit_cycle(traj) is not None
        except BazykinError:
            found = False
        print(f"cycle: {'true' if found else 'false'}", file=sys.stderr)
    return 0


def cmd_equilibria(args) -> int:
    p = _parameters(args, _load_config(args))
    emit([e.as_dict() for e in equilibria(p)], "json", args.output)
    return 0


def cmd_bifurcate(args) -> int:
    doc = _load_config(args)
    p = _parameters(args, doc)
    blk = _block(doc, "bifurcate")
    kind = _pick(args.kind, blk, "kind", "transcritical")
    if kind == "transcritical":
        res = {"xi_star": bif.transcritical_xi(p)}
        which = bif.BifurcationKind.TRANSCRITICAL
    elif kind == "saddle-node":
        res = {"xi_star": bif.saddlenode_xi(p)}
        which = bif.BifurcationKind.SADDLE_NODE
    elif kind == "hopf":
        bracket = _pick(args.bracket, blk, "bracket", (0.02, 0.04))
        hp = bif.hopf_epsilon(p, bracket=tuple(bracket))
        if hp is None:
            res = {"epsilon_star": None, "reason": "trace vanishes only at saddles or x = 1/sqrt(omega)"}
        else:
            res = {"epsilon_star": hp.epsilon, "x": hp.location.x, "y": hp.location.y,
                   "det": hp.det, "trace_derivative": hp.trace_derivative}
        folds = bif.interior_folds(p, tuple(bracket))
        res["interior_folds"] = [{"epsilon": e, "x": s.x, "y": s.y} for e, s in folds]
        emit(res, "json", args.output)
        return 0
    else:
        raise UsageError(f"unknown kind {kind!r}")
    if args.sotomayor:
        rep = bif.sotomayor_quantities(p, which)
        res["sotomayor"] = {
            "wT_Hxi": rep.wT_Hxi, "wT_DHxiV": rep.wT_DHxiV, "wT_D2HVV": rep.wT_D2HVV,
            "nondegenerate": rep.nondegenerate, "pattern": rep.pattern.value if rep.pattern else None,
        }
    emit(res, "json", args.output)
    return 0


REGION_HEADER = ["alpha", "xi", "phi1", "phi2", "phi3", "phi4", "base_region", "subregion", "outcome"]


def cmd_regions(args) -> int:
    doc = _load_config(args)
    p = _parameters(args, doc, skip=("alpha", "xi"))
    blk = _block(doc, "regions")
    alphas = args.alpha if args.alpha is not None else parse_sweep(blk.get("alpha", "0..2:21"))
    xis = args.xi if args.xi is not None else parse_sweep(blk.get("xi", "0..5:21"))
    rows = bif.region_atlas(p, alphas, xis, detect_cycles=not args.no_cycles, workers=_workers())
    emit(
        ((r.alpha, r.xi, r.phi.phi1, r.phi.phi2, r.phi.phi3, r.phi.phi4, r.base_region, r.subregion,
          r.outcome if not r.boundary else "Boundary") for r in rows),
        "csv", args.output, header=REGION_HEADER,
    )
    return 0


def cmd_cusp(args) -> int:
    doc = _load_config(args)
    p = _parameters(args, doc, skip=("epsilon",))
    blk = _block(doc, "cusp")
    plane = _pick(args.plane, blk, "plane", "alpha-epsilon")
    us = args.u if args.u is not None else parse_sweep(blk.get("u", "0..1:41"))
    es = args.epsilon if args.epsilon is not None else parse_sweep(blk.get("epsilon", "0.01..1:41"))
    if len(us) < 2 or len(es) < 2:
        raise InvalidInputError("cusp scan needs at least two values on each axis")
    cm = bif.cusp_scan(p, plane, (us[0], us[-1]), (es[0], es[-1]), (len(us), len(es)), workers=_workers())
    emit(cm.rows(), "csv", args.output, header=["u", "epsilon", "n_attractors"])
    return 0


CONTROL_HEADER = ["s", "t", "x", "y", "u", "p", "q", "switching_function"]


def cmd_control(args) -> int:
    doc = _load_config(args)
    blk = _block(doc, "control")
    which = ctl._which(_pick(args.which, blk, "which", "QualityControl"))
    controlled = "alpha" if which is ctl.Which.QUALITY else "xi"
    p = _parameters(args, doc, skip=(controlled,))
    bounds = _pick(args.bounds, blk, "bounds", (0.0, 2.0))
    start = _pick(args.start, blk, "start", None)
    target = _pick(args.target, blk, "target", None)
    if start is None or target is None:
        raise UsageError("control needs start and target (flags or config block)")
    prob = ctl.ControlProblem(
        which, p, float(bounds[0]), float(bounds[1]), tuple(start), tuple(target),
        n_intervals=int(_pick(args.n_intervals, blk, "n_intervals", 40)),
        rk4_steps_per_interval=int(_pick(args.rk4_steps, blk, "rk4_steps_per_interval", 80)),
        coarse_steps_per_interval=int(_pick(args.coarse_steps, blk, "coarse_steps_per_interval", 10)),
        objective=_pick(args.objective, blk, "objective", "time"),
    )
    sol = ctl.solve_time_optimal(prob)
    emit(ctl.solution_rows(prob, sol), "csv", args.output, header=CONTROL_HEADER)
    summary = {"total_T": sol.total_T, "total_S": sol.total_S, "switching_points": sol.switching_points,
               "endpoint_error": sol.solver_report.get("endpoint_error")}
    if sol.total_S > 0:
        rep = ctl.verify_pmp(prob, sol)
        summary["pmp_fraction_consistent"] = rep.fraction_consistent
    sys.stderr.write(_json_text(summary) + "\n")
    return 0


def cmd_verify(args) -> int:
    doc = _load_config(args)
    p = _parameters(args, doc)
    k = float(_pick(args.k, _block(doc, "verify"), "k", 1.0))
    diags = [{"severity": d.severity.value, "message": d.message} for d in validate(p)]
    b = bound_constant(p, k)
    nc = nullcline_case(p)
    res = {
        "parameters": p.as_dict(),
        "diagnostics": diags,
        "bound": {"k": k, "M": b.M, "ultimate_bound": b.ultimate_bound, "degenerate": b.degenerate},
        "nullcline_case": {"prey": nc.prey_case.value, "predator": nc.predator_case.value,
                           "degenerate": nc.degenerate, "omega_zero": nc.omega_zero},
    }
    if args.trajectory:
        traj = read_trajectory_csv(args.trajectory)
        W = traj.x + traj.y / p.delta
        limit = max(float(W[0]), b.ultimate_bound) + 1e-6
        res["trajectory"] = {"sup_W": float(W.max()), "limit": limit, "within_bound": bool(W.max() <= limit)}
    emit(res, "json", args.output)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_params(sp, skip=()):
    g = sp.add_argument_group("model parameters (override the config file)")
    for k in FIELD_ORDER:
        if k not in skip:
            g.add_argument(f"--{k}", type=float, default=None, help=f"nondimensional {k}")


def _common(sp):
    sp.add_argument("--config", help="JSON config file with a parameters block")
    sp.add_argument("--output", "-o", help="output path (default: standard output)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog=PROG, description="Predator-prey model with additional food: analysis toolkit.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sp = sub.add_parser("simulate", help="fixed-step RK4 trajectory as CSV (t,x,y)")
    _common(sp)
    _add_params(sp)
    sp.add_argument("--t-end", type=float, help="final time (default 200)")
    sp.add_argument("--dt", type=float, help="step size (default 0.01)")
    sp.add_argument("--start", type=parse_pair, help="initial state x,y (default 1,1)")
    sp.add_argument("--record-every", type=int, help="keep every n-th step (default 1)")
    sp.add_argument("--no-detect-cycle", action="store_true", help="skip the 'cycle: true|false' line on stderr")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("equilibria", help="all equilibria with eigenvalues and stability as JSON")
    _common(sp)
    _add_params(sp)
    sp.set_defaults(func=cmd_equilibria)

    sp = sub.add_parser("bifurcate", help="critical food quantity or Hopf competition value as JSON")
    _common(sp)
    _add_params(sp)
    sp.add_argument("--kind", choices=["transcritical", "saddle-node", "hopf"], help="bifurcation type")
    sp.add_argument("--bracket", type=parse_pair, help="epsilon bracket lo,hi for the Hopf search (default 0.02,0.04)")
    sp.add_argument("--sotomayor", action="store_true", help="include Sotomayor non-degeneracy quantities")
    sp.set_defaults(func=cmd_bifurcate)

    sp = sub.add_parser("regions", help="(alpha, xi) region atlas as CSV")
    _common(sp)
    _add_params(sp, skip=("alpha", "xi"))
    sp.add_argument("--alpha", type=parse_sweep, help="alpha sweep lo..hi:n (default 0..2:21)")
    sp.add_argument("--xi", type=parse_sweep, help="xi sweep lo..hi:n (default 0..5:21)")
    sp.add_argument("--no-cycles", action="store_true", help="skip simulation-based limit-cycle detection")
    sp.set_defaults(func=cmd_regions)

    sp = sub.add_parser("cusp", help="count of stable equilibria over a food x epsilon grid as CSV")
    _common(sp)
    _add_params(sp, skip=("epsilon",))
    sp.add_argument("--plane", choices=sorted(bif.PLANES), help="food parameter on the u axis (default alpha-epsilon)")
    sp.add_argument("--u", type=parse_sweep, help="food-parameter sweep lo..hi:n (default 0..1:41)")
    sp.add_argument("--epsilon", type=parse_sweep, help="epsilon sweep lo..hi:n (default 0.01..1:41)")
    sp.set_defaults(func=cmd_cusp)

    sp = sub.add_parser("control", help="time-optimal food control as CSV")
    _common(sp)
    _add_params(sp)
    sp.add_argument("--which", choices=["QualityControl", "QuantityControl"], help="controlled parameter")
    sp.add_argument("--bounds", type=parse_pair, help="control bounds lo,hi (default 0,2)")
    sp.add_argument("--start", type=parse_pair, help="initial state x,y")
    sp.add_argument("--target", type=parse_pair, help="target state x,y")
    sp.add_argument("--n-intervals", type=int, help="shooting intervals (default 40)")
    sp.add_argument("--rk4-steps", type=int, help="RK4 steps per interval in the final solution (default 80)")
    sp.add_argument("--coarse-steps", type=int, help="RK4 steps per interval during the multi-start search (default 10)")
    sp.add_argument("--objective", choices=["time", "transformed"], help="minimise physical time (default) or transformed time")
    sp.set_defaults(func=cmd_control)

    sp = sub.add_parser("verify", help="parameter diagnostics, ultimate bound and optional trajectory check as JSON")
    _common(sp)
    _add_params(sp)
    sp.add_argument("--k", type=float, help="decay rate in the bound dW/dt + kW <= M (default 1)")
    sp.add_argument("--trajectory", help="trajectory CSV (t,x,y) to test against the bound")
    sp.set_defaults(func=cmd_verify)
    return ap


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except BazykinError as exc:
        sys.stderr.write(json.dumps(exc.to_dict()) + "\n")
        return 1
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "io-error", "message": str(exc)}) + "\n")
        return 1


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
