"""Time integration, phase portraits and limit-cycle detection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BazykinError,
    DivergenceError,
    InsufficientDataError,
    InvalidInputError,
    PositivityViolationError,
)
from .model import FIELD_ORDER, Parameters, State, rhs

POSITIVITY_TOL = 1e-9

# limit-cycle detection defaults
CYCLE_PERIOD_RTOL = 0.02
CYCLE_MIN_AMPLITUDE = 1e-3
CYCLE_MIN_INTERVALS = 3
TRANSIENT_FRACTION = 0.5


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.t)

    @property
    def states(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    @property
    def final(self) -> State:
        return State(float(self.x[-1]), float(self.y[-1]))

    def write_csv(self, path) -> None:
        write_trajectory_csv(self, path)


@dataclass(frozen=True)
class CycleInfo:
    period: float
    amplitude_x: float
    amplitude_y: float
    mean_state: State


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(traj: Trajectory, path_or_file) -> None:
    rows = zip(traj.t, traj.x, traj.y)
    if hasattr(path_or_file, "write"):
        _write_rows(path_or_file, rows)
        return
    with open(path_or_file, "w", newline="") as fh:
        _write_rows(fh, rows)


def _write_rows(fh, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t", "x", "y"])
    for t, x, y in rows:
        w.writerow([_fmt(t), _fmt(x), _fmt(y)])


def read_trajectory_csv(path_or_file) -> Trajectory:
    src = path_or_file if hasattr(path_or_file, "read") else Path(path_or_file)
    data = np.loadtxt(src, delimiter=",", skiprows=1, ndmin=2)
    return Trajectory(data[:, 0], data[:, 1], data[:, 2])


def _check_start(s0) -> tuple[float, float]:
    x0, y0 = float(s0[0]), float(s0[1])
    if not (math.isfinite(x0) and math.isfinite(y0)):
        raise InvalidInputError(f"non-finite initial state ({x0}, {y0})")
    if x0 < 0 or y0 < 0:
        raise InvalidInputError(f"initial state ({x0}, {y0}) must be nonnegative")
    return x0, y0


def _enforce(x, y, step):
    """Clamp round-off negatives, reject genuine sign violations and blow-ups."""
    if not (math.isfinite(x) and math.isfinite(y)):
        raise DivergenceError(f"non-finite state at step {step}", step=step)
    if x < 0.0:
        if x < -POSITIVITY_TOL:
            raise PositivityViolationError(f"x = {x:.3e} < 0 at step {step}")
        x = 0.0
    if y < 0.0:
        if y < -POSITIVITY_TOL:
            raise PositivityViolationError(f"y = {y:.3e} < 0 at step {step}")
        y = 0.0
    return x, y


def integrate(p: Parameters, s0, t_end: float, dt: float, record_every: int = 1) -> Trajectory:
    """Classical fixed-step RK4 from t = 0 to ``t_end``.

    The step is shrunk so that an integer number of steps lands on ``t_end``.
    ``record_every`` thins the stored samples (the final state is always kept).
    """
    if not (t_end > 0 and dt > 0) or not (math.isfinite(t_end) and math.isfinite(dt)):
        raise InvalidInputError("t_end and dt must be finite and positive")
    x, y = _check_start(s0)
    n = max(1, math.ceil(t_end / dt - 1e-9))
    h = t_end / n
    prm = p.values()
    f = rhs

    size = n // record_every + 2
    ts = np.empty(size)
    xs = np.empty(size)
    ys = np.empty(size)
    ts[0], xs[0], ys[0] = 0.0, x, y
    k = 1
    h2 = 0.5 * h
    h6 = h / 6.0
    for i in range(1, n + 1):
        a1, b1 = f(x, y, *prm)
        a2, b2 = f(x + h2 * a1, y + h2 * b1, *prm)
        a3, b3 = f(x + h2 * a2, y + h2 * b2, *prm)
        a4, b4 = f(x + h * a3, y + h * b3, *prm)
        x = x + h6 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        y = y + h6 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        x, y = _enforce(x, y, i)
        if i % record_every == 0 or i == n:
            ts[k], xs[k], ys[k] = i * h, x, y
            k += 1
    return Trajectory(ts[:k], xs[:k], ys[:k])


def integrate_batch(params: dict, x0, y0, t_end: float, dt: float, record_every: int = 1):
    """Vectorised RK4 over many independent runs.

    ``params`` maps each parameter name to a scalar or an array broadcastable
    against ``x0``.  Returns arrays ``(t, X, Y)`` with X, Y of shape
    (n_samples, n_runs).  Runs whose state leaves the admissible set are marked
    with NaN from that point on instead of aborting the batch.
    """
    x = np.array(x0, dtype=float, copy=True)
    y = np.array(y0, dtype=float, copy=True)
    x, y = np.broadcast_arrays(x, y)
    x, y = x.copy(), y.copy()
    prm = tuple(np.asarray(params[k], dtype=float) for k in FIELD_ORDER)
    n = max(1, math.ceil(t_end / dt - 1e-9))
    h = t_end / n
    h2, h6 = 0.5 * h, h / 6.0
    samples = [(0.0, x.copy(), y.copy())]
    with np.errstate(all="ignore"):
        for i in range(1, n + 1):
            a1, b1 = rhs(x, y, *prm)
            a2, b2 = rhs(x + h2 * a1, y + h2 * b1, *prm)
            a3, b3 = rhs(x + h2 * a2, y + h2 * b2, *prm)
            a4, b4 = rhs(x + h * a3, y + h * b3, *prm)
            x = x + h6 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            y = y + h6 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            bad = ~np.isfinite(x) | ~np.isfinite(y) | (x < -POSITIVITY_TOL) | (y < -POSITIVITY_TOL)
            x = np.where(bad, np.nan, np.maximum(x, 0.0))
            y = np.where(bad, np.nan, np.maximum(y, 0.0))
            if i % record_every == 0 or i == n:
                samples.append((i * h, x.copy(), y.copy()))
    t = np.array([s[0] for s in samples])
    return t, np.array([s[1] for s in samples]), np.array([s[2] for s in samples])


# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)


def integrate_adaptive(
    p: Parameters,
    s0,
    t_end: float,
    rel_tol: float = 1e-8,
    abs_tol: float = 1e-10,
    h0: float = 1e-2,
    max_steps: int = 2_000_000,
) -> Trajectory:
    """Dormand-Prince 5(4) with step halving on rejection and doubling when the
    error estimate is far below tolerance."""
    if not (rel_tol > 0 and abs_tol > 0):
        raise InvalidInputError("rel_tol and abs_tol must be positive")
    if not (t_end > 0 and math.isfinite(t_end)):
        raise InvalidInputError("t_end must be finite and positive")
    x, y = _check_start(s0)
    prm = p.values()
    t = 0.0
    h = min(h0, t_end)
    ts, xs, ys = [0.0], [x], [y]
    steps = 0
    while t < t_end:
        if steps >= max_steps:
            raise DivergenceError(f"step budget exhausted at t = {t}", step=steps)
        if h < 1e-14 * max(1.0, t):
            raise DivergenceError(f"step size underflow at t = {t}", step=steps)
        h = min(h, t_end - t)
        kx, ky = [], []
        for i in range(7):
            xi = x + h * sum(a * k for a, k in zip(_DP_A[i], kx))
            yi = y + h * sum(a * k for a, k in zip(_DP_A[i], ky))
            dx, dy = rhs(xi, yi, *prm)
            kx.append(dx)
            ky.append(dy)
        x5 = x + h * sum(b * k for b, k in zip(_DP_B5, kx))
        y5 = y + h * sum(b * k for b, k in zip(_DP_B5, ky))
        ex = h * sum((b5 - b4) * k for b5, b4, k in zip(_DP_B5, _DP_B4, kx))
        ey = h * sum((b5 - b4) * k for b5, b4, k in zip(_DP_B5, _DP_B4, ky))
        if not (math.isfinite(x5) and math.isfinite(y5)):
            h *= 0.5
            steps += 1
            continue
        sx = abs_tol + rel_tol * max(abs(x), abs(x5))
        sy = abs_tol + rel_tol * max(abs(y), abs(y5))
        err = max(abs(ex) / sx, abs(ey) / sy)
        steps += 1
        if err > 1.0:
            h *= 0.5
            continue
        t += h
        x, y = _enforce(x5, y5, steps)
        ts.append(t)
        xs.append(x)
        ys.append(y)
        if err < 1.0 / 64.0:
            h *= 2.0
    return Trajectory(np.array(ts), np.array(xs), np.array(ys))


def _peaks(v: np.ndarray, t: np.ndarray):
    """Local maxima of ``v`` refined by parabolic interpolation."""
    idx = np.where((v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:]))[0] + 1
    times, heights = [], []
    for i in idx:
        y0, y1, y2 = v[i - 1], v[i], v[i + 1]
        denom = y0 - 2 * y1 + y2
        off = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
        dt = t[i + 1] - t[i]
        times.append(t[i] + off * dt)
        heights.append(y1 - 0.25 * (y0 - y2) * off)
    return np.array(times), np.array(heights)


def detect_limit_cycle(
    traj: Trajectory,
    transient_fraction: float = TRANSIENT_FRACTION,
    period_rtol: float = CYCLE_PERIOD_RTOL,
    min_amplitude: float = CYCLE_MIN_AMPLITUDE,
    min_intervals: int = CYCLE_MIN_INTERVALS,
) -> CycleInfo | None:
    """Peak-interval test for a sustained oscillation in x(t).

    After discarding the leading ``transient_fraction`` of the time span, the
    last ``min_intervals`` inter-peak intervals of x must agree to within
    ``period_rtol`` and the peak-to-trough amplitude over those periods must
    exceed ``min_amplitude``.
    """
    if not 0.0 <= transient_fraction < 1.0:
        raise InvalidInputError("transient_fraction must lie in [0, 1)")
    t = np.asarray(traj.t)
    if len(t) < 16:
        raise InsufficientDataError(f"trajectory has only {len(t)} samples")
    keep = t >= t[0] + transient_fraction * (t[-1] - t[0])
    if keep.sum() < 16:
        raise InsufficientDataError("fewer than 16 samples after the transient")
    tt, xx, yy = t[keep], np.asarray(traj.x)[keep], np.asarray(traj.y)[keep]
    pt, _ = _peaks(xx, tt)
    if len(pt) < min_intervals + 1:
        return None
    intervals = np.diff(pt)[-min_intervals:]
    if intervals.min() <= 0 or intervals.max() / intervals.min() - 1.0 > period_rtol:
        return None
    window = tt >= pt[-(min_intervals + 1)]
    amp_x = float(xx[window].max() - xx[window].min())
    amp_y = float(yy[window].max() - yy[window].min())
    if amp_x <= min_amplitude:
        return None
    mean = State(float(xx[window].mean()), float(yy[window].mean()))
    return CycleInfo(float(intervals.mean()), amp_x, amp_y, mean)


def phase_portrait(p: Parameters, initial_conditions, t_end: float, dt: float, record_every: int = 1):
    """One independent trajectory per start.

    A start whose integration fails yields the raised
    :class:`~bazykin_af.errors.BazykinError` in its slot instead of a
    trajectory; the rest of the batch still runs.
    """
    starts = list(initial_conditions)
    if not starts:
        raise InvalidInputError("initial_conditions must be nonempty")
    out = []
    for s0 in starts:
        try:
            out.append(integrate(p, s0, t_end, dt, record_every=record_every))
        except BazykinError as exc:
            out.append(exc)
    return out
