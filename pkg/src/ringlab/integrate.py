"""Adaptive Dormand-Prince 5(4) integration, variational equations and
method-of-steps delay integration.

The stepping loop is written once in a numba-compatible subset of Python.
When the vector field is a numba ``@njit`` function the compiled loop is
used; any other callable runs through the same loop as plain Python.

Vector fields have the signature ``field(t, x, args) -> dx`` where ``args``
is a tuple of extra parameters (numba needs a concrete, typed container).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from typing import Any, Callable, Optional, Sequence

import numpy as np
from numba import njit
from numba.core.registry import CPUDispatcher

from .errors import DivergenceError, DomainError, IntegrationError

# Butcher tableau of the Dormand-Prince pair.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.array([
    [0, 0, 0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0, 0],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0],
], dtype=np.float64)
# Difference between the 5th and embedded 4th order weights.
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200,
               22 / 525, -1 / 40])
# Shampine's 4th order continuous extension: x(t + th*h) = x + h * K^T P [th, th^2, th^3, th^4].
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
], dtype=np.float64)

# PI step-size controller (Hairer's DOPRI5 constants).
_SAFETY = 0.9
_PI_ALPHA = 0.17
_PI_BETA = 0.04
_FAC_MIN = 0.2
_FAC_MAX = 10.0

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_DIVERGED = 2


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-5
    atol: float = 1e-5
    initial_step: float = 0.0  # 0 selects the step automatically
    max_step: float = math.inf
    dense_output_dt: float = 0.1

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise DomainError("rtol and atol must be positive")
        if not self.dense_output_dt > 0:
            raise DomainError("dense_output_dt must be positive")
        if self.max_step <= 0:
            raise DomainError("max_step must be positive")


@dataclass
class Trajectory:
    """Uniformly sampled solution path.

    ``states[i]`` is the state at ``times[i]``. ``final_state`` is the state
    at the end of the integration span, which need not lie on the sample grid.
    """

    times: np.ndarray
    states: np.ndarray
    metadata: dict = dc_field(default_factory=dict)
    final_time: float = 0.0
    final_state: Optional[np.ndarray] = None
    last_step: float = 0.0
    n_steps: int = 0
    n_rejected: int = 0

    def __len__(self):
        return len(self.times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def tail(self, duration: float) -> "Trajectory":
        """The trailing ``duration`` time units as a new trajectory (views, no copy)."""
        start = np.searchsorted(self.times, self.times[-1] - duration - 1e-9 * max(self.dt, 1.0))
        return Trajectory(self.times[start:], self.states[start:], self.metadata,
                          self.final_time, self.final_state, self.last_step)


def _dp45_loop(field, args, t0, t1, x0, rtol, atol, h, hmax, dt_out, n_out, record):
    d = x0.shape[0]
    out = np.empty((n_out, d))
    span = t1 - t0
    min_h = 1e-12 * span
    x = x0.copy()
    t = t0
    K = np.empty((7, d))
    K[0] = field(t, x, args)

    cap = 64 if record else 1
    rec_t = np.empty(cap)
    rec_h = np.empty(cap)
    rec_x = np.empty((cap, d))
    rec_k = np.empty((cap, 7, d))
    n_rec = 0

    if h <= 0.0:
        # Hairer & Wanner's starting step heuristic.
        scale = atol + rtol * np.abs(x)
        d0 = math.sqrt(np.mean((x / scale) ** 2))
        d1 = math.sqrt(np.mean((K[0] / scale) ** 2))
        if d0 < 1e-5 or d1 < 1e-5:
            h0 = 1e-6
        else:
            h0 = 0.01 * d0 / d1
        h0 = min(h0, span)
        f1 = field(t + h0, x + h0 * K[0], args)
        d2 = math.sqrt(np.mean(((f1 - K[0]) / scale) ** 2)) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** 0.2
        h = min(100 * h0, h1)
    h = min(h, hmax, span)

    k_out = 0
    if n_out > 0:
        out[0] = x
        k_out = 1

    err_old = 1e-4
    n_steps = 0
    n_rej = 0
    status = STATUS_OK
    rejected_last = False
    nonfinite = False
    xs = x.copy()
    while t < t1:
        last = False
        if t + h >= t1 or (t1 - (t + h)) < 1e-12 * span:
            h = t1 - t
            last = True
        for s in range(1, 7):
            xs = x.copy()
            for j in range(s):
                a = _A[s, j]
                if a != 0.0:
                    xs += (h * a) * K[j]
            K[s] = field(t + _C[s] * h, xs, args)
        x_new = xs
        err = np.zeros(d)
        for j in range(7):
            e = _E[j]
            if e != 0.0:
                err += (h * e) * K[j]
        scale = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
        en = np.max(np.abs(err) / scale)

        if not np.isfinite(en):
            nonfinite = True
            n_rej += 1
            h *= _FAC_MIN
            rejected_last = True
        elif en <= 1.0:
            nonfinite = False
            t_new = t1 if last else t + h
            if record:
                if n_rec == cap:
                    cap *= 2
                    nt = np.empty(cap)
                    nh = np.empty(cap)
                    nx = np.empty((cap, d))
                    nk = np.empty((cap, 7, d))
                    nt[:n_rec] = rec_t[:n_rec]
                    nh[:n_rec] = rec_h[:n_rec]
                    nx[:n_rec] = rec_x[:n_rec]
                    nk[:n_rec] = rec_k[:n_rec]
                    rec_t, rec_h, rec_x, rec_k = nt, nh, nx, nk
                rec_t[n_rec] = t
                rec_h[n_rec] = h
                rec_x[n_rec] = x
                rec_k[n_rec] = K
                n_rec += 1
            if k_out < n_out:
                tol_t = 1e-9 * dt_out
                Q = K.T.copy() @ _P
                while k_out < n_out:
                    ts = t0 + k_out * dt_out
                    if ts > t_new + tol_t:
                        break
                    if abs(ts - t_new) <= tol_t:
                        out[k_out] = x_new
                    else:
                        th = (ts - t) / h
                        w = np.array([th, th * th, th ** 3, th ** 4])
                        out[k_out] = x + h * (Q @ w)
                    k_out += 1
            t = t_new
            x = x_new
            K[0] = K[6]
            n_steps += 1
            if en == 0.0:
                fac = _FAC_MAX
            else:
                fac = _SAFETY * en ** (-_PI_ALPHA) * err_old ** _PI_BETA
                fac = min(_FAC_MAX, max(_FAC_MIN, fac))
            if rejected_last:
                fac = min(fac, 1.0)
            err_old = max(en, 1e-4)
            rejected_last = False
            if not last:
                h = min(h * fac, hmax)
        else:
            n_rej += 1
            fac = max(_FAC_MIN, _SAFETY * en ** -0.2)
            h *= fac
            rejected_last = True
        if h < min_h and t < t1:
            status = STATUS_DIVERGED if nonfinite else STATUS_UNDERFLOW
            break
    return (status, t, x, h, k_out, out, n_steps, n_rej,
            rec_t[:n_rec], rec_h[:n_rec], rec_x[:n_rec], rec_k[:n_rec])


_dp45_loop_jit = njit(cache=True)(_dp45_loop)


def _run_loop(field, args, t0, t1, x0, config, n_out, record=False, h=None):
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    if not t1 > t0:
        raise DomainError(f"t1 must exceed t0 (got {t0}, {t1})")
    if h is None:
        h = config.initial_step
    if isinstance(field, CPUDispatcher):
        loop = _dp45_loop_jit
        args = tuple(args)
    else:
        loop = _dp45_loop
    res = loop(field, args, float(t0), float(t1), x0, float(config.rtol), float(config.atol),
               float(h), float(config.max_step), float(config.dense_output_dt), int(n_out),
               bool(record))
    status, t_reached = res[0], res[1]
    if status == STATUS_DIVERGED:
        raise DivergenceError(f"non-finite state near t={t_reached:.6g}")
    if status == STATUS_UNDERFLOW:
        raise IntegrationError(f"step size underflow at t={t_reached:.6g}")
    if not np.all(np.isfinite(res[2])):
        raise DivergenceError(f"non-finite state at t={t_reached:.6g}")
    return res


def _adapt(field, args):
    if args is None:
        if isinstance(field, CPUDispatcher):
            return field, ()
        return (lambda t, x, _a: field(t, x)), ()
    return field, args


def integrate(field: Callable, x0, t_span: Sequence[float],
              config: Optional[IntegratorConfig] = None, args: Optional[tuple] = None,
              metadata: Optional[dict] = None, h0: Optional[float] = None) -> Trajectory:
    """Integrate ``dx/dt = field(t, x[, args])`` over ``t_span``.

    If ``args`` is None the field is called as ``field(t, x)``; otherwise as
    ``field(t, x, args)``. ``h0`` overrides the initial step (used to continue
    a run segment by segment without restarting the controller).

    Raises
    ------
    IntegrationError
        Step size fell below ``1e-12`` times the span.
    DivergenceError
        The state became non-finite.
    """
    config = config or IntegratorConfig()
    t0, t1 = float(t_span[0]), float(t_span[1])
    field, args = _adapt(field, args)
    dt = config.dense_output_dt
    n_out = int(math.floor((t1 - t0) / dt + 1e-9)) + 1
    res = _run_loop(field, args, t0, t1, x0, config, n_out, h=h0)
    _, t_end, x_end, h_last, k_out, out, n_steps, n_rej = res[:8]
    times = t0 + dt * np.arange(k_out)
    return Trajectory(times, out[:k_out], dict(metadata or {}), t_end, x_end.copy(),
                      h_last, n_steps, n_rej)


class StepInterpolant:
    """Piecewise quartic dense output reconstructed from recorded steps."""

    def __init__(self, t_starts, steps, x_starts, stages):
        self.t = np.asarray(t_starts)
        self.h = np.asarray(steps)
        self.x = np.asarray(x_starts)
        # (m, d, 4) polynomial coefficients in theta
        self.q = np.einsum("msd,sp->mdp", np.asarray(stages), _P)
        self.t_lo = float(self.t[0])
        self.t_hi = float(self.t[-1] + self.h[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        idx = np.clip(np.searchsorted(self.t, tt, side="right") - 1, 0, len(self.t) - 1)
        th = (tt - self.t[idx]) / self.h[idx]
        w = np.stack([th, th ** 2, th ** 3, th ** 4], axis=-1)
        vals = self.x[idx] + self.h[idx][:, None] * np.einsum("mdp,mp->md", self.q[idx], w)
        return vals[0] if scalar else vals


class DelayHistory:
    """Continuous record of a solution used to look up delayed states.

    Pieces are callables valid on ``[t_lo, t_hi]``; later pieces take
    precedence at shared endpoints.
    """

    def __init__(self, delay: float):
        if not delay > 0:
            raise DomainError("delay must be positive")
        self.delay = float(delay)
        self._pieces: list[tuple[float, float, Callable]] = []

    @classmethod
    def from_callable(cls, func: Callable, delay: float, t0: float) -> "DelayHistory":
        hist = cls(delay)
        hist.append(t0 - delay, t0, lambda t: np.asarray(func(t), dtype=float))
        return hist

    @classmethod
    def from_samples(cls, times, states, delay: float) -> "DelayHistory":
        from scipy.interpolate import CubicSpline

        spline = CubicSpline(np.asarray(times), np.asarray(states), axis=0)
        hist = cls(delay)
        hist.append(float(times[0]), float(times[-1]), spline)
        return hist

    def append(self, t_lo: float, t_hi: float, func: Callable):
        self._pieces.append((float(t_lo), float(t_hi), func))

    @property
    def t_lo(self):
        return self._pieces[0][0]

    @property
    def t_hi(self):
        return self._pieces[-1][1]

    @property
    def span(self):
        return self.t_hi - self.t_lo

    def __call__(self, t: float):
        for lo, hi, func in reversed(self._pieces):
            if lo - 1e-12 <= t <= hi + 1e-12:
                return func(t)
        raise DomainError(f"t={t} is outside the stored history [{self.t_lo}, {self.t_hi}]")


def integrate_dde(field: Callable, history, delay: float, t_span: Sequence[float],
                  config: Optional[IntegratorConfig] = None) -> tuple[Trajectory, DelayHistory]:
    """Solve ``dx/dt = field(t, x(t), x(t - delay))`` by the method of steps.

    ``history`` is a ``DelayHistory`` covering at least ``[t0 - delay, t0]`` or
    a callable defined there. Each delay interval is integrated as an ODE whose
    delayed argument is read from the previous interval's dense interpolant;
    the step controller restarts at every interval boundary.

    Returns the uniformly sampled trajectory and the extended history.
    """
    config = config or IntegratorConfig()
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise DomainError("t1 must exceed t0")
    if not isinstance(history, DelayHistory):
        history = DelayHistory.from_callable(history, delay, t0)
    if history.t_lo > t0 - delay + 1e-12 or history.t_hi < t0 - 1e-12:
        raise DomainError(
            f"history covers [{history.t_lo}, {history.t_hi}], needs [{t0 - delay}, {t0}]")

    x = np.asarray(history(t0), dtype=float).copy()
    dt = config.dense_output_dt
    n_out = int(math.floor((t1 - t0) / dt + 1e-9)) + 1
    grid = t0 + dt * np.arange(n_out)
    out = np.empty((n_out, x.shape[0]))
    out[0] = x
    filled = 1
    n_steps = n_rej = 0
    a = t0
    while a < t1 - 1e-12 * (t1 - t0):
        b = min(a + delay, t1)

        def rhs(t, xx, _args, _hist=history):
            return field(t, xx, _hist(t - delay))

        res = _run_loop(rhs, (), a, b, x, config, 0, record=True)
        interp = StepInterpolant(*res[8:12])
        history.append(a, b, interp)
        x = res[2].copy()
        n_steps += res[6]
        n_rej += res[7]
        hi = np.searchsorted(grid, b + 1e-9 * dt, side="right")
        if hi > filled:
            out[filled:hi] = interp(grid[filled:hi])
            filled = hi
        a = b
    traj = Trajectory(grid[:filled], out[:filled], {"delay": delay}, t1, x, 0.0, n_steps, n_rej)
    return traj, history


def integrate_variational(jacobian: Callable[[float], np.ndarray], period: float, dim: int,
                          config: Optional[IntegratorConfig] = None) -> np.ndarray:
    """Monodromy matrix of ``dPhi/dt = J(t) Phi``, ``Phi(0) = I``, over one period.

    All columns of ``Phi`` are advanced together under one error control.
    """
    if not period > 0:
        raise DomainError("period must be positive")
    config = config or IntegratorConfig(rtol=1e-9, atol=1e-10)

    def rhs(t, phi, _args):
        return (jacobian(t) @ phi.reshape(dim, dim)).ravel()

    res = _run_loop(rhs, (), 0.0, float(period), np.eye(dim).ravel(), config, 0)
    return res[2].reshape(dim, dim)


def write_trajectory_csv(traj: Trajectory, path, columns: Sequence[str],
                         header_comment: Optional[str] = None):
    """Write ``t`` plus state columns at full double precision."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["t", *columns])
        for t, row in zip(traj.times, traj.states):
            writer.writerow([repr(float(t))] + [f"{v:.17g}" for v in row])
