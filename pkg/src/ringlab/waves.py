"""Rotating-wave orbits of FHN rings and their Floquet stability.

A Mode-1 rotating wave on a directed ring satisfies
``x_{j+1}(t + tau) = x_j(t)`` with ``tau = T / n``. Orbits are found by
simulation from phase-staggered initial conditions, then refined with a
Poincare section on ``y_1`` at high integration accuracy. Stability is read
from the monodromy matrix of the full 2n-dimensional linearization.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline

from .detect import WAVE, run_and_classify, upward_crossings
from .errors import DomainError, NotPeriodicError, PreconditionError
from .integrate import (DelayHistory, IntegratorConfig, Trajectory, integrate_dde,
                        integrate_variational)
from .network import (CouplingConfig, FhnParams, Topology, laplacian, network_jacobian,
                      simulate)

log = logging.getLogger(__name__)

FINE = IntegratorConfig(rtol=1e-11, atol=1e-12, dense_output_dt=0.01)
VARIATIONAL = IntegratorConfig(rtol=1e-10, atol=1e-12)
RESIDUAL_TOL = 1e-6
STABILITY_MARGIN = 1e-3
SAMPLES_PER_PERIOD = 2000


@dataclass
class PeriodicOrbit:
    """One period of a network orbit starting on the section ``y_1 = level`` (upward)."""

    T: float
    times: np.ndarray
    samples: np.ndarray
    tau: float
    residual: float
    sigma: float = 0.0
    level: float = 0.0
    params: FhnParams = field(default_factory=FhnParams)
    topology: Optional[Topology] = None

    @property
    def n(self) -> int:
        return self.samples.shape[1] // 2

    @property
    def delay(self) -> float:
        """Delay of the auxiliary single-node system, ``T - tau``."""
        return self.T - self.tau

    def spline(self) -> CubicSpline:
        vals = self.samples.copy()
        vals[-1] = vals[0]
        return CubicSpline(self.times, vals, axis=0, bc_type="periodic")

    def node_trace(self, j: int) -> np.ndarray:
        """(z_j, y_j) over the period, 0-based node index."""
        return self.samples[:, [j, self.n + j]]

    def header(self) -> dict:
        return {"n": self.n, "sigma": self.sigma, "T": self.T, "tau": self.tau,
                "residual": self.residual}


@dataclass
class FloquetResult:
    multipliers: np.ndarray
    trivial_defect: float
    stable: bool
    max_nontrivial: float
    liouville_defect: float
    monodromy: np.ndarray = field(repr=False, default=None)


def reference_cycle(params: Optional[FhnParams] = None, settle: float = 1000.0):
    """Single-node limit cycle as ``(T0, spline over [0, T0])`` starting at the upward section."""
    return _reference_cycle(params or FhnParams(), settle)


@functools.lru_cache(maxsize=8)
def _reference_cycle(params: FhnParams, settle: float):
    top = Topology.chain(1)
    cp = CouplingConfig(top, 0.0)
    tr = simulate(cp, np.array([0.0, 0.1]), (0.0, settle), params, FINE)
    y = tr.states[:, 1]
    tc = upward_crossings(y[-int(200 / tr.dt):], tr.dt, tr.times[-int(200 / tr.dt)], 0.0)
    T0 = float(np.mean(np.diff(tc)))
    t_start = tc[-3]
    x_start = _state_at(tr, t_start)
    one = simulate(cp, x_start, (0.0, T0), params,
                   IntegratorConfig(rtol=1e-11, atol=1e-12, dense_output_dt=T0 / 1000))
    vals = one.states.copy()
    if len(one.times) < 1001:
        vals = np.vstack([vals, one.final_state])
        times = np.append(one.times, T0)
    else:
        times = one.times
    vals[-1] = vals[0]
    return T0, CubicSpline(times, vals, axis=0, bc_type="periodic")


def _state_at(tr: Trajectory, t: float) -> np.ndarray:
    i = int(np.clip(np.searchsorted(tr.times, t) - 2, 0, len(tr.times) - 4))
    sl = slice(i, i + 4)
    return np.array([np.polyval(np.polyfit(tr.times[sl] - t, tr.states[sl, c], 3), 0.0)
                     for c in range(tr.states.shape[1])])


def staggered_state(n: int, params: Optional[FhnParams] = None, phase0: float = 0.0,
                    mode: int = 1) -> np.ndarray:
    """Node j placed at phase ``phase0 - mode * (j-1)/n`` of the single-node cycle."""
    T0, cyc = reference_cycle(params)
    x = np.empty(2 * n)
    for j in range(n):
        s = cyc(((phase0 - mode * j / n) % 1.0) * T0)
        x[j], x[n + j] = s[0], s[1]
    return x


def _section_crossing(coupling, x, params, t_max, level):
    """Integrate from ``x`` until ``y_1`` crosses ``level`` upwards; return (t, state)."""
    n = coupling.topology.n
    tr = simulate(coupling, x, (0.0, t_max), params, FINE)
    y1 = tr.states[:, n]
    # skip a short initial stretch so a start on the section is not re-detected
    start = max(1, int(0.05 * t_max / tr.dt))
    tc = upward_crossings(y1[start:], tr.dt, tr.times[start], level)
    if tc.size == 0:
        raise NotPeriodicError("no section crossing")
    t_c = _refine_crossing(coupling, tr, tc[0], params, level)
    state = simulate(coupling, x, (0.0, t_c), params, FINE).final_state
    return t_c, state


def _refine_crossing(coupling, tr, t_guess, params, level):
    n = coupling.topology.n
    i = int(np.clip(np.searchsorted(tr.times, t_guess) - 3, 0, len(tr.times) - 6))
    sl = slice(i, i + 6)
    spl = CubicSpline(tr.times[sl], tr.states[sl, n] - level)
    roots = [r for r in spl.roots(extrapolate=False) if tr.times[i] <= r <= tr.times[i + 5]]
    if not roots:
        return float(t_guess)
    return float(min(roots, key=lambda r: abs(r - t_guess)))


def _neighbour_shift(orbit_spline, T, n, level, grid):
    """Mean time between upward section crossings of consecutive nodes."""
    vals = orbit_spline(grid)
    first = []
    for j in range(n):
        y = vals[:, n + j]
        # periodic: look over two periods
        yy = np.concatenate([y[:-1], y])
        tt = np.concatenate([grid[:-1], grid + T])
        idx = np.nonzero((yy[:-1] < level) & (yy[1:] >= level))[0]
        frac = (level - yy[idx]) / (yy[idx + 1] - yy[idx])
        tc = tt[idx] + frac * (tt[idx + 1] - tt[idx])
        first.append(tc[0] % T)
    first = np.array(first)
    taus = (np.roll(first, -1) - first) % T
    return taus


def refine_orbit(coupling: CouplingConfig, x_start, T_guess: float,
                 params: Optional[FhnParams] = None, level: Optional[float] = None,
                 max_iter: int = 60) -> PeriodicOrbit:
    """Polish an approximately periodic state into a PeriodicOrbit.

    Iterates the section return map at tight tolerance until the periodicity
    residual drops below 1e-6, falling back to Newton shooting.
    """
    params = params or FhnParams()
    n = coupling.topology.n
    settle = simulate(coupling, x_start, (0.0, 20 * T_guess), params, FINE)
    if level is None:
        level = float(np.mean(settle.tail(3 * T_guess).states[:, n]))
    t_c, x0 = _section_crossing(coupling, settle.final_state, params, 1.5 * T_guess, level)
    T = T_guess
    residual = math.inf
    for _ in range(max_iter):
        T, x1 = _section_crossing(coupling, x0, params, 1.5 * T_guess, level)
        residual = float(np.max(np.abs(x1 - x0)))
        x0 = x1
        if residual <= RESIDUAL_TOL * 0.1:
            break
    if residual > RESIDUAL_TOL:
        x0, T, residual = _newton_polish(coupling, x0, T, params, level)
    dt = T / SAMPLES_PER_PERIOD
    one = simulate(coupling, x0, (0.0, T), params,
                   IntegratorConfig(rtol=1e-11, atol=1e-12, dense_output_dt=dt))
    times, samples = one.times, one.states
    if times[-1] < T - 1e-9:
        times = np.append(times, T)
        samples = np.vstack([samples, one.final_state])
    else:
        times[-1] = T
        samples = samples.copy()
        samples[-1] = one.final_state
    residual = float(np.max(np.abs(one.final_state - x0)))
    orbit = PeriodicOrbit(T, times, samples, 0.0, residual, coupling.sigma, level, params,
                          coupling.topology)
    grid = np.linspace(0.0, T, 4 * SAMPLES_PER_PERIOD + 1)
    taus = _neighbour_shift(orbit.spline(), T, n, level, grid)
    orbit.tau = float(np.mean(taus))
    return orbit


def _newton_polish(coupling, x0, T, params, level, iters=8):
    """Newton shooting on (x0, T) with the section ``y_1 = level`` as phase condition."""
    from .network import fhn_args, fhn_rhs

    n = coupling.topology.n
    d = 2 * n
    args = fhn_args(params, coupling)
    lap_s = coupling.sigma * laplacian(coupling.topology)
    residual = math.inf
    for _ in range(iters):
        xs, M = _flow_and_monodromy(coupling, x0, T, params, lap_s)
        r = xs - x0
        residual = float(np.max(np.abs(r)))
        if residual <= RESIDUAL_TOL * 0.1:
            break
        f_end = fhn_rhs(0.0, xs, args)
        A = np.zeros((d + 1, d + 1))
        A[:d, :d] = M - np.eye(d)
        A[:d, d] = f_end
        A[d, n] = 1.0
        rhs = np.concatenate([-r, [level - x0[n]]])
        delta = np.linalg.lstsq(A, rhs, rcond=None)[0]
        x0 = x0 + delta[:d]
        T = T + delta[d]
    return x0, T, residual


def _flow_and_monodromy(coupling, x0, T, params, lap_s):
    from .integrate import _run_loop
    from .network import fhn_args, fhn_rhs

    d = x0.shape[0]
    args = fhn_args(params, coupling)

    def rhs(t, w, _a):
        x = w[:d]
        phi = w[d:].reshape(d, d)
        return np.concatenate([fhn_rhs(t, x, args),
                               (network_jacobian(x, params, lap_s) @ phi).ravel()])

    w0 = np.concatenate([x0, np.eye(d).ravel()])
    res = _run_loop(rhs, (), 0.0, T, w0, VARIATIONAL, 0)
    return res[2][:d], res[2][d:].reshape(d, d)


def find_wave_orbit(n: int, sigma: float, seed: int = 0, params: Optional[FhnParams] = None,
                    t_final: float = 20000.0, x0=None) -> Optional[PeriodicOrbit]:
    """Mode-1 rotating wave of the directed n-ring, or None if none is reached.

    The run starts from ``x0`` if given, else from phase-staggered states on
    the single-node cycle with a seed-dependent starting phase.
    """
    if n < 3:
        raise DomainError("rotating waves need n >= 3")
    params = params or FhnParams()
    coupling = CouplingConfig(Topology.ring(n), sigma)
    if x0 is None:
        phase0 = float(np.random.default_rng(seed).uniform())
        x0 = staggered_state(n, params, phase0)
    result, seg = run_and_classify(coupling, x0, params, t_final)
    if result.kind != WAVE or result.mode != 1:
        return None
    return refine_orbit(coupling, seg.final_state, result.metrics["T"], params)


def sync_orbit(n: int, sigma: float, params: Optional[FhnParams] = None) -> PeriodicOrbit:
    """The synchronous orbit of the ring: every node on the single-node cycle."""
    params = params or FhnParams()
    coupling = CouplingConfig(Topology.ring(n), sigma)
    T0, cyc = reference_cycle(params)
    x = np.empty(2 * n)
    s = cyc(0.0)
    x[:n], x[n:] = s[0], s[1]
    orbit = refine_orbit(coupling, x, T0, params)
    orbit.tau = 0.0
    return orbit


def check_aux_relation(orbit: PeriodicOrbit, n: Optional[int] = None, eps: float = 0.01) -> bool:
    """``|T / delay * (n - 1) - n| < eps`` with delay ``T - tau`` of the auxiliary system."""
    return aux_relation_defect(orbit.T, orbit.tau, n or orbit.n) < eps


def aux_relation_defect(T: float, tau: float, n: int) -> float:
    if not 0 < tau < T:
        return math.inf
    return abs(T / (T - tau) * (n - 1) - n)


def orbit_jacobian(orbit: PeriodicOrbit, coupling: CouplingConfig, params: Optional[FhnParams] = None):
    params = params or orbit.params
    spl = orbit.spline()
    lap_s = coupling.sigma * laplacian(coupling.topology)
    T = orbit.T

    def jac(t):
        return network_jacobian(spl(t % T), params, lap_s)

    return jac


def floquet_multipliers(orbit: PeriodicOrbit, coupling: Optional[CouplingConfig] = None,
                        params: Optional[FhnParams] = None) -> FloquetResult:
    """Multipliers of the linearized network along ``orbit``."""
    if orbit.residual > RESIDUAL_TOL:
        raise PreconditionError(f"orbit residual {orbit.residual:.3g} exceeds {RESIDUAL_TOL}")
    params = params or orbit.params
    coupling = coupling or CouplingConfig(orbit.topology or Topology.ring(orbit.n), orbit.sigma)
    d = 2 * orbit.n
    jac = orbit_jacobian(orbit, coupling, params)
    M = integrate_variational(jac, orbit.T, d, VARIATIONAL)
    mu = np.linalg.eigvals(M)
    i_triv = int(np.argmin(np.abs(mu - 1.0)))
    others = np.delete(mu, i_triv)
    max_nt = float(np.max(np.abs(others))) if others.size else 0.0

    grid = np.linspace(0.0, orbit.T, 8 * SAMPLES_PER_PERIOD + 1)
    spl = orbit.spline()
    traces = np.array([np.trace(network_jacobian(x, params, coupling.sigma * laplacian(coupling.topology)))
                       for x in spl(grid)])
    expected = math.exp(simpson(traces, x=grid))
    det = float(np.real(np.prod(mu)))
    liouville = abs(det - expected) / abs(expected)
    return FloquetResult(mu, float(abs(mu[i_triv] - 1.0)), max_nt <= 1.0 - STABILITY_MARGIN,
                         max_nt, liouville, M)


def aux_periodicity_defect(orbit: PeriodicOrbit, periods: int = 1,
                           config: Optional[IntegratorConfig] = None) -> float:
    """Integrate the auxiliary delay system seeded with node 1's orbit history.

    ``ds/dt = f(s) - sigma * BC (s(t) - s(t - delay))`` with ``BC = diag(0, 1)``
    and delay ``T - tau``. Returns ``max |s(t) - s(t + T)|`` over the last period.
    """
    params = orbit.params
    a, b, g = params.as_tuple()
    sigma = orbit.sigma
    T = orbit.T
    delay = orbit.delay
    spl = orbit.spline()
    n = orbit.n

    def node1(t):
        v = spl(t % T)
        return np.array([v[0], v[n]])

    def field(t, s, s_del):
        z, y = s
        return np.array([a * (y - b * z), y - g * y ** 3 - z - sigma * (y - s_del[1])])

    hist = DelayHistory.from_callable(node1, delay, 0.0)
    config = config or IntegratorConfig(rtol=1e-10, atol=1e-12, dense_output_dt=T / 500)
    span = (periods + 1) * T
    _, hist = integrate_dde(field, hist, delay, (0.0, span), config)
    grid = np.linspace(span - 2 * T, span - T, 1001)
    a_vals = np.array([hist(t) for t in grid])
    b_vals = np.array([hist(t + T) for t in grid])
    return float(np.max(np.abs(a_vals - b_vals)))


@dataclass
class BoundaryPoint:
    n: int
    sigma_critical: Optional[float]
    max_multiplier_below: Optional[float] = None
    max_multiplier_above: Optional[float] = None
    note: str = ""


def _wave_status(n, sigma, params, x0, t_final):
    """(stable?, max nontrivial multiplier or None, orbit or None)."""
    try:
        orbit = find_wave_orbit(n, sigma, params=params, t_final=t_final, x0=x0)
    except (NotPeriodicError, PreconditionError) as exc:
        log.info("n=%d sigma=%.4g: wave search failed: %s", n, sigma, exc)
        return False, None, None
    if orbit is None or orbit.residual > RESIDUAL_TOL:
        return False, None, None
    fl = floquet_multipliers(orbit)
    return fl.stable, fl.max_nontrivial, orbit


def wave_stability_boundary(n_range: Sequence[int], sigma_range: tuple[float, float],
                            sigma_step: float, params: Optional[FhnParams] = None,
                            t_final: float = 5000.0) -> list[BoundaryPoint]:
    """Per n, the coupling strength where the Mode-1 wave stops being a stable orbit.

    Sigma is stepped upward from ``sigma_range[0]``, continuing each found wave
    into the next step; the first stable -> unstable/absent transition is then
    bisected to ``sigma_step / 8``.
    """
    if len(n_range) == 0 or not sigma_range[1] > sigma_range[0] or not sigma_step > 0:
        raise DomainError("empty range")
    params = params or FhnParams()
    points = []
    sigmas = np.arange(sigma_range[0], sigma_range[1] + 1e-9, sigma_step)
    for n in n_range:
        prev = None  # (sigma, mu, orbit)
        bracket = None
        for s in sigmas:
            seed_state = prev[2].samples[0] if prev else None
            ok, mu, orbit = _wave_status(n, float(s), params, seed_state, t_final)
            if ok:
                prev = (float(s), mu, orbit)
                continue
            if prev is not None:
                bracket = (prev, (float(s), mu))
            break
        if bracket is None:
            note = "boundary-outside-range"
            if prev is not None:
                note += " (stable up to range end)"
            points.append(BoundaryPoint(n, None, prev[1] if prev else None, None, note))
            continue
        (lo, mu_lo, orb_lo), (hi, mu_hi) = bracket
        while hi - lo > sigma_step / 8 + 1e-12:
            mid = 0.5 * (lo + hi)
            ok, mu, orbit = _wave_status(n, mid, params, orb_lo.samples[0], t_final)
            if ok:
                lo, mu_lo, orb_lo = mid, mu, orbit
            else:
                hi, mu_hi = mid, mu
        points.append(BoundaryPoint(n, 0.5 * (lo + hi), mu_lo, mu_hi))
    return points
