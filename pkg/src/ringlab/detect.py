"""Classification of network runs: synchronization, rotating waves, or neither."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from .errors import DomainError, NotPeriodicError
from .integrate import Trajectory
from .network import Topology

SYNC_TOL = 2e-5
ORBIT_TOL = 1e-4
PHASE_TOL = 1e-2
SYNC_WINDOW = 1000.0
TAIL_FRACTION = 0.2

SYNC = "sync"
WAVE = "wave"
NONE = "none"


@dataclass
class WaveDescriptor:
    T: float
    tau: float
    mode: int
    taus: np.ndarray
    orbit_mismatch: float
    phase_defect: float


@dataclass
class Classification:
    kind: str
    mode: Optional[int] = None
    metrics: dict = field(default_factory=dict)
    checkpoint_time: Optional[float] = None

    @property
    def T(self):
        return self.metrics.get("T")

    @property
    def tau(self):
        return self.metrics.get("tau")

    def to_record(self, n=None, sigma=None, seed=None, sample_index=None) -> dict:
        m = self.metrics
        return {
            "n": n, "sigma": sigma, "seed": seed, "sample_index": sample_index,
            "kind": self.kind, "mode": self.mode,
            "T": _num(m.get("T")) if self.kind == WAVE else None,
            "tau": _num(m.get("tau")) if self.kind == WAVE else None,
            "sync_error": _num(m.get("sync_error")),
            "checkpoint_time": self.checkpoint_time,
        }


def _num(v):
    return None if v is None or not math.isfinite(v) else float(v)


def _neighbour_pairs(topology: Optional[Topology], n: int) -> np.ndarray:
    if topology is None:
        topology = Topology.ring(n) if n > 1 else Topology.chain(n)
    pairs = topology.neighbour_pairs()
    # undirected edges appear twice; keep one orientation
    keep = {tuple(sorted(p)) for p in pairs.tolist()}
    return np.array(sorted(keep), dtype=int).reshape(-1, 2)


def sync_error(states: np.ndarray, pairs: np.ndarray) -> float:
    """Mean |x_a - x_b| over samples, neighbour pairs and both components."""
    n = states.shape[1] // 2
    if len(pairs) == 0:
        return 0.0
    a, b = pairs[:, 0], pairs[:, 1]
    dz = np.abs(states[:, a] - states[:, b])
    dy = np.abs(states[:, n + a] - states[:, n + b])
    return float(0.5 * (dz.mean() + dy.mean()))


def detect_sync(traj: Trajectory, window: float = SYNC_WINDOW,
                topology: Optional[Topology] = None) -> tuple[bool, float]:
    """Synchronized iff the mean neighbour error over the trailing window is below 2e-5."""
    span = traj.times[-1] - traj.times[0]
    if window > span + 1e-9 * max(span, 1.0):
        raise DomainError(f"window {window} exceeds trajectory span {span}")
    topology = topology or traj.metadata.get("topology")
    n = traj.states.shape[1] // 2
    seg = traj.tail(window)
    err = sync_error(seg.states, _neighbour_pairs(topology, n))
    return err < SYNC_TOL, err


def upward_crossings(signal, dt: float = 0.1, t0: float = 0.0, level: Optional[float] = None):
    """Times where ``signal`` crosses ``level`` (default: its mean) upwards."""
    s = np.asarray(signal, dtype=float)
    m = s.mean() if level is None else level
    idx = np.nonzero((s[:-1] < m) & (s[1:] >= m))[0]
    frac = (m - s[idx]) / (s[idx + 1] - s[idx])
    return t0 + dt * (idx + frac)


def estimate_period_stats(signal, dt: float = 0.1) -> tuple[float, float]:
    """Mean period from upward mean-crossings, and its relative cycle-to-cycle jitter."""
    s = np.asarray(signal, dtype=float)
    if s.size < 4 or np.ptp(s) < 1e-12:
        raise NotPeriodicError("signal is constant")
    tc = upward_crossings(s, dt)
    if tc.size < 3:
        raise NotPeriodicError(f"only {tc.size} mean-crossings")
    periods = np.diff(tc)
    period = (tc[-1] - tc[0]) / (tc.size - 1)
    return float(period), float(np.std(periods) / period)


def estimate_period(signal, dt: float = 0.1) -> float:
    return estimate_period_stats(signal, dt)[0]


def _xcorr_shift(lead: np.ndarray, lag: np.ndarray, period: float, dt: float) -> float:
    """Shift s in [0, period) maximizing the correlation of lag(t + s) with lead(t).

    Circular correlation over a window of whole samples spanning two periods,
    refined by a parabola through the peak and its neighbours.
    """
    m = min(lead.size, int(round(2 * period / dt)))
    a = lead[-m:] - lead[-m:].mean()
    b = lag[-m:] - lag[-m:].mean()
    corr = np.fft.irfft(np.conj(np.fft.rfft(a)) * np.fft.rfft(b), m)
    max_lag = int(math.ceil(period / dt))
    corr = corr[: min(max_lag + 1, m)]
    k = int(np.argmax(corr))
    if 0 < k < corr.size - 1:
        c0, c1, c2 = corr[k - 1], corr[k], corr[k + 1]
        denom = c0 - 2 * c1 + c2
        off = 0.5 * (c0 - c2) / denom if denom != 0 else 0.0
    else:
        off = 0.0
    return ((k + off) * dt) % period


def _mismatch(spline_next, spline_cur, tau: float, t_grid: np.ndarray) -> float:
    return float(np.mean(np.abs(spline_next(t_grid + tau) - spline_cur(t_grid))))


def wave_metrics(traj: Trajectory, n: Optional[int] = None) -> dict:
    """Period, neighbour shifts and orbit mismatches over the converged tail.

    The tail is the trailing 20% of the trajectory, extended to at least two
    and a half periods. Neighbours follow ring order: node j+1 listens to node j.
    """
    n = n or traj.states.shape[1] // 2
    dt = traj.dt
    span = traj.times[-1] - traj.times[0]
    y1 = traj.states[:, n]
    probe = traj.tail(max(TAIL_FRACTION * span, min(span, 200.0)))
    T, jitter = estimate_period_stats(probe.states[:, n], dt)
    tail = traj.tail(min(span, max(TAIL_FRACTION * span, 2.5 * T)))
    t = tail.times - tail.times[0]
    ys = tail.states[:, n:]
    if t[-1] < 2 * T:
        raise NotPeriodicError("tail shorter than two periods")
    splines = [CubicSpline(t, ys[:, j]) for j in range(n)]
    taus = np.empty(n)
    mism = np.empty(n)
    for j in range(n):
        nxt = (j + 1) % n
        coarse = _xcorr_shift(ys[:, j], ys[:, nxt], T, dt)
        t_grid = np.linspace(t[-1] - T - coarse - dt, t[-1] - coarse - dt, 400)

        def obj(s, _j=j, _n=nxt, _g=t_grid):
            return _mismatch(splines[_n], splines[_j], s, _g)

        lo, hi = coarse - 2 * dt, coarse + 2 * dt
        lo = max(lo, -t_grid[0])
        hi = min(hi, t[-1] - t_grid[-1])
        res = minimize_scalar(obj, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-7})
        tau_j = res.x if res.fun <= obj(coarse) else coarse
        taus[j] = tau_j % T
        mism[j] = min(res.fun, obj(coarse))
    return {"T": T, "period_jitter": jitter, "taus": taus, "mismatch": mism}


def match_wave_mode(metrics: dict, n: int, modes: Iterable[int]) -> Optional[WaveDescriptor]:
    """Apply the identical-orbit and equal-shift criteria for each candidate mode."""
    T = metrics["T"]
    taus = metrics["taus"]
    mism = float(np.max(metrics["mismatch"]))
    if mism >= ORBIT_TOL:
        return None
    for k in modes:
        defect = float(np.max(np.abs(n * taus - k * T)))
        if defect < PHASE_TOL and np.all(taus > 0) and np.all(taus < T):
            return WaveDescriptor(T, float(np.mean(taus)), k, taus.copy(), mism, defect)
    return None


def detect_rotating_wave(traj: Trajectory, mode: int = 1,
                         n: Optional[int] = None) -> Optional[WaveDescriptor]:
    """Mode-``mode`` rotating wave on a ring trajectory, or None."""
    n = n or traj.states.shape[1] // 2
    metrics = wave_metrics(traj, n)
    return match_wave_mode(metrics, n, [mode])


def classify_segment(seg: Trajectory, topology: Topology,
                     window: float = SYNC_WINDOW) -> Classification:
    """Classify the state of a run from its most recent ``window`` time units."""
    n = topology.n
    ok, err = detect_sync(seg, window, topology)
    metrics = {"sync_error": err}
    if ok:
        return Classification(SYNC, None, metrics, float(seg.times[-1]))
    if topology.kind != "ring" or n < 2:
        return Classification(NONE, None, metrics, float(seg.times[-1]))
    try:
        wm = wave_metrics(seg.tail(window), n)
    except NotPeriodicError as exc:
        metrics["error"] = str(exc)
        return Classification(NONE, None, metrics, float(seg.times[-1]))
    metrics.update(T=wm["T"], orbit_mismatch=float(np.max(wm["mismatch"])),
                   tau=float(np.mean(wm["taus"])))
    wave = match_wave_mode(wm, n, range(1, n // 2 + 1))
    if wave is not None:
        metrics.update(tau=wave.tau, phase_defect=wave.phase_defect, taus=wave.taus.tolist())
        return Classification(WAVE, wave.mode, metrics, float(seg.times[-1]))
    metrics["phase_defect"] = float(np.min(
        [np.max(np.abs(n * wm["taus"] - k * wm["T"])) for k in range(1, n // 2 + 1)]))
    return Classification(NONE, None, metrics, float(seg.times[-1]))


def classify(traj: Trajectory, check_times: Sequence[float], topology: Optional[Topology] = None,
             window: float = SYNC_WINDOW) -> Classification:
    """Check a stored trajectory at each checkpoint; the first positive result wins."""
    topology = topology or traj.metadata.get("topology")
    if topology is None:
        raise DomainError("topology required")
    if np.any(np.diff(check_times) <= 0):
        raise DomainError("checkpoints must be increasing")
    last = Classification(NONE)
    for tc in check_times:
        hi = np.searchsorted(traj.times, tc + 1e-9, side="right")
        lo = np.searchsorted(traj.times, tc - window - 1e-9, side="left")
        seg = Trajectory(traj.times[lo:hi], traj.states[lo:hi], traj.metadata)
        if seg.times[-1] - seg.times[0] < window - 1e-6:
            continue
        last = classify_segment(seg, topology, window)
        if last.kind != NONE:
            return last
    last.kind = NONE
    last.mode = None
    return last


def checkpoint_schedule(t_final: float, every: float = 1000.0) -> np.ndarray:
    count = int(math.floor(t_final / every + 1e-9))
    sched = every * np.arange(1, count + 1)
    if count == 0 or sched[-1] < t_final - 1e-9:
        sched = np.append(sched, t_final)
    return sched


def run_and_classify(coupling, x0, params=None, t_final: float = 20000.0,
                     checkpoint: float = 1000.0, window: float = SYNC_WINDOW,
                     config=None) -> tuple[Classification, Trajectory]:
    """Simulate segment by segment, classifying at each checkpoint.

    Only the trailing ``window`` of the solution is kept in memory. Returns the
    classification and the last retained trajectory segment.
    """
    from .network import simulate

    topology = coupling.topology
    t0 = 0.0
    x = x0
    h = None
    buf_t = buf_x = None
    result = Classification(NONE)
    seg = None
    for tc in checkpoint_schedule(t_final, checkpoint):
        seg = simulate(coupling, x, (t0, tc), params, config, h0=h)
        x, h = seg.final_state, seg.last_step
        if buf_t is None:
            buf_t, buf_x = seg.times, seg.states
        else:
            buf_t = np.concatenate([buf_t, seg.times[1:]])
            buf_x = np.concatenate([buf_x, seg.states[1:]])
        keep = np.searchsorted(buf_t, buf_t[-1] - window - 1e-9)
        buf_t, buf_x = buf_t[keep:], buf_x[keep:]
        t0 = tc
        if buf_t[-1] - buf_t[0] < window - 1e-6:
            continue
        seg = Trajectory(buf_t, buf_x, seg.metadata, seg.final_time, seg.final_state, h)
        result = classify_segment(seg, topology, window)
        if result.kind != NONE:
            break
    return result, seg
