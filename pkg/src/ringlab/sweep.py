"""The (n, sigma) grid experiment on directed FHN rings and the two-ring scenario.

Every sample's initial condition is derived from ``(master_seed, n,
sigma_index, sample_index)`` alone, so any cell can be recomputed in
isolation and results do not depend on scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from .detect import NONE, SYNC, WAVE, run_and_classify, sync_error, wave_metrics
from .errors import ConfigError, DomainError, RinglabError
from .integrate import Trajectory
from .network import (CouplingConfig, FhnParams, Topology, sample_initial_condition,
                      sample_seed, simulate)

log = logging.getLogger(__name__)

SYNC1 = "Sync1"
SYNC2 = "Sync2"
SYNC3 = "Sync3"
SYNC23 = "Sync2/3-undetermined"
COEXIST = "Coexistence"
WAVE_ONLY = "WaveOnly"
UNRESOLVED = "Unresolved"

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "n_values": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
        "sigma_values": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                         "minItems": 1},
        "samples_per_cell": {"type": "integer", "minimum": 1},
        "t_final": {"type": "number", "exclusiveMinimum": 0},
        "checkpoint": {"type": "number", "exclusiveMinimum": 0},
        "master_seed": {"type": "integer", "minimum": 0},
        "topology": {"enum": ["ring", "chain"]},
        "floquet": {"type": "boolean"},
    },
    "additionalProperties": False,
}


@dataclass(frozen=True)
class SweepConfig:
    n_values: tuple = tuple(range(2, 13))
    sigma_values: tuple = tuple(round(0.25 * i, 10) for i in range(1, 13))
    samples_per_cell: int = 20
    t_final: float = 20000.0
    checkpoint: float = 1000.0
    master_seed: int = 20160101
    topology: str = "ring"
    floquet: bool = True

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        object.__setattr__(self, "sigma_values", tuple(float(s) for s in self.sigma_values))
        try:
            jsonschema.validate(self.to_dict(), CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid sweep config: {exc.message}") from exc

    @classmethod
    def paper(cls, **overrides) -> "SweepConfig":
        """The full published grid: n = 2..20, sigma = 0.05..10, 100 samples per cell."""
        kw = dict(n_values=tuple(range(2, 21)),
                  sigma_values=tuple(round(0.05 * i, 10) for i in range(1, 201)),
                  samples_per_cell=100)
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "SweepConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        try:
            jsonschema.validate(data, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid sweep config: {exc.message}") from exc
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_values"] = list(self.n_values)
        d["sigma_values"] = list(self.sigma_values)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class CellResult:
    n: int
    sigma: float
    sigma_index: int
    samples: int
    counts: dict
    records: list = field(default_factory=list)

    @property
    def proportions(self) -> dict:
        return {k: v / self.samples for k, v in self.counts.items()}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "CellResult":
        return cls(**d)


def analytic_sync_curve(n_values: Sequence[int]) -> list[tuple[int, float]]:
    """``sigma_c(n) = 1 / (1 - cos(2 pi / n))``; undefined (nan) below n = 3."""
    out = []
    for n in n_values:
        if n < 3:
            log.warning("analytic curve is undefined for n=%d", n)
            out.append((int(n), math.nan))
        else:
            out.append((int(n), 1.0 / (1.0 - math.cos(2.0 * math.pi / n))))
    return out


def guaranteed_sync(n: int, sigma: float) -> bool:
    """Whether sigma * lambda_2 of the symmetrized ring Laplacian exceeds 1."""
    return sigma * (1.0 - math.cos(2.0 * math.pi / n)) > 1.0


def _topology(kind: str, n: int) -> Topology:
    return Topology.ring(n) if kind == "ring" else Topology.chain(n)


def run_sample(n: int, sigma: float, sigma_index: int, k: int, config: SweepConfig,
               params: Optional[FhnParams] = None) -> dict:
    coupling = CouplingConfig(_topology(config.topology, n), sigma)
    x0 = sample_initial_condition(n, config.master_seed, n, sigma_index, k)
    try:
        cls, _ = run_and_classify(coupling, x0, params, config.t_final, config.checkpoint)
        rec = cls.to_record(n, sigma, config.master_seed, k)
    except RinglabError as exc:
        rec = {"n": n, "sigma": sigma, "seed": config.master_seed, "sample_index": k,
               "kind": NONE, "mode": None, "T": None, "tau": None, "sync_error": None,
               "checkpoint_time": None, "error": f"{type(exc).__name__}: {exc}"}
    return rec


def run_cell(n: int, sigma: float, config: SweepConfig, sigma_index: Optional[int] = None,
             params: Optional[FhnParams] = None) -> CellResult:
    """Simulate and classify every sample of one grid cell."""
    if sigma_index is None:
        sigma_index = _sigma_index(config, sigma)
    records = [run_sample(n, sigma, sigma_index, k, config, params)
               for k in range(config.samples_per_cell)]
    counts = {"sync": 0, "wave_mode1": 0, "wave_any": 0, "none": 0}
    for r in records:
        if r["kind"] == SYNC:
            counts["sync"] += 1
        elif r["kind"] == WAVE:
            counts["wave_any"] += 1
            if r["mode"] == 1:
                counts["wave_mode1"] += 1
        else:
            counts["none"] += 1
    return CellResult(n, float(sigma), sigma_index, config.samples_per_cell, counts, records)


def _sigma_index(config: SweepConfig, sigma: float) -> int:
    for i, s in enumerate(config.sigma_values):
        if abs(s - sigma) <= 1e-12 * max(1.0, abs(s)):
            return i
    raise DomainError(f"sigma={sigma} is not on the configured grid")


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _cell_path(out_dir: Path, config: SweepConfig, n: int, si: int) -> Path:
    return out_dir / "cells" / config.digest() / f"n{n:03d}_s{si:04d}.json"


def _cell_job(args):
    n, sigma, si, config = args
    return run_cell(n, sigma, config, si)


def worker_count(requested: Optional[int] = None) -> int:
    cap = os.environ.get("RINGLAB_WORKERS")
    count = requested or os.cpu_count() or 1
    if cap:
        count = min(count, max(1, int(cap)))
    return max(1, count)


def region_label(cell: CellResult, stable_wave: Optional[bool]) -> str:
    if guaranteed_sync(cell.n, cell.sigma):
        return SYNC1
    c = cell.counts
    if c["sync"] > 0 and c["wave_any"] > 0:
        return COEXIST
    if c["sync"] == cell.samples:
        if stable_wave is None:
            return SYNC23
        return SYNC3 if stable_wave else SYNC2
    if c["wave_any"] > 0 and c["sync"] == 0:
        return WAVE_ONLY
    return UNRESOLVED


@dataclass
class GridResult:
    config: SweepConfig
    cells: list
    regions: dict  # (n, sigma) -> label
    stable_wave: dict

    def cell(self, n, sigma) -> CellResult:
        for c in self.cells:
            if c.n == n and abs(c.sigma - sigma) < 1e-12:
                return c
        raise KeyError((n, sigma))

    def grid_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config: {json.dumps(self.config.to_dict(), sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "sigma", "samples", "prop_sync", "prop_wave_mode1", "prop_wave_any",
                    "prop_none", "seed"])
        for c in self.cells:
            p = c.proportions
            w.writerow([c.n, repr(c.sigma), c.samples, p["sync"], p["wave_mode1"],
                        p["wave_any"], p["none"], self.config.master_seed])
        return buf.getvalue()

    def region_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config: {json.dumps(self.config.to_dict(), sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "sigma", "region"])
        for c in self.cells:
            w.writerow([c.n, repr(c.sigma), self.regions[(c.n, c.sigma)]])
        return buf.getvalue()

    def records_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for c in self.cells for r in c.records)


def _stable_wave_exists(n: int, sigma: float, params=None) -> bool:
    from .waves import _wave_status

    if n < 3:
        return False
    ok, _, _ = _wave_status(n, sigma, params or FhnParams(), None, 5000.0)
    return ok


def run_grid(config: SweepConfig, out_dir=None, workers: Optional[int] = None) -> GridResult:
    """Run every cell (skipping ones already on disk) and label the region map.

    With ``out_dir`` each finished cell is written atomically under
    ``cells/<config digest>/``; a restarted run reuses those files.
    """
    out = Path(out_dir) if out_dir is not None else None
    jobs = []
    done = {}
    for n in config.n_values:
        for si, sigma in enumerate(config.sigma_values):
            path = _cell_path(out, config, n, si) if out else None
            if path is not None and path.exists():
                done[(n, si)] = CellResult.from_dict(json.loads(path.read_text()))
            else:
                jobs.append((n, sigma, si, config))

    def _store(cell: CellResult):
        done[(cell.n, cell.sigma_index)] = cell
        if out is not None:
            _atomic_write(_cell_path(out, config, cell.n, cell.sigma_index),
                          json.dumps(cell.to_dict(), sort_keys=True))

    nw = min(worker_count(workers), max(1, len(jobs)))
    if nw > 1:
        with ProcessPoolExecutor(nw) as pool:
            for cell in pool.map(_cell_job, jobs):
                _store(cell)
    else:
        for job in jobs:
            _store(_cell_job(job))

    cells = [done[(n, si)] for n in config.n_values for si in range(len(config.sigma_values))]
    stable = {}
    regions = {}
    for c in cells:
        sw = None
        needs = (not guaranteed_sync(c.n, c.sigma) and c.counts["sync"] == c.samples)
        if needs and config.floquet and config.topology == "ring":
            sw = _stable_wave_exists(c.n, c.sigma)
            stable[(c.n, c.sigma)] = sw
        regions[(c.n, c.sigma)] = region_label(c, sw)
    result = GridResult(config, cells, regions, stable)
    if out is not None:
        _atomic_write(out / "grid.csv", result.grid_csv())
        _atomic_write(out / "regions.csv", result.region_csv())
        _atomic_write(out / "records.jsonl", result.records_jsonl())
    return result


def two_rings_initial_state(k: int, seed: int, params: Optional[FhnParams] = None) -> np.ndarray:
    """Ring 1 synchronized at a random phase, ring 2 phase-staggered as a Mode-1 wave."""
    from .waves import reference_cycle, staggered_state

    rng = np.random.default_rng(sample_seed(seed, k))
    T0, cyc = reference_cycle(params)
    s = cyc(rng.uniform() * T0)
    w = staggered_state(k, params, rng.uniform())
    x = np.empty(4 * k)
    x[:k], x[2 * k:3 * k] = s[0], s[1]
    x[k:2 * k], x[3 * k:] = w[:k], w[k:]
    return x


def _sub_ring(traj: Trajectory, k: int, which: int) -> Trajectory:
    n = 2 * k
    idx = np.arange(which * k, (which + 1) * k)
    return Trajectory(traj.times, np.concatenate([traj.states[:, idx], traj.states[:, n + idx]],
                                                 axis=1))


def ring_summary(sub: Trajectory, k: int) -> dict:
    """Neighbour error and neighbour phase shifts of one sub-ring."""
    ring = Topology.ring(k)
    err = sync_error(sub.states, ring.neighbour_pairs())
    out = {"sync_error": err}
    try:
        wm = wave_metrics(sub, k)
    except RinglabError as exc:
        out["error"] = str(exc)
        return out
    T = wm["T"]
    taus = wm["taus"]
    # distance of each shift from the synchronous shift (0 or T)
    dist = np.minimum(taus, T - taus)
    out.update(T=T, taus=taus.tolist(), min_shift=float(dist.min()), wave_tau=T / k)
    return out


def two_rings_demo(k: int = 10, sigma: float = 0.75, seed: int = 3, t_final: float = 5000.0,
                   window: float = 1000.0, params: Optional[FhnParams] = None) -> dict:
    """Two k-rings bridged between nodes 1 and k+1, started in mixed states.

    Each ring is labeled near-sync when its neighbour error over the trailing
    window is below 0.1, near-wave when every neighbour shift is farther than
    half the wave shift T/k from zero.
    """
    coupling = CouplingConfig(Topology.two_rings(k), sigma)
    x0 = two_rings_initial_state(k, seed, params)
    traj = simulate(coupling, x0, (0.0, t_final), params)
    tail = traj.tail(window)
    rings = []
    for which in (0, 1):
        info = ring_summary(_sub_ring(tail, k, which), k)
        if info["sync_error"] < 0.1:
            label = "near-sync"
        elif "min_shift" in info and info["min_shift"] > 0.5 * info["wave_tau"]:
            label = "near-wave"
        else:
            label = "other"
        info["label"] = label
        rings.append(info)
    return {"k": k, "sigma": sigma, "seed": seed, "t_final": t_final, "window": window,
            "rings": rings, "trajectory": traj.tail(200.0)}
