"""``ringlab`` command line.

Exit codes: 0 success, 2 bad flags or config, 3 numerical failure or
divergence, 4 a run that ended unclassified (or no wave was found). Every
file written embeds the resolved configuration, including the seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import (ConfigError, DomainError, IntegrationError, InvalidSizeError,
                     NotPeriodicError, NumericalFailureError, PreconditionError, RinglabError)

log = logging.getLogger("ringlab")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_UNCLASSIFIED = 4


def _write_json(path: Path, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _header(config: dict) -> str:
    return "config: " + json.dumps(config, sort_keys=True, default=_jsonable)


def _resolved(args, *names) -> dict:
    return {name: getattr(args, name) for name in names}


def _non_negative(text):
    val = float(text)
    if not val >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return val


def _positive(text):
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return val


def _topology(args):
    from .network import Topology

    if args.edges:
        return Topology.from_edge_csv(args.edges, args.n)
    if args.n is None:
        raise DomainError("--n is required")
    if args.topology == "chain":
        return Topology.chain(args.n)
    if args.topology == "ring":
        return Topology.ring(args.n)
    return Topology.two_rings(args.n)


# -- spectra ---------------------------------------------------------------

def cmd_spectra(args) -> int:
    from .spectral import (build_cycle_kinetic, perron_vector, random_kinetic,
                           read_rates_csv, spectrum_report)

    if args.topology == "cycle":
        if args.n is None:
            raise DomainError("--n is required for --topology cycle")
        K = build_cycle_kinetic(args.n, args.q)
    elif args.topology == "custom":
        if not args.rates:
            raise DomainError("--rates is required for --topology custom")
        K = read_rates_csv(args.rates)
    else:
        if args.n is None:
            raise DomainError("--n is required for --topology random")
        K = random_kinetic(args.n, np.random.default_rng(args.seed), args.density)
    report = spectrum_report(K)
    payload = report.to_dict()
    payload["all_real"] = bool(np.all(np.abs(np.imag(report.eigenvalues))
                                      <= 1e-9 * max(K.inf_norm(), 1e-300)))
    try:
        payload["equilibrium"] = perron_vector(K).tolist()
    except RinglabError as exc:
        payload["equilibrium"] = None
        payload["equilibrium_note"] = str(exc)
    payload["config"] = _resolved(args, "topology", "n", "q", "rates", "seed", "density")
    _write_json(args.out_dir / args.output, payload)
    print(f"max |Im|/|Re| = {report.max_im_re_ratio:.6g}, bound = {report.bound:.6g}, "
          f"satisfied = {report.bound_satisfied}")
    return EXIT_OK if report.bound_satisfied else 1


# -- simulate / classify ---------------------------------------------------

def _network_setup(args):
    from .network import CouplingConfig, sample_initial_condition

    top = _topology(args)
    coupling = CouplingConfig(top, args.sigma)
    x0 = sample_initial_condition(top.n, args.seed, args.sample).as_vector()
    return coupling, x0


def _classification_payload(cls, args, config) -> dict:
    rec = cls.to_record(args.n, args.sigma, args.seed, args.sample)
    rec["metrics"] = {k: v for k, v in cls.metrics.items()}
    rec["config"] = config
    return rec


def _sim_config(args) -> dict:
    return _resolved(args, "topology", "n", "edges", "sigma", "seed", "sample",
                     "t_final", "checkpoint", "window")


def cmd_simulate(args) -> int:
    from .detect import NONE, checkpoint_schedule, classify
    from .integrate import IntegratorConfig, write_trajectory_csv
    from .network import simulate, state_columns

    coupling, x0 = _network_setup(args)
    config = _sim_config(args)
    cfg = IntegratorConfig(dense_output_dt=args.dt)
    traj = simulate(coupling, x0, (0.0, args.t_final), config=cfg)
    cls = classify(traj, checkpoint_schedule(args.t_final, args.checkpoint),
                   coupling.topology, args.window)
    write_trajectory_csv(traj, args.out_dir / "trajectory.csv",
                         state_columns(coupling.topology.n), _header(config))
    _write_json(args.out_dir / "classification.json", _classification_payload(cls, args, config))
    print(f"classification: {cls.kind}" + (f" (mode {cls.mode})" if cls.mode else ""))
    return EXIT_UNCLASSIFIED if cls.kind == NONE else EXIT_OK


def cmd_classify(args) -> int:
    from .detect import NONE, run_and_classify
    from .integrate import write_trajectory_csv
    from .network import state_columns

    coupling, x0 = _network_setup(args)
    config = _sim_config(args)
    cls, seg = run_and_classify(coupling, x0, None, args.t_final, args.checkpoint, args.window)
    if seg is not None:
        write_trajectory_csv(seg, args.out_dir / "trajectory.csv",
                             state_columns(coupling.topology.n), _header(config))
    _write_json(args.out_dir / "classification.json", _classification_payload(cls, args, config))
    print(f"classification: {cls.kind}" + (f" (mode {cls.mode})" if cls.mode else "")
          + (f" at t={cls.checkpoint_time:g}" if cls.checkpoint_time is not None else ""))
    return EXIT_UNCLASSIFIED if cls.kind == NONE else EXIT_OK


# -- sweep -----------------------------------------------------------------

def cmd_sweep(args) -> int:
    from .sweep import SweepConfig, run_grid

    config = SweepConfig.from_json(args.config) if args.config else SweepConfig()
    if args.no_floquet:
        config = SweepConfig(**{**config.to_dict(), "floquet": False})
    result = run_grid(config, args.out_dir, args.workers)
    labels = sorted(set(result.regions.values()))
    print(f"{len(result.cells)} cells written to {args.out_dir}; regions: {', '.join(labels)}")
    return EXIT_OK


# -- floquet ---------------------------------------------------------------

def cmd_floquet(args) -> int:
    from .waves import check_aux_relation, find_wave_orbit, floquet_multipliers

    orbit = find_wave_orbit(args.n, args.sigma, seed=args.seed, t_final=args.t_final)
    config = _resolved(args, "n", "sigma", "seed", "t_final")
    if orbit is None:
        _write_json(args.out_dir / "floquet.json", {"config": config, "wave_found": False})
        print("no Mode-1 wave found")
        return EXIT_UNCLASSIFIED
    fl = floquet_multipliers(orbit)
    payload = {
        "config": config, "wave_found": True, **orbit.header(),
        "multipliers": [[float(m.real), float(m.imag)] for m in fl.multipliers],
        "trivial_defect": fl.trivial_defect, "max_nontrivial": fl.max_nontrivial,
        "stable": fl.stable, "liouville_defect": fl.liouville_defect,
        "aux_relation_holds": check_aux_relation(orbit),
    }
    _write_json(args.out_dir / "floquet.json", payload)
    with open(args.out_dir / "orbit.csv", "w", newline="") as fh:
        fh.write(f"# {_header({**config, **orbit.header()})}\n")
        w = csv.writer(fh)
        n = orbit.n
        w.writerow(["t"] + [f"z{j}" for j in range(1, n + 1)] + [f"y{j}" for j in range(1, n + 1)])
        for t, row in zip(orbit.times, orbit.samples):
            w.writerow([repr(float(t))] + [f"{v:.17g}" for v in row])
    print(f"T = {orbit.T:.6f}, tau = {orbit.tau:.6f}, max |mu| (nontrivial) = "
          f"{fl.max_nontrivial:.4f}, stable = {fl.stable}")
    return EXIT_OK


# -- boundary --------------------------------------------------------------

def cmd_boundary(args) -> int:
    from .sweep import analytic_sync_curve
    from .waves import wave_stability_boundary

    if args.n_min < 3 or args.n_max < args.n_min:
        raise DomainError("need 3 <= n-min <= n-max")
    n_values = list(range(args.n_min, args.n_max + 1))
    points = wave_stability_boundary(n_values, (args.sigma_min, args.sigma_max), args.sigma_step,
                                     t_final=args.t_final)
    config = _resolved(args, "n_min", "n_max", "sigma_min", "sigma_max", "sigma_step", "t_final")
    analytic = dict(analytic_sync_curve(n_values))
    path = args.out_dir / "boundary.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_header(config)}\n")
        w = csv.writer(fh)
        w.writerow(["n", "sigma_floquet", "max_mu_below", "max_mu_above", "sigma_analytic"])
        for p in points:
            if p.sigma_critical is None:
                log.info("n=%d: %s", p.n, p.note)
                continue
            w.writerow([p.n, repr(p.sigma_critical), p.max_multiplier_below,
                        p.max_multiplier_above, repr(analytic[p.n])])
    found = sum(p.sigma_critical is not None for p in points)
    print(f"boundary located for {found} of {len(points)} ring sizes")
    return EXIT_OK


# -- two rings -------------------------------------------------------------

def cmd_two_rings_demo(args) -> int:
    from .integrate import write_trajectory_csv
    from .network import state_columns
    from .sweep import two_rings_demo

    res = two_rings_demo(args.k, args.sigma, args.seed, args.t_final, args.window)
    traj = res.pop("trajectory")
    config = _resolved(args, "k", "sigma", "seed", "t_final", "window")
    _write_json(args.out_dir / "two_rings.json", {**res, "config": config})
    write_trajectory_csv(traj, args.out_dir / "two_rings_trajectory.csv",
                         state_columns(2 * args.k), _header(config))
    for i, ring in enumerate(res["rings"], 1):
        extra = f", min shift {ring['min_shift']:.3f}" if "min_shift" in ring else ""
        print(f"cycle {i}: {ring['label']} (neighbour error {ring['sync_error']:.3g}{extra})")
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ringlab",
                                description="Kinetic spectra and FitzHugh-Nagumo ring networks.")
    p.add_argument("--out-dir", type=Path, default=Path("ringlab-out"),
                   help="directory for all output files (default: ./ringlab-out)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("spectra", help="eigenvalues of a kinetic matrix vs the cot(pi/n) bound")
    sp.add_argument("--topology", choices=["cycle", "custom", "random"], default="cycle")
    sp.add_argument("--n", type=int)
    sp.add_argument("--q", type=_positive, default=1.0)
    sp.add_argument("--rates", help="CSV of i,j,q_ij triples (1-based)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--density", type=float, default=1.0)
    sp.add_argument("--output", default="spectra.json")
    sp.set_defaults(func=cmd_spectra)

    for name, func, t_default in (("simulate", cmd_simulate, 2000.0),
                                  ("classify", cmd_classify, 20000.0)):
        s = sub.add_parser(name, help=f"{name} one FHN network run")
        s.add_argument("--topology", choices=["chain", "ring", "two-rings"], default="ring")
        s.add_argument("--n", type=int, help="nodes (per ring for two-rings)")
        s.add_argument("--edges", help="CSV of from,to,weight edges instead of --topology")
        s.add_argument("--sigma", type=_non_negative, required=True)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--sample", type=int, default=0, help="sample index under the seed")
        s.add_argument("--t-final", type=_positive, default=t_default)
        s.add_argument("--checkpoint", type=_positive, default=1000.0)
        s.add_argument("--window", type=_positive, default=1000.0)
        if name == "simulate":
            s.add_argument("--dt", type=_positive, default=0.1, help="output sampling step")
        s.set_defaults(func=func)

    sw = sub.add_parser("sweep", help="(n, sigma) grid of sync/wave proportions")
    sw.add_argument("--config", help="JSON file with SweepConfig fields")
    sw.add_argument("--workers", type=int)
    sw.add_argument("--no-floquet", action="store_true",
                    help="skip the wave-stability check (Sync2/3 left undetermined)")
    sw.set_defaults(func=cmd_sweep)

    fq = sub.add_parser("floquet", help="locate a Mode-1 wave and its Floquet multipliers")
    fq.add_argument("--n", type=int, required=True)
    fq.add_argument("--sigma", type=_positive, required=True)
    fq.add_argument("--seed", type=int, default=0)
    fq.add_argument("--t-final", type=_positive, default=20000.0)
    fq.set_defaults(func=cmd_floquet)

    bd = sub.add_parser("boundary", help="coupling strength where the wave loses stability")
    bd.add_argument("--n-min", type=int, default=3)
    bd.add_argument("--n-max", type=int, default=12)
    bd.add_argument("--sigma-min", type=_positive, default=0.25)
    bd.add_argument("--sigma-max", type=_positive, default=3.0)
    bd.add_argument("--sigma-step", type=_positive, default=0.25)
    bd.add_argument("--t-final", type=_positive, default=5000.0)
    bd.set_defaults(func=cmd_boundary)

    tr = sub.add_parser("two-rings-demo", help="two bridged rings from mixed initial states")
    tr.add_argument("--k", type=int, default=10)
    tr.add_argument("--sigma", type=_non_negative, default=0.75)
    tr.add_argument("--seed", type=int, default=3)
    tr.add_argument("--t-final", type=_positive, default=5000.0)
    tr.add_argument("--window", type=_positive, default=1000.0)
    tr.set_defaults(func=cmd_two_rings_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except (ConfigError, DomainError, InvalidSizeError, PreconditionError, OSError) as exc:
        parser.print_usage(sys.stderr)
        print(f"ringlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFailureError, IntegrationError, NotPeriodicError) as exc:
        print(f"ringlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RinglabError as exc:
        print(f"ringlab: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
