"""Kinetic-matrix spectra and synchronization/rotating waves in FitzHugh-Nagumo rings."""

from .errors import RinglabError
from .integrate import IntegratorConfig, Trajectory, integrate, integrate_dde
from .network import CouplingConfig, FhnParams, NetworkState, Topology, simulate
from .spectral import KineticMatrix, build_cycle_kinetic, spectrum_report
from .detect import Classification, run_and_classify
from .waves import find_wave_orbit, floquet_multipliers
from .sweep import SweepConfig, run_cell, run_grid

__all__ = [
    "RinglabError", "IntegratorConfig", "Trajectory", "integrate", "integrate_dde",
    "CouplingConfig", "FhnParams", "NetworkState", "Topology", "simulate",
    "KineticMatrix", "build_cycle_kinetic", "spectrum_report",
    "Classification", "run_and_classify", "find_wave_orbit", "floquet_multipliers",
    "SweepConfig", "run_cell", "run_grid",
]
__version__ = "0.1.0"
