"""First-order kinetic matrices: construction, spectra and equilibria.

A kinetic matrix K generates ``dP/dt = K P``. Off-diagonal entries
``k_ij = q_ij >= 0`` are the rates of the transition j -> i, and every column
sums to zero so total probability is conserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np
from numba import njit
from scipy.sparse.csgraph import connected_components

from .errors import (DegenerateSpectrumError, DomainError, InvalidSizeError,
                     NonUniqueEquilibriumError, NumericalFailureError)
from .integrate import IntegratorConfig, Trajectory, integrate

ZERO_TOL_REL = 1e-9
BOUND_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class KineticMatrix:
    entries: np.ndarray

    def __post_init__(self):
        k = np.array(self.entries, dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise InvalidSizeError("kinetic matrix must be square")
        off = k - np.diag(np.diag(k))
        if np.any(off < 0):
            raise DomainError("off-diagonal rates must be non-negative")
        if np.any(np.abs(k.sum(axis=0)) > 1e-12 * max(1.0, np.abs(k).max())):
            raise DomainError("columns of a kinetic matrix must sum to zero")
        k.setflags(write=False)
        object.__setattr__(self, "entries", k)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries.astype(dtype) if dtype else self.entries

    def inf_norm(self) -> float:
        return float(np.abs(self.entries).sum(axis=1).max())

    def is_irreducible(self) -> bool:
        ncomp, _ = connected_components(self.entries != 0, directed=True, connection="strong")
        return ncomp == 1


@dataclass
class SpectrumReport:
    eigenvalues: list
    max_im_re_ratio: float
    bound: float
    bound_satisfied: bool
    purely_imaginary: int = 0

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "max_im_re_ratio": float(self.max_im_re_ratio),
            "bound": float(self.bound),
            "bound_satisfied": bool(self.bound_satisfied),
        }


def _from_offdiagonal(q: np.ndarray) -> KineticMatrix:
    q = np.array(q, dtype=float)
    np.fill_diagonal(q, 0.0)
    if np.any(q < 0):
        raise DomainError("rates must be non-negative")
    return KineticMatrix(q - np.diag(q.sum(axis=0)))


def build_cycle_kinetic(n: int, q: float) -> KineticMatrix:
    """Uniform directed cycle 1 -> 2 -> ... -> n -> 1 with rate ``q``."""
    if int(n) != n or n < 2:
        raise InvalidSizeError(f"n must be an integer >= 2, got {n}")
    if not q > 0:
        raise DomainError("q must be positive")
    rates = np.zeros((n, n))
    for i in range(n):
        rates[(i + 1) % n, i] = q
    return _from_offdiagonal(rates)


def build_custom_kinetic(rates: Union[np.ndarray, Mapping], n: Optional[int] = None) -> KineticMatrix:
    """Kinetic matrix from off-diagonal rates.

    ``rates`` is either an n x n array (diagonal ignored) or a mapping
    ``{(i, j): q_ij}`` with 1-based indices, in which case ``n`` defaults to
    the largest index present.
    """
    if isinstance(rates, Mapping):
        size = n or max(max(i, j) for i, j in rates)
        q = np.zeros((size, size))
        for (i, j), val in rates.items():
            if i == j:
                raise DomainError("diagonal rates are not allowed")
            if val < 0:
                raise DomainError(f"negative rate q_{i}{j} = {val}")
            q[i - 1, j - 1] = val
        return _from_offdiagonal(q)
    q = np.asarray(rates, dtype=float)
    off = q - np.diag(np.diag(q))
    if np.any(off < 0):
        raise DomainError("rates must be non-negative")
    return _from_offdiagonal(off)


def read_rates_csv(path) -> KineticMatrix:
    """Rates from CSV triples ``i,j,q_ij`` (1-based)."""
    rates = {}
    with open(path) as fh:
        for line in fh:
            parts = [p.strip() for p in line.split(",")]
            if len(parts) < 3 or line.lstrip().startswith("#"):
                continue
            try:
                i, j, val = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                continue  # header row
            rates[(i, j)] = val
    if not rates:
        raise DomainError(f"no rate triples in {path}")
    return build_custom_kinetic(rates)


def random_kinetic(n: int, rng: np.random.Generator, density: float = 1.0,
                   max_tries: int = 1000) -> KineticMatrix:
    """Irreducible kinetic matrix with U[0,1] rates kept with probability ``density``."""
    for _ in range(max_tries):
        q = rng.uniform(0.0, 1.0, (n, n)) * (rng.uniform(size=(n, n)) < density)
        km = _from_offdiagonal(q)
        if km.is_irreducible():
            return km
    raise NumericalFailureError(f"no irreducible sample in {max_tries} tries", max_tries)


def random_reversible_kinetic(n: int, rng: np.random.Generator,
                              density: float = 1.0) -> tuple[KineticMatrix, np.ndarray]:
    """Kinetic matrix obeying detailed balance, and its equilibrium."""
    p = rng.uniform(0.1, 1.0, n)
    p /= p.sum()
    w = rng.uniform(0.0, 1.0, (n, n)) * (rng.uniform(size=(n, n)) < density)
    w = np.triu(w, 1)
    w = w + w.T
    # q_ij = w_ij p_i makes q_ij p_j symmetric in (i, j)
    return _from_offdiagonal(w * p[:, None]), p


def eigenvalues(K) -> np.ndarray:
    """All eigenvalues with multiplicity, sorted by real then imaginary part."""
    k = np.asarray(K, dtype=float)
    if k.shape[0] > 2000:
        raise InvalidSizeError("dense eigenvalue computation is limited to n <= 2000")
    try:
        ev = np.linalg.eigvals(k)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"QR iteration did not converge: {exc}",
                                    100 * k.shape[0]) from exc
    ev = np.asarray(ev, dtype=complex)
    return ev[np.lexsort((ev.imag, ev.real))]


def circulant_cycle_spectrum(n: int, q: float) -> np.ndarray:
    """Closed-form spectrum of the uniform cycle, ``-q + q exp(2 pi i k / n)``."""
    if int(n) != n or n < 2:
        raise InvalidSizeError(f"n must be an integer >= 2, got {n}")
    k = np.arange(n)
    return -q + q * np.exp(2j * np.pi * k / n)


def cot_bound(n: int) -> float:
    return 1.0 / math.tan(math.pi / n) if n > 2 else 0.0


def max_im_re_ratio(spectrum, zero_tol: float = 1e-9, n: Optional[int] = None) -> SpectrumReport:
    """Largest ``|Im| / |Re|`` over eigenvalues of modulus above ``zero_tol``.

    An eigenvalue with ``|Re| < zero_tol`` but nonzero modulus is purely
    imaginary, which no kinetic matrix admits; it yields an infinite ratio
    and ``bound_satisfied = False``.
    """
    ev = np.asarray(spectrum, dtype=complex)
    if ev.size == 0:
        raise DegenerateSpectrumError("empty spectrum")
    n = n or ev.size
    nonzero = ev[np.abs(ev) > zero_tol]
    if nonzero.size == 0:
        raise DegenerateSpectrumError("all eigenvalues are below zero_tol")
    re = np.abs(nonzero.real)
    im = np.abs(nonzero.imag)
    imaginary = re < zero_tol
    n_imag = int(np.count_nonzero(imaginary))
    ratio = math.inf if n_imag else float(np.max(im / re))
    bound = cot_bound(n)
    ok = n_imag == 0 and ratio <= bound + BOUND_SLACK
    return SpectrumReport(list(ev), ratio, bound, bool(ok), n_imag)


def spectrum_report(K: KineticMatrix) -> SpectrumReport:
    """Eigenvalues of K checked against the ``cot(pi/n)`` bound."""
    zero_tol = ZERO_TOL_REL * max(K.inf_norm(), 1e-300)
    return max_im_re_ratio(eigenvalues(K), zero_tol, K.n)


def perron_vector(K: KineticMatrix) -> np.ndarray:
    """Equilibrium ``P*`` in the simplex with ``K P* = 0``."""
    k = np.asarray(K, dtype=float)
    _, s, vt = np.linalg.svd(k)
    scale = max(s[0], 1e-300)
    nullity = int(np.count_nonzero(s < 1e-10 * scale)) if s[0] > 0 else k.shape[0]
    if nullity != 1:
        raise NonUniqueEquilibriumError(f"null space of K has dimension {nullity}", nullity)
    p = vt[-1]
    p = p / p.sum()
    p[np.abs(p) < 1e-15] = 0.0
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def _check_positive(pstar):
    p = np.asarray(pstar, dtype=float)
    if np.any(p < 1e-12):
        raise DomainError("equilibrium must be strictly positive")
    return p


def check_detailed_balance(K: KineticMatrix, pstar, tol: float = 1e-10) -> bool:
    """True iff ``q_ij p*_j == q_ji p*_i`` within ``tol`` for every pair."""
    p = _check_positive(pstar)
    k = np.asarray(K, dtype=float)
    flux = k * p[None, :]  # flux[i, j] = q_ij p*_j
    off = ~np.eye(k.shape[0], dtype=bool)
    return bool(np.all(np.abs(flux - flux.T)[off] <= tol))


def entropic_self_adjoint_defect(K: KineticMatrix, pstar) -> float:
    """How far K is from self-adjoint under ``<x, y> = sum x_i y_i / p*_i``."""
    p = _check_positive(pstar)
    k = np.asarray(K, dtype=float)
    # <K e_i, e_j> = k_ji / p_j and <e_i, K e_j> = k_ij / p_i
    g = k / p[:, None]
    return float(np.max(np.abs(g - g.T)))


@njit(cache=True)
def _linear_rhs(t, x, args):
    return args[0] @ x


def evolve_master(K: KineticMatrix, p0, t_final: float,
                  config: Optional[IntegratorConfig] = None) -> Trajectory:
    """Integrate ``dP/dt = K P`` from ``p0`` over ``[0, t_final]``."""
    if not t_final > 0:
        raise DomainError("t_final must be positive")
    config = config or IntegratorConfig(rtol=1e-10, atol=1e-12, dense_output_dt=t_final / 100)
    k = np.ascontiguousarray(np.asarray(K, dtype=float))
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (k.shape[0],):
        raise DomainError("p0 has the wrong dimension")
    return integrate(_linear_rhs, p0, (0.0, t_final), config, args=(k,),
                     metadata={"kind": "master"})
