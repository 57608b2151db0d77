"""Network topologies, Laplacians and the FitzHugh-Nagumo node dynamics.

State vectors are flat arrays ``[z_1..z_n, y_1..y_n]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .errors import DomainError, UnsupportedTopologyError

Y_BOUND = 1.5 * math.sqrt(3.0)
Z_BOUND = 15.0 / 8.0 * math.sqrt(3.0)


@dataclass(frozen=True)
class FhnParams:
    alpha: float = 0.08
    beta: float = 0.8
    gamma: float = 1.0 / 3.0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) <= 0:
            raise DomainError("alpha, beta and gamma must be positive")

    def as_tuple(self):
        return (float(self.alpha), float(self.beta), float(self.gamma))


@dataclass(frozen=True, eq=False)
class Topology:
    """Directed coupling graph; ``adjacency[j, l] = q_jl`` means node j listens to node l.

    Use the ``chain``, ``ring``, ``two_rings`` and ``custom`` constructors.
    """

    kind: str
    adjacency: np.ndarray
    k: Optional[int] = None  # nodes per ring for two_rings

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    n_total = n

    @classmethod
    def chain(cls, n: int) -> "Topology":
        _check_n(n, 1)
        q = np.zeros((n, n))
        for j in range(1, n):
            q[j, j - 1] = 1.0
        return cls("chain", q)

    @classmethod
    def ring(cls, n: int) -> "Topology":
        _check_n(n, 2)
        q = np.zeros((n, n))
        for j in range(n):
            q[j, (j - 1) % n] = 1.0
        return cls("ring", q)

    @classmethod
    def two_rings(cls, k: int) -> "Topology":
        """Two directed k-rings joined by an undirected unit edge between nodes 1 and k+1."""
        _check_n(k, 2)
        q = np.zeros((2 * k, 2 * k))
        for off in (0, k):
            for j in range(k):
                q[off + j, off + (j - 1) % k] = 1.0
        q[0, k] = q[k, 0] = 1.0
        return cls("two-rings", q, k)

    @classmethod
    def custom(cls, adjacency) -> "Topology":
        q = np.array(adjacency, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise DomainError("adjacency must be square")
        if np.any(np.diag(q) != 0):
            raise DomainError("adjacency must have a zero diagonal")
        if np.any(q < 0):
            raise DomainError("adjacency weights must be non-negative")
        return cls("custom", q)

    @classmethod
    def from_edge_csv(cls, path, n: Optional[int] = None) -> "Topology":
        """Read ``from,to,weight`` rows (1-based). Edge l -> j sets q_jl."""
        edges = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    src, dst, w = int(row[0]), int(row[1]), float(row[2])
                except ValueError:
                    continue  # header
                edges.append((src, dst, w))
        size = n or max(max(s, d) for s, d, _ in edges)
        q = np.zeros((size, size))
        for src, dst, w in edges:
            if src < 1 or dst < 1 or src > size or dst > size:
                raise DomainError(f"edge ({src},{dst}) out of range")
            q[dst - 1, src - 1] = w
        return cls.custom(q)

    def neighbour_pairs(self) -> np.ndarray:
        """Directed (receiver, sender) index pairs, one per edge."""
        recv, send = np.nonzero(self.adjacency)
        return np.stack([recv, send], axis=1)


def _check_n(n, minimum):
    if int(n) != n or n < minimum:
        raise DomainError(f"network size must be an integer >= {minimum}, got {n}")


@dataclass(frozen=True)
class CouplingConfig:
    topology: Topology
    sigma: float

    def __post_init__(self):
        if not self.sigma >= 0:
            raise DomainError("sigma must be non-negative")


@dataclass
class NetworkState:
    z: np.ndarray
    y: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.z, self.y])

    @classmethod
    def from_vector(cls, x) -> "NetworkState":
        x = np.asarray(x, dtype=float)
        n = x.shape[0] // 2
        return cls(x[:n].copy(), x[n:].copy())


@dataclass
class EnergyReport:
    V: float
    S_per_node: np.ndarray
    H_per_node: np.ndarray


def laplacian(topology: Topology) -> np.ndarray:
    q = topology.adjacency
    return np.diag(q.sum(axis=1)) - q


def symmetrized_laplacian(topology: Topology) -> np.ndarray:
    lap = laplacian(topology)
    return 0.5 * (lap + lap.T)


def sync_threshold(topology: Topology) -> float:
    """Coupling strength above which global synchronization is guaranteed."""
    if topology.kind == "chain":
        return 1.0
    if topology.kind == "ring":
        return 1.0 / (1.0 - math.cos(2.0 * math.pi / topology.n))
    raise UnsupportedTopologyError(f"no analytic threshold for {topology.kind!r}")


def _csr(matrix):
    rows, cols = np.nonzero(matrix)
    indptr = np.zeros(matrix.shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    return np.cumsum(indptr), cols.astype(np.int64), matrix[rows, cols].astype(np.float64)


@njit(cache=True)
def fhn_rhs(t, x, args):
    """Compiled network vector field; ``args = (alpha, beta, gamma, sigma, indptr, indices, weights)``.

    The sparse matrix is the adjacency Q, so ``u_j = sigma * sum_l q_jl (y_l - y_j)``.
    """
    alpha, beta, gamma, sigma, indptr, indices, weights = args
    n = x.shape[0] // 2
    dx = np.empty_like(x)
    for j in range(n):
        z = x[j]
        y = x[n + j]
        u = 0.0
        for p in range(indptr[j], indptr[j + 1]):
            u += weights[p] * (x[n + indices[p]] - y)
        dx[j] = alpha * (y - beta * z)
        dx[n + j] = y - gamma * y * y * y - z + sigma * u
    return dx


def fhn_args(params: FhnParams, coupling: CouplingConfig) -> tuple:
    indptr, indices, weights = _csr(coupling.topology.adjacency)
    return (*params.as_tuple(), float(coupling.sigma), indptr, indices, weights)


def fhn_vector_field(state, params: FhnParams, coupling: CouplingConfig):
    """Time derivative of a network state; returns the same type it is given."""
    x = state.as_vector() if isinstance(state, NetworkState) else np.asarray(state, dtype=float)
    if x.shape[0] != 2 * coupling.topology.n:
        raise DomainError("state dimension does not match topology")
    dx = fhn_rhs(0.0, x, fhn_args(params, coupling))
    return NetworkState.from_vector(dx) if isinstance(state, NetworkState) else dx


def coupling_input(y, coupling: CouplingConfig) -> np.ndarray:
    """Diffusive input ``u = -sigma L y``."""
    return -coupling.sigma * (laplacian(coupling.topology) @ np.asarray(y, dtype=float))


def network_jacobian(x, params: FhnParams, lap_sigma: np.ndarray) -> np.ndarray:
    """Jacobian of the full network field at ``x``; ``lap_sigma`` is ``sigma * L``."""
    a, b, g = params.as_tuple()
    n = x.shape[0] // 2
    jac = np.zeros((2 * n, 2 * n))
    idx = np.arange(n)
    jac[idx, idx] = -a * b
    jac[idx, n + idx] = a
    jac[n + idx, idx] = -1.0
    jac[n:, n:] = -lap_sigma
    jac[n + idx, n + idx] += 1.0 - 3.0 * g * x[n:] ** 2
    return jac


def node_jacobian(z, y, params: FhnParams) -> np.ndarray:
    a, b, g = params.as_tuple()
    return np.array([[-a * b, a], [-1.0, 1.0 - 3.0 * g * y * y]])


def energy(state, params: FhnParams) -> EnergyReport:
    """Storage function S, dissipation H and total V = sum S for each node."""
    st = state if isinstance(state, NetworkState) else NetworkState.from_vector(state)
    a, b, g = params.as_tuple()
    s = 0.5 * (st.z ** 2 / a + st.y ** 2)
    h = b * st.z ** 2 + st.y ** 2 * (g * st.y ** 2 - 1.0)
    return EnergyReport(float(s.sum()), s, h)


def dissipation_bound(n: int, params: FhnParams) -> tuple[float, float]:
    """``(rate, offset)`` with ``dV/dt <= -rate * V + offset``."""
    a, b, g = params.as_tuple()
    return a * b, n * (a * b + 1.0) ** 2 / (4.0 * g)


def sample_seed(seed: int, *keys: int) -> np.random.SeedSequence:
    """Independent stream for sample ``keys`` under ``seed`` (hash-mixed)."""
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])


def sample_initial_condition(n: int, seed: int, *keys: int) -> NetworkState:
    rng = np.random.default_rng(sample_seed(seed, *keys))
    z = rng.uniform(-Z_BOUND, Z_BOUND, n)
    y = rng.uniform(-Y_BOUND, Y_BOUND, n)
    return NetworkState(z, y)


def sample_initial_conditions(n: int, count: int, seed: int) -> list[NetworkState]:
    """``count`` states uniform on the invariant box; sample k depends only on (seed, k)."""
    if count < 1:
        raise DomainError("count must be >= 1")
    return [sample_initial_condition(n, seed, k) for k in range(count)]


def simulate(coupling: CouplingConfig, x0, t_span, params: Optional[FhnParams] = None,
             config=None, h0=None):
    """Integrate the FHN network; the trajectory metadata records the setup."""
    from .integrate import IntegratorConfig, integrate

    params = params or FhnParams()
    x0 = x0.as_vector() if isinstance(x0, NetworkState) else np.asarray(x0, dtype=float)
    if x0.shape[0] != 2 * coupling.topology.n:
        raise DomainError("initial state dimension does not match topology")
    meta = {"topology": coupling.topology, "sigma": coupling.sigma, "params": params}
    return integrate(fhn_rhs, x0, t_span, config or IntegratorConfig(),
                     args=fhn_args(params, coupling), metadata=meta, h0=h0)


def state_columns(n: int) -> list[str]:
    return [f"z{j}" for j in range(1, n + 1)] + [f"y{j}" for j in range(1, n + 1)]
