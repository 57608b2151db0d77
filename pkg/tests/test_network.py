import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ringlab.errors import DomainError, UnsupportedTopologyError
from ringlab.integrate import IntegratorConfig
from ringlab.network import (Y_BOUND, Z_BOUND, CouplingConfig, FhnParams, NetworkState, Topology,
                             coupling_input, dissipation_bound, energy, fhn_vector_field,
                             laplacian, network_jacobian, sample_initial_condition,
                             sample_initial_conditions, simulate, symmetrized_laplacian,
                             sync_threshold)

P = FhnParams()


class TestLaplacian:
    def test_chain_three(self):
        np.testing.assert_array_equal(laplacian(Topology.chain(3)),
                                      [[0, 0, 0], [-1, 1, 0], [0, -1, 1]])

    def test_ring_three_spectrum(self):
        lap = laplacian(Topology.ring(3))
        np.testing.assert_array_equal(lap, np.eye(3) - Topology.ring(3).adjacency)
        ev = np.linalg.eigvals(lap)
        expected = [0, 1 - np.exp(2j * np.pi / 3), 1 - np.exp(4j * np.pi / 3)]
        for e in expected:
            assert np.min(np.abs(ev - e)) < 1e-12

    def test_two_rings_bridge(self):
        top = Topology.two_rings(2)
        lap = laplacian(top)
        assert lap.shape == (4, 4)
        assert lap[0, 2] == lap[2, 0] == -1.0
        np.testing.assert_array_equal(np.diag(lap), top.adjacency.sum(axis=1))
        assert top.k == 2 and top.kind == "two-rings"

    @pytest.mark.parametrize("n", [2, 5, 30])
    def test_chain_spectrum(self, n):
        ev = np.sort(np.linalg.eigvals(laplacian(Topology.chain(n))).real)
        assert abs(ev[0]) < 1e-10
        np.testing.assert_allclose(ev[1:], 1.0, atol=1e-10)

    @pytest.mark.parametrize("n", range(3, 21))
    def test_ring_algebraic_connectivity(self, n):
        ev = np.linalg.eigvalsh(symmetrized_laplacian(Topology.ring(n)))
        assert ev[1] == pytest.approx(1 - math.cos(2 * math.pi / n), abs=1e-10)

    @pytest.mark.parametrize("top", [Topology.chain(6), Topology.ring(6), Topology.two_rings(4)])
    def test_row_sums_zero(self, top):
        np.testing.assert_array_equal(laplacian(top).sum(axis=1), 0.0)

    def test_edge_csv(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("from,to,weight\n1,2,1.0\n2,3,0.5\n3,1,2\n")
        top = Topology.from_edge_csv(path)
        assert top.adjacency[1, 0] == 1.0 and top.adjacency[2, 1] == 0.5 and top.adjacency[0, 2] == 2
        assert top.kind == "custom"

    def test_custom_validation(self):
        with pytest.raises(DomainError):
            Topology.custom([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(DomainError):
            Topology.custom([[0.0, -1.0], [0.0, 0.0]])
        with pytest.raises(DomainError):
            Topology.ring(1)


class TestThreshold:
    def test_values(self):
        assert sync_threshold(Topology.chain(150)) == 1.0
        assert sync_threshold(Topology.ring(3)) == pytest.approx(2 / 3)
        assert sync_threshold(Topology.ring(10)) == pytest.approx(5.23607, abs=1e-5)

    def test_unsupported(self):
        with pytest.raises(UnsupportedTopologyError):
            sync_threshold(Topology.two_rings(3))


class TestVectorField:
    def test_origin_is_equilibrium(self):
        cp = CouplingConfig(Topology.ring(4), 2.0)
        np.testing.assert_array_equal(fhn_vector_field(np.zeros(8), P, cp), 0.0)

    def test_single_node_ignores_sigma(self):
        x = np.array([0.3, -1.2])
        a = fhn_vector_field(x, P, CouplingConfig(Topology.chain(1), 0.0))
        b = fhn_vector_field(x, P, CouplingConfig(Topology.chain(1), 7.0))
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(a, [0.08 * (-1.2 - 0.8 * 0.3), -1.2 + 1.2 ** 3 / 3 - 0.3])

    def test_coupling_vanishes_on_sync(self):
        n = 7
        x = np.concatenate([np.full(n, 0.4), np.full(n, -1.1)])
        with_c = fhn_vector_field(x, P, CouplingConfig(Topology.ring(n), 3.0))
        without = fhn_vector_field(x, P, CouplingConfig(Topology.ring(n), 0.0))
        np.testing.assert_array_equal(with_c, without)
        np.testing.assert_array_equal(coupling_input(x[n:], CouplingConfig(Topology.ring(n), 3.0)),
                                      0.0)

    def test_network_state_roundtrip(self):
        cp = CouplingConfig(Topology.chain(3), 1.0)
        st_ = NetworkState(np.array([0.1, 0.2, 0.3]), np.array([1.0, -1.0, 0.5]))
        d = fhn_vector_field(st_, P, cp)
        assert isinstance(d, NetworkState)
        np.testing.assert_allclose(d.as_vector(), fhn_vector_field(st_.as_vector(), P, cp))
        # coupling input enters the y equation only
        y = st_.y
        assert d.y[1] == pytest.approx(y[1] - y[1] ** 3 / 3 - 0.2 + 1.0 * (y[0] - y[1]))

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        cp = CouplingConfig(Topology.two_rings(3), 0.9)
        x = rng.normal(size=12)
        jac = network_jacobian(x, P, cp.sigma * laplacian(cp.topology))
        eps = 1e-6
        fd = np.column_stack([(fhn_vector_field(x + eps * e, P, cp)
                               - fhn_vector_field(x - eps * e, P, cp)) / (2 * eps)
                              for e in np.eye(12)])
        np.testing.assert_allclose(jac, fd, atol=1e-7)

    def test_negative_sigma_rejected(self):
        with pytest.raises(DomainError):
            CouplingConfig(Topology.ring(3), -0.1)

    def test_params_validation(self):
        with pytest.raises(DomainError):
            FhnParams(alpha=0.0)


class TestSampling:
    def test_box(self):
        for s in sample_initial_conditions(10, 200, seed=1):
            assert np.all(np.abs(s.y) <= 2.598076) and np.all(np.abs(s.z) <= 3.247595)
        assert Y_BOUND == pytest.approx(2.598076, abs=1e-6)
        assert Z_BOUND == pytest.approx(3.247595, abs=1e-6)

    def test_deterministic(self):
        a = sample_initial_conditions(5, 10, seed=42)
        b = sample_initial_conditions(5, 10, seed=42)
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u.as_vector(), v.as_vector())
        c = sample_initial_conditions(5, 10, seed=43)
        assert not np.array_equal(a[0].as_vector(), c[0].as_vector())

    def test_sample_independent_of_count(self):
        a = sample_initial_conditions(4, 3, seed=7)[2]
        b = sample_initial_conditions(4, 30, seed=7)[2]
        np.testing.assert_array_equal(a.as_vector(), b.as_vector())

    def test_mean_y(self):
        ys = np.concatenate([sample_initial_condition(1000, 5, k).y for k in range(100)])
        assert abs(ys.mean()) < 0.02

    def test_count_validation(self):
        with pytest.raises(DomainError):
            sample_initial_conditions(3, 0, seed=1)


class TestEnergy:
    def test_origin(self):
        assert energy(np.zeros(6), P).V == 0.0

    def test_dissipation_function(self):
        rep = energy(NetworkState(np.zeros(3), np.ones(3)), P)
        np.testing.assert_allclose(rep.H_per_node, -2 / 3)

    @pytest.mark.parametrize("top", [Topology.ring(5), Topology.two_rings(3)])
    def test_dissipation_inequality(self, top):
        """Finite-difference dV/dt stays below -alpha beta V + n (alpha beta + 1)^2 / (4 gamma).

        Holds for balanced graphs, where the coupling term -sigma y^T L y is
        non-positive.
        """
        n = top.n
        rate, offset = dissipation_bound(n, P)
        cfg = IntegratorConfig(rtol=1e-8, atol=1e-10, dense_output_dt=0.01)
        worst = -np.inf
        for k in range(50):
            cp = CouplingConfig(top, [0.5, 1.5, 3.0][k % 3])
            tr = simulate(cp, sample_initial_condition(n, 99, k), (0.0, 20.0), P, cfg)
            V = np.array([energy(x, P).V for x in tr.states])
            dV = np.gradient(V, tr.times)
            worst = max(worst, np.max(dV[1:-1] + rate * V[1:-1] - offset))
        assert worst <= 1e-3

    def test_chain_coupling_is_not_dissipative(self):
        """A directed chain's symmetrized Laplacian is indefinite, so V alone cannot bound it."""
        assert np.linalg.eigvalsh(symmetrized_laplacian(Topology.chain(2)))[0] < 0
        for top in (Topology.ring(6), Topology.two_rings(3)):
            assert np.linalg.eigvalsh(symmetrized_laplacian(top))[0] > -1e-12

    @pytest.mark.parametrize("top", [Topology.chain(6), Topology.ring(6)])
    def test_ultimate_boundedness(self, top):
        n = top.n
        rate, offset = dissipation_bound(n, P)
        limit = 1.1 * offset / rate
        for k in range(10):
            tr = simulate(CouplingConfig(top, 1.0), sample_initial_condition(n, 3, k), (0.0, 300.0))
            late = tr.times >= 100
            assert max(energy(x, P).V for x in tr.states[late]) <= limit


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.floats(0.0, 5.0), st.integers(0, 2 ** 32))
def test_sync_manifold_invariant(n, sigma, seed):
    """The diagonal is invariant: a synchronized start stays synchronized."""
    rng = np.random.default_rng(seed)
    z, y = rng.uniform(-2, 2, 2)
    x0 = np.concatenate([np.full(n, z), np.full(n, y)])
    tr = simulate(CouplingConfig(Topology.ring(n), sigma), x0, (0.0, 30.0))
    assert np.max(np.ptp(tr.states[:, :n], axis=1)) == 0.0
    assert np.max(np.ptp(tr.states[:, n:], axis=1)) == 0.0
