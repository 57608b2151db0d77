import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ringlab.errors import (DegenerateSpectrumError, DomainError, InvalidSizeError,
                            NonUniqueEquilibriumError)
from ringlab.spectral import (KineticMatrix, build_custom_kinetic, build_cycle_kinetic,
                              check_detailed_balance, circulant_cycle_spectrum, cot_bound,
                              eigenvalues, entropic_self_adjoint_defect, evolve_master,
                              max_im_re_ratio, perron_vector, random_kinetic,
                              random_reversible_kinetic, read_rates_csv, spectrum_report)

from oracles import eigenvalues_oracle, master_oracle, match_spectra


def _set(values):
    return sorted((round(z.real, 9), round(z.imag, 9)) for z in np.asarray(values, dtype=complex))


class TestConstruction:
    def test_three_cycle_matrix(self):
        K = build_cycle_kinetic(3, 1.0)
        np.testing.assert_array_equal(np.asarray(K), [[-1, 0, 1], [1, -1, 0], [0, 1, -1]])

    def test_two_cycle_rate_two(self):
        np.testing.assert_array_equal(np.asarray(build_cycle_kinetic(2, 2.0)), [[-2, 2], [2, -2]])

    def test_column_sums_vanish(self):
        np.testing.assert_array_equal(np.asarray(build_cycle_kinetic(4, 1.0)).sum(axis=0), 0.0)

    def test_all_zero_rates(self):
        np.testing.assert_array_equal(np.asarray(build_custom_kinetic(np.zeros((4, 4)))), 0.0)

    def test_chain_rates_give_bidiagonal(self):
        n = 5
        q = np.zeros((n, n))
        for i in range(n - 1):
            q[i + 1, i] = 1.0
        K = np.asarray(build_custom_kinetic(q))
        np.testing.assert_array_equal(np.diag(K), [-1, -1, -1, -1, 0])
        np.testing.assert_array_equal(np.diag(K, -1), 1.0)
        assert np.count_nonzero(K) == 2 * (n - 1)

    def test_three_state_mapping(self):
        K = build_custom_kinetic({(2, 1): 1.0, (1, 2): 2.0}, n=3)
        np.testing.assert_array_equal(np.asarray(K), [[-1, 2, 0], [1, -2, 0], [0, 0, 0]])

    def test_rates_csv(self, tmp_path):
        path = tmp_path / "rates.csv"
        path.write_text("i,j,q\n2,1,1\n1,2,2\n")
        np.testing.assert_array_equal(np.asarray(read_rates_csv(path)), [[-1, 2], [1, -2]])

    @pytest.mark.parametrize("n", [1, 0, 2.5])
    def test_invalid_size(self, n):
        with pytest.raises(InvalidSizeError):
            build_cycle_kinetic(n, 1.0)

    def test_negative_rate_rejected(self):
        with pytest.raises(DomainError):
            build_custom_kinetic({(1, 2): -0.1})
        with pytest.raises(DomainError):
            build_cycle_kinetic(3, 0.0)

    def test_non_kinetic_rejected(self):
        with pytest.raises(DomainError):
            KineticMatrix(np.array([[-1.0, 1.0], [0.5, -1.0]]))
        with pytest.raises(DomainError):
            KineticMatrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))
        with pytest.raises(InvalidSizeError):
            KineticMatrix(np.zeros((2, 3)))

    def test_entries_are_read_only(self):
        K = build_cycle_kinetic(3, 1.0)
        with pytest.raises(ValueError):
            K.entries[0, 0] = 5.0


class TestSpectrum:
    def test_cycle_four_eigenvalues(self):
        expected = [0, -1 + 1j, -2, -1 - 1j]
        assert _set(eigenvalues(build_cycle_kinetic(4, 1.0))) == _set(expected)
        assert _set(circulant_cycle_spectrum(4, 1.0)) == _set(expected)

    def test_two_cycle_closed_form(self):
        assert _set(circulant_cycle_spectrum(2, 1.0)) == _set([0, -2])

    def test_three_cycle_ratio(self):
        lam = circulant_cycle_spectrum(3, 1.0)[1]
        assert abs(lam.imag) / abs(lam.real) == pytest.approx(0.57735, abs=1e-5)

    def test_sorted_output(self):
        ev = eigenvalues(build_cycle_kinetic(7, 1.3))
        keys = [(z.real, z.imag) for z in ev]
        assert keys == sorted(keys)

    @pytest.mark.parametrize("n, expected", [(4, 1.0), (10, 3.07768)])
    def test_cycle_ratio(self, n, expected):
        rep = max_im_re_ratio(circulant_cycle_spectrum(n, 1.0))
        assert rep.max_im_re_ratio == pytest.approx(expected, abs=1e-5)
        assert rep.bound_satisfied

    @pytest.mark.parametrize("n", range(3, 51))
    def test_sharpness(self, n):
        rep = spectrum_report(build_cycle_kinetic(n, 1.0))
        assert abs(rep.max_im_re_ratio - cot_bound(n)) <= 1e-9 * max(1.0, cot_bound(n)) + 1e-9

    def test_random_five_state_below_bound(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            rep = spectrum_report(random_kinetic(5, rng))
            assert rep.max_im_re_ratio <= 1.37638 + 1e-9

    def test_reversible_spectrum_is_real(self):
        rng = np.random.default_rng(11)
        for n in range(2, 12):
            K, _ = random_reversible_kinetic(n, rng)
            assert np.max(np.abs(eigenvalues(K).imag)) < 1e-10

    def test_matches_determinant_expansion(self):
        rng = np.random.default_rng(2024)
        for _ in range(60):
            n = int(rng.integers(2, 7))
            K = random_kinetic(n, rng, density=float(rng.choice([0.3, 0.6, 1.0])))
            assert match_spectra(eigenvalues(K), eigenvalues_oracle(np.asarray(K))) < 1e-7

    def test_purely_imaginary_spectrum_fails_bound(self):
        rep = max_im_re_ratio(np.array([0.0, 1j, -1j]))
        assert rep.max_im_re_ratio == math.inf
        assert rep.purely_imaginary == 2
        assert not rep.bound_satisfied

    def test_degenerate_spectrum(self):
        with pytest.raises(DegenerateSpectrumError):
            max_im_re_ratio(np.zeros(3))
        with pytest.raises(DegenerateSpectrumError):
            spectrum_report(build_custom_kinetic(np.zeros((3, 3))))

    def test_report_json_shape(self):
        d = spectrum_report(build_cycle_kinetic(3, 1.0)).to_dict()
        assert set(d) == {"n", "eigenvalues", "max_im_re_ratio", "bound", "bound_satisfied"}
        assert d["n"] == 3 and len(d["eigenvalues"]) == 3 and len(d["eigenvalues"][0]) == 2

    def test_bound_is_zero_for_two_states(self):
        assert cot_bound(2) == 0.0
        assert spectrum_report(build_cycle_kinetic(2, 1.0)).bound_satisfied


@st.composite
def kinetic_matrices(draw):
    n = draw(st.integers(2, 9))
    rates = draw(arrays(np.float64, (n, n), elements=st.floats(0.0, 10.0)))
    return build_custom_kinetic(rates)


@settings(max_examples=150, deadline=None)
@given(kinetic_matrices())
def test_bound_property(K):
    ev = eigenvalues(K)
    scale = max(K.inf_norm(), 1.0)
    b = cot_bound(K.n)
    for lam in ev:
        if abs(lam) > 1e-9 * scale:
            assert abs(lam.imag) <= b * abs(lam.real) + 1e-9 * scale
            assert not (abs(lam.real) <= 1e-12 and abs(lam.imag) >= 1e-9 * scale)
    assert np.all(ev.real <= 1e-9 * scale)


@settings(max_examples=100, deadline=None)
@given(kinetic_matrices())
def test_construction_invariants(K):
    k = np.asarray(K)
    off = k - np.diag(np.diag(k))
    assert np.all(off >= 0)
    assert np.all(np.abs(k.sum(axis=0)) <= 1e-12 * max(1.0, np.abs(k).max()))


class TestEquilibrium:
    @pytest.mark.parametrize("n, q", [(3, 1.0), (7, 0.4), (12, 5.0)])
    def test_cycle_uniform(self, n, q):
        np.testing.assert_allclose(perron_vector(build_cycle_kinetic(n, q)), 1.0 / n, atol=1e-12)

    def test_two_state(self):
        K = build_custom_kinetic({(2, 1): 1.0, (1, 2): 2.0})
        np.testing.assert_allclose(perron_vector(K), [2 / 3, 1 / 3], atol=1e-12)

    def test_random_residual(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            K = random_kinetic(int(rng.integers(2, 13)), rng, density=0.6)
            p = perron_vector(K)
            assert np.max(np.abs(np.asarray(K) @ p)) <= 1e-10
            assert p.min() >= 0 and abs(p.sum() - 1) < 1e-12

    def test_reducible_nonunique(self):
        with pytest.raises(NonUniqueEquilibriumError) as info:
            perron_vector(build_custom_kinetic(np.zeros((3, 3))))
        assert info.value.nullity == 3

    def test_detailed_balance_examples(self):
        K2 = build_custom_kinetic({(2, 1): 1.0, (1, 2): 2.0})
        assert check_detailed_balance(K2, [2 / 3, 1 / 3])
        assert entropic_self_adjoint_defect(K2, [2 / 3, 1 / 3]) <= 1e-12
        K3 = build_cycle_kinetic(3, 1.0)
        assert not check_detailed_balance(K3, [1 / 3] * 3)
        assert entropic_self_adjoint_defect(K3, [1 / 3] * 3) > 0.1

    def test_defect_zero_iff_balanced(self):
        rng = np.random.default_rng(17)
        for i in range(100):
            n = int(rng.integers(2, 9))
            if i % 2:
                K, p = random_reversible_kinetic(n, rng)
            else:
                K = random_kinetic(n, rng)
                p = perron_vector(K)
            balanced = check_detailed_balance(K, p, tol=1e-10)
            assert balanced == (entropic_self_adjoint_defect(K, p) <= 1e-9)
            if balanced:
                assert np.max(np.abs(eigenvalues(K).imag)) <= 1e-10

    def test_zero_equilibrium_component_rejected(self):
        with pytest.raises(DomainError):
            check_detailed_balance(build_cycle_kinetic(2, 1.0), [1.0, 0.0])


class TestMaster:
    def test_zero_matrix_is_stationary(self):
        K = build_custom_kinetic(np.zeros((3, 3)))
        p0 = np.array([0.2, 0.3, 0.5])
        tr = evolve_master(K, p0, 10.0)
        np.testing.assert_array_equal(tr.states, np.tile(p0, (len(tr.times), 1)))

    def test_cycle_relaxes_to_uniform(self):
        tr = evolve_master(build_cycle_kinetic(6, 1.0), np.eye(6)[0], 200.0)
        np.testing.assert_allclose(tr.final_state, 1 / 6, atol=1e-9)

    def test_envelope_decay_rate(self):
        n = 20
        K = build_cycle_kinetic(n, 1.0)
        tr = evolve_master(K, np.eye(n)[0], 400.0)
        rate = 1.0 - math.cos(2 * math.pi / n)
        dev = np.abs(tr.states[:, 0] - 1.0 / n)
        late = tr.times > 100
        # local maxima of |p_1 - 1/n| track A exp(-rate t)
        t, d = tr.times[late], dev[late]
        peaks = np.nonzero((d[1:-1] > d[:-2]) & (d[1:-1] >= d[2:]))[0] + 1
        slope = np.polyfit(t[peaks], np.log(d[peaks]), 1)[0]
        assert slope == pytest.approx(-rate, rel=0.05)

    def test_matches_matrix_exponential(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            n = int(rng.integers(2, 10))
            K = random_kinetic(n, rng, density=0.6)
            p0 = rng.dirichlet(np.ones(n))
            tr = evolve_master(K, p0, 10.0)
            assert np.max(np.abs(tr.final_state - master_oracle(np.asarray(K), p0, 10.0))) <= 1e-6

    def test_simplex_invariance(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            n = int(rng.integers(2, 13))
            K = random_kinetic(n, rng, density=float(rng.choice([0.3, 0.6, 1.0])))
            tr = evolve_master(K, rng.dirichlet(np.ones(n)), 50.0)
            assert np.max(np.abs(tr.states.sum(axis=1) - 1.0)) <= 1e-9
            assert tr.states.min() >= -1e-9

    def test_conservation_long_horizon(self):
        K = random_kinetic(8, np.random.default_rng(1))
        tr = evolve_master(K, np.full(8, 1 / 8), 100.0)
        assert np.max(np.abs(tr.states.sum(axis=1) - 1.0)) <= 1e-9

    def test_bad_inputs(self):
        K = build_cycle_kinetic(3, 1.0)
        with pytest.raises(DomainError):
            evolve_master(K, [1.0, 0.0], 1.0)
        with pytest.raises(DomainError):
            evolve_master(K, [1.0, 0.0, 0.0], 0.0)
