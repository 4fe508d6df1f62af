"""Quantum-statistical calculators: matter waves, beats, dispersion, mode
grids, Bose-Einstein occupations and the truncated ladder operators."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nanoporeflow.quantum import (AmplitudeMismatch, C, DomainError, H, HBAR,
                                  InsufficientSamples, K_B, Wave,
                                  be_occupation, build_mode_grid,
                                  condensate_fraction, de_broglie_wavelength,
                                  group_velocity_from_k,
                                  group_velocity_from_lambda,
                                  ladder_operators, relativistic_energy,
                                  solve_chemical_potential, superpose_waves)

E0_ELECTRON = 8.187e-14  # J, electron rest energy as commonly tabulated
EV = 1.602176634e-19

# Frozen regression constants, evaluated independently with 50-digit
# arithmetic (mpmath) from the closed forms before implementation.
E_FROZEN = 8.718630671577284e-14        # sqrt((1e-22 c)^2 + E0^2)
LAMBDA_FROZEN = 1.226373890749549e-10   # hc/sqrt(ke^2 + 2 ke E0), ke = 100 eV
EPS_FROZEN = 7.341940741257696e-30      # hbar^2 (2pi/L)^2 / 2m, L=1e-6, m=2.99e-26


class TestConstants:
    def test_codata_exact_values(self):
        assert H == 6.62607015e-34
        assert C == 299792458.0
        assert K_B == 1.380649e-23
        assert HBAR == H / (2 * math.pi)


class TestRelativisticEnergy:
    def test_rest_case(self):
        assert relativistic_energy(0.0, E0_ELECTRON) == E0_ELECTRON

    def test_massless_case(self):
        p = 3.3e-27
        assert relativistic_energy(p, 0.0) == pytest.approx(p * C, rel=1e-15)

    def test_frozen_electron_value(self):
        assert relativistic_energy(1e-22, E0_ELECTRON) == pytest.approx(
            E_FROZEN, rel=1e-13)

    def test_lower_bound(self):
        p, E0 = 7e-23, 5e-14
        E = relativistic_energy(p, E0)
        assert E >= max(abs(p) * C, E0)

    def test_negative_rest_energy_rejected(self):
        with pytest.raises(DomainError):
            relativistic_energy(1e-22, -1.0)


class TestDeBroglie:
    def test_photon_like_limit(self):
        k_e = 1e-15
        assert de_broglie_wavelength(k_e, 0.0) == pytest.approx(
            H * C / k_e, rel=1e-15)

    def test_frozen_100ev_electron(self):
        lam = de_broglie_wavelength(100 * EV, E0_ELECTRON)
        assert lam == pytest.approx(LAMBDA_FROZEN, rel=1e-13)

    def test_two_route_consistency_100ev(self):
        k_e = 100 * EV
        E = k_e + E0_ELECTRON
        p = math.sqrt(E * E - E0_ELECTRON * E0_ELECTRON) / C
        assert de_broglie_wavelength(k_e, E0_ELECTRON) == pytest.approx(
            H / p, rel=1e-12)

    def test_zero_kinetic_energy_rejected(self):
        with pytest.raises(DomainError):
            de_broglie_wavelength(0.0, E0_ELECTRON)
        with pytest.raises(DomainError):
            de_broglie_wavelength(-1e-19, E0_ELECTRON)

    def test_nonrelativistic_limit(self):
        # k_e/E0 <= 1e-4: agrees with h/sqrt(2 m k_e) within 0.1%.
        for ratio in (1e-4, 1e-5, 1e-6):
            k_e = ratio * E0_ELECTRON
            m = E0_ELECTRON / C ** 2
            nonrel = H / math.sqrt(2 * m * k_e)
            assert de_broglie_wavelength(k_e, E0_ELECTRON) == pytest.approx(
                nonrel, rel=1e-3)

    @settings(max_examples=300, deadline=None)
    @given(k_e=st.floats(1e-25, 1e-10), E0=st.floats(0.0, 1e-9))
    def test_two_route_consistency_random(self, k_e, E0):
        # The naive float route E^2 - E0^2 cancels catastrophically when
        # k_e << E0, so the independent route is evaluated in 50-digit
        # arithmetic.
        import mpmath as mp
        with mp.workdps(50):
            E = mp.mpf(k_e) + mp.mpf(E0)
            p = mp.sqrt(E * E - mp.mpf(E0) ** 2) / mp.mpf(C)
            lam_oracle = float(mp.mpf(H) / p)
        assert de_broglie_wavelength(k_e, E0) == pytest.approx(
            lam_oracle, rel=1e-12)


class TestSuperposition:
    def test_identical_waves(self):
        w = Wave(B=1.5, omega=3.0, k=2.0)
        for x, t in ((0.0, 0.0), (0.7, 1.3), (-2.0, 5.5)):
            res = superpose_waves(w, w, x, t)
            assert res.displacement == pytest.approx(
                2 * 1.5 * math.cos(3.0 * t - 2.0 * x), rel=1e-14, abs=1e-14)

    def test_origin_gives_2B(self):
        res = superpose_waves(Wave(0.8, 1.1, 4.0), Wave(0.8, 0.3, -2.0), 0.0, 0.0)
        assert res.displacement == pytest.approx(1.6, rel=1e-15)

    def test_sum_equals_product_spec_point(self):
        res = superpose_waves(Wave(1.0, 1.1, 1.0), Wave(1.0, 0.9, 1.0),
                              x=0.0, t=math.pi)
        assert res.product_value == pytest.approx(res.displacement, rel=1e-12)

    def test_amplitude_mismatch_rejected(self):
        with pytest.raises(AmplitudeMismatch):
            superpose_waves(Wave(1.0, 1.0, 1.0), Wave(2.0, 1.0, 1.0), 0.0, 0.0)

    @settings(max_examples=300, deadline=None)
    @given(B=st.floats(1e-3, 1e3), w1=st.floats(0, 300), w2=st.floats(0, 300),
           k1=st.floats(-300, 300), k2=st.floats(-300, 300),
           x=st.floats(-3, 3), t=st.floats(0, 3))
    def test_sum_equals_product_random(self, B, w1, w2, k1, k2, x, t):
        # Moderate phases: the two algebraic routes reduce cos arguments
        # differently, so their difference grows like eps * |phase|.
        res = superpose_waves(Wave(B, w1, k1), Wave(B, w2, k2), x, t)
        assert res.product_value == pytest.approx(res.displacement,
                                                  rel=1e-12, abs=2e-12 * B)


class TestDispersion:
    def test_constant_vp_k_form(self):
        # k * dv_p/dk leaves roundoff-level residue at the one-sided ends.
        k = np.linspace(1.0, 5.0, 100)
        vg = group_velocity_from_k(k, np.full_like(k, 7.5))
        np.testing.assert_allclose(vg, 7.5, rtol=1e-12)

    def test_constant_vp_lambda_form(self):
        lam = np.linspace(0.5, 2.0, 100)
        vg = group_velocity_from_lambda(lam, np.full_like(lam, 3.25))
        np.testing.assert_allclose(vg, 3.25, rtol=1e-12)

    def test_linear_vp_doubles(self):
        a = 0.37
        k = np.linspace(1.0, 10.0, 1000)
        vg = group_velocity_from_k(k, a * k)
        np.testing.assert_allclose(vg, 2 * a * k, rtol=1e-6)

    def test_inverse_sqrt_vp_halves(self):
        a = 2.4
        k = np.linspace(1.0, 2.0, 4000)
        v_p = a / np.sqrt(k)
        vg = group_velocity_from_k(k, v_p)
        np.testing.assert_allclose(vg, v_p / 2, rtol=1e-6)

    def test_linear_vp_lambda_form_doubles(self):
        a = 0.37
        lam = np.linspace(1.0, 2.0, 4000)
        v_p = 2 * np.pi * a / lam
        vg = group_velocity_from_lambda(lam, v_p)
        np.testing.assert_allclose(vg, 2 * v_p, rtol=1e-6)

    def test_dual_form_consistency(self):
        # Same physical v_p(k) = a sqrt(k) + b, sampled in k and in lambda.
        a, b = 1.3, 0.4
        k = np.linspace(1.0, 4.0, 2000)
        vg_k = group_velocity_from_k(k, a * np.sqrt(k) + b)
        lam = 2 * np.pi / k[::-1]
        v_p_lam = a * np.sqrt(2 * np.pi / lam) + b
        vg_lam = group_velocity_from_lambda(lam, v_p_lam)[::-1]
        np.testing.assert_allclose(vg_lam, vg_k, rtol=1e-6)

    def test_too_few_samples(self):
        with pytest.raises(InsufficientSamples):
            group_velocity_from_k([1.0, 2.0], [1.0, 1.0])

    def test_non_monotone_samples(self):
        with pytest.raises(InsufficientSamples):
            group_velocity_from_k([1.0, 3.0, 2.0], [1.0, 1.0, 1.0])
        with pytest.raises(InsufficientSamples):
            group_velocity_from_lambda([-1.0, 1.0, 2.0], [1.0, 1.0, 1.0])


class TestModeGrid:
    def test_zero_mode_has_zero_energy(self):
        grid = build_mode_grid(1e-6, 2, 2.99e-26)
        assert grid.epsilon_min == 0.0
        i = np.argmin(grid.energies)
        assert grid.kx[i] == 0.0 and grid.ky[i] == 0.0

    def test_frozen_first_excited_energy(self):
        grid = build_mode_grid(1e-6, 1, 2.99e-26)
        first = np.sort(grid.energies)[1]
        assert first == pytest.approx(EPS_FROZEN, rel=1e-13)

    def test_nmax1_count_and_degeneracies(self):
        grid = build_mode_grid(1e-6, 1, 2.99e-26)
        assert grid.mode_count == 9
        spec = grid.sorted_spectrum()
        e1 = EPS_FROZEN
        assert np.sum(spec == 0.0) == 1
        assert np.sum(np.isclose(spec, e1, rtol=1e-12, atol=0)) == 4
        assert np.sum(np.isclose(spec, 2 * e1, rtol=1e-12, atol=0)) == 4

    def test_mode_count_general(self):
        for n_max in (1, 3, 8):
            assert build_mode_grid(1e-6, n_max, 1e-26).mode_count == (2 * n_max + 1) ** 2

    def test_sorted_spectrum_ascending(self):
        spec = build_mode_grid(2e-6, 4, 1e-26).sorted_spectrum()
        assert np.all(np.diff(spec) >= 0)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            build_mode_grid(-1.0, 1, 1e-26)
        with pytest.raises(ValueError):
            build_mode_grid(1e-6, 0, 1e-26)


class TestBoseEinstein:
    def test_ln2_gives_unit_occupation(self):
        T = 2.0
        eps = K_B * T * math.log(2.0)
        assert be_occupation(eps, 0.0, T) == pytest.approx(1.0, rel=1e-14)

    def test_boltzmann_tail(self):
        T = 1.0
        eps = 50.0 * K_B * T
        n = be_occupation(eps, 0.0, T)
        assert n == pytest.approx(math.exp(-50.0), rel=1e-15 + 2e-22)
        # expm1-based evaluation keeps the tail accurate:
        assert abs(n - 1.0 / math.expm1(50.0)) == 0.0

    def test_pole_rejected(self):
        with pytest.raises(DomainError):
            be_occupation(1e-23, 1e-23, 1.0)
        with pytest.raises(DomainError):
            be_occupation(1e-23, 2e-23, 1.0)

    def test_negative_temperature_rejected(self):
        with pytest.raises(DomainError):
            be_occupation(1e-23, 0.0, -1.0)


class TestChemicalPotential:
    def test_summed_occupation_matches_target(self):
        grid = build_mode_grid(1e-6, 4, 2.99e-26)
        for N in (10.0, 1e4, 3.7e6):
            Q = solve_chemical_potential(grid, N, 1.0)
            total = float(np.sum(be_occupation(grid.energies, Q, 1.0)))
            assert total == pytest.approx(N, rel=2e-9)

    def test_single_mode_closed_form(self):
        # One mode at eps=0: N = 1/(e^{-Q/kT} - 1)  =>  Q = -kT ln(1 + 1/N).
        from nanoporeflow.quantum import ModeGrid2D
        grid = ModeGrid2D(L=1e-6, n_max=1, m=2.99e-26,
                          kx=np.array([0.0]), ky=np.array([0.0]),
                          energies=np.array([0.0]))
        T = 3.0
        for N in (0.5, 1.0, 100.0, 1e6):
            Q = solve_chemical_potential(grid, N, T)
            assert Q == pytest.approx(-K_B * T * math.log1p(1.0 / N), rel=1e-9)

    def test_two_mode_recovery(self):
        from nanoporeflow.quantum import ModeGrid2D
        delta = 1e-25
        grid = ModeGrid2D(L=1e-6, n_max=1, m=2.99e-26,
                          kx=np.array([0.0, 1.0]), ky=np.array([0.0, 0.0]),
                          energies=np.array([0.0, delta]))
        T = 1.0
        Q = solve_chemical_potential(grid, 42.0, T)
        total = float(np.sum(be_occupation(grid.energies, Q, T)))
        assert total == pytest.approx(42.0, rel=2e-9)

    def test_bec_limit_direction(self):
        grid = build_mode_grid(1e-6, 2, 2.99e-26)
        prev = -np.inf
        for N in (1e2, 1e3, 1e4, 1e5, 1e6):
            Q = solve_chemical_potential(grid, N, 1.0)
            assert Q < grid.epsilon_min
            assert Q > prev
            prev = Q

    def test_invalid_targets(self):
        grid = build_mode_grid(1e-6, 1, 2.99e-26)
        with pytest.raises(DomainError):
            solve_chemical_potential(grid, 0.0, 1.0)
        with pytest.raises(DomainError):
            solve_chemical_potential(grid, 10.0, 0.0)


class TestCondensateFraction:
    def test_single_mode_fraction_is_one(self):
        from nanoporeflow.quantum import ModeGrid2D
        grid = ModeGrid2D(L=1e-6, n_max=1, m=2.99e-26,
                          kx=np.array([0.0]), ky=np.array([0.0]),
                          energies=np.array([0.0]))
        assert condensate_fraction(grid, 1e4, 1.0) == pytest.approx(1.0, abs=0)

    def test_low_temperature_limit(self):
        grid = build_mode_grid(1e-6, 1, 2.99e-26)
        # k_B T << gap: excited modes frozen out.
        T = grid.sorted_spectrum()[1] / (K_B * 50.0)
        assert condensate_fraction(grid, 100.0, T) == pytest.approx(1.0, abs=1e-6)

    def test_fraction_non_increasing_in_T(self):
        grid = build_mode_grid(1e-6, 2, 2.99e-26)
        gap = grid.sorted_spectrum()[1]
        fractions = [condensate_fraction(grid, 1e3, gap / K_B * s)
                     for s in (0.02, 0.04, 0.08, 0.16, 0.32)]
        assert all(b <= a + 1e-12 for a, b in zip(fractions, fractions[1:]))


class TestFockSpace:
    def test_a_annihilates_vacuum(self):
        fs = ladder_operators(4)
        np.testing.assert_array_equal(fs.a @ fs.ket(0), np.zeros(5))

    def test_creation_action(self):
        fs = ladder_operators(5)
        for n in range(5):
            np.testing.assert_allclose(fs.a_dag @ fs.ket(n),
                                       math.sqrt(n + 1) * fs.ket(n + 1),
                                       rtol=0, atol=0)

    def test_number_operator_eigenvalues_exact(self):
        fs = ladder_operators(7)
        N = fs.number_operator
        for n in range(8):
            assert fs.ket(n) @ N @ fs.ket(n) == float(n)
        # ... and the closed form matches the literal matrix product to
        # rounding (sqrt(n)*sqrt(n) is off by one ulp for some n).
        np.testing.assert_allclose(fs.a_dag @ fs.a, N, rtol=0, atol=1e-14)

    def test_commutator_diagonal_nmax3(self):
        fs = ladder_operators(3)
        comm = fs.commutator
        np.testing.assert_array_equal(np.diag(comm), [1.0, 1.0, 1.0, -3.0])
        np.testing.assert_array_equal(comm, np.diag(np.diag(comm)))
        np.testing.assert_allclose(fs.a @ fs.a_dag - fs.a_dag @ fs.a, comm,
                                   rtol=0, atol=1e-14)

    def test_a_dag_is_transpose(self):
        fs = ladder_operators(6)
        np.testing.assert_array_equal(fs.a_dag, fs.a.T)

    def test_invalid_level(self):
        fs = ladder_operators(2)
        with pytest.raises(ValueError):
            fs.ket(3)
        with pytest.raises(ValueError):
            ladder_operators(0)
