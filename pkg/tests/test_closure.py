import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from tbh_closure.closure import (
    ClosureConfig,
    ClosureState,
    closure_rhs,
    cost_function,
    damping_coefficients,
    entropy,
    hj_hamiltonian,
    integrate_closure,
    m_coeff,
    m_saturated,
    omega_evolution_step,
    omega_factor,
    omega_history,
    omega_saturation_estimate,
    pair_table,
    reduced_energy,
    value_coeffs,
)
from tbh_closure.spectral import tbh_rhs_direct

from conftest import random_state

G, B = 64.74, 5.0
valid_pairs = st.tuples(st.integers(-8, 8), st.integers(-8, 8)).filter(
    lambda p: p[0] != 0 and p[1] != 0 and p[0] + p[1] > 0
)


class TestOmegaFactor:
    def test_reference_values(self):
        assert omega_factor(1, 1) == -0.25
        assert omega_factor(2, -1) == 0.5

    @given(valid_pairs)
    def test_symmetric(self, p):
        assert omega_factor(*p) == omega_factor(p[1], p[0])

    @given(valid_pairs)
    def test_closed_forms_and_signs(self, p):
        k1, k2 = p
        w = omega_factor(k1, k2)
        if k1 > 0 and k2 > 0:
            assert w == pytest.approx(-k1 * k2 / (k1 + k2) ** 2)
            assert -0.25 <= w < 0
        elif k1 * k2 < 0 and k1 + k2 > 0:
            big, small = max(k1, k2), min(k1, k2)
            assert w == pytest.approx(abs(small) / big)
            assert 0 < w < 1

    @pytest.mark.parametrize("pair", [(0, 1), (1, 0), (2, -2), (-1, -1)])
    def test_singular_pairs(self, pair):
        with pytest.raises(ValueError):
            omega_factor(*pair)


class TestRiccatiCoefficient:
    def test_zero_at_start(self):
        assert np.all(m_coeff(np.arange(1, 6), 0.0, G, B) == 0)

    def test_solves_riccati_equation(self):
        # dM/dt = gamma k^2 / beta^2 - beta M^2, checked by central differences
        t = np.linspace(0.01, 1.0, 50)
        h = 1e-6
        for k in (1, 3):
            dM = (m_coeff(k, t + h, G, B) - m_coeff(k, t - h, G, B)) / (2 * h)
            rhs = G * k ** 2 / B ** 2 - B * m_coeff(k, t, G, B) ** 2
            np.testing.assert_allclose(dM, rhs, rtol=1e-6, atol=1e-7)

    def test_monotone_and_saturating(self):
        t = np.linspace(0, 3, 200)
        M = m_coeff(2, t, G, B)
        assert np.all(np.diff(M) >= 0)
        assert M[-1] == pytest.approx(m_saturated(2, G, B), rel=1e-9)

    def test_reported_damping_times(self):
        assert 1 / (B * m_saturated(1, 64.74, B)) == pytest.approx(0.2779, abs=5e-5)
        assert 1 / (B * m_saturated(1, 73.83, B)) == pytest.approx(0.2602, abs=5e-5)

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            m_coeff(1, 0.1, G, 0.0)


class TestOmegaEvolution:
    def test_starts_at_zero(self):
        state = ClosureState(np.zeros(5))
        assert np.all(state.omega_table == 0)

    def test_converges_to_stationary_factor(self):
        cfg = ClosureConfig(m=5, gamma=G, beta=B)
        _, table, pairs = omega_history(cfg, 10 * np.sqrt(B / G) + 1.0)
        np.testing.assert_allclose(table[-1], pairs.omega, atol=1e-6)

    def test_matches_accurate_ode_solution(self):
        # first-order scheme: error halves with the step
        cfg = ClosureConfig(m=3, gamma=G, beta=B)
        pairs = pair_table(3)
        k1, k2, k = pairs.k1, pairs.k2, pairs.k

        def f(t, y):
            M1, M2, Mk = (m_coeff(x, t, G, B) for x in (k1, k2, k))
            return (B / k) * (k1 * M1 + k2 * M2 - k * Mk) - B * (M1 + M2 + Mk) * y

        ref = solve_ivp(f, (0, 0.5), np.zeros(len(pairs)), rtol=1e-12, atol=1e-14, dense_output=True)
        errs = []
        for dt in (2e-3, 1e-3, 5e-4):
            ts, table, _ = omega_history(cfg, 0.5, dt=dt)
            errs.append(np.max(np.abs(table - ref.sol(ts).T)))
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)
        assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.1)
        assert errs[-1] < 5e-3

    def test_saturation_estimate_after_ramp(self):
        cfg = ClosureConfig(m=5, gamma=G, beta=B, dt=1e-5)
        ts, table, pairs = omega_history(cfg, 1.0)
        for i, (a, b) in enumerate(pairs.stored):
            rate = np.sqrt(G / B) * (abs(a) + abs(b) + a + b)
            late = ts >= 7.5 / rate
            est = omega_saturation_estimate(a, b, ts[late], G, B)
            assert np.max(np.abs(table[late, i] - est) / np.abs(est)) <= 0.15

    def test_step_requires_positive_dt(self):
        with pytest.raises(ValueError):
            omega_evolution_step(ClosureState(np.zeros(2)), ClosureConfig(m=2), 0.0)

    def test_table_layout_is_symmetric(self):
        state = ClosureState(np.zeros(4), omega_table=np.arange(len(pair_table(4)), dtype=float))
        for a, b in pair_table(4).stored:
            assert state.omega(a, b) == state.omega(b, a)

    def test_pair_table_enumerates_all_ordered_pairs(self):
        m = 4
        pairs = pair_table(m)
        expected = {(a, b) for a, b in itertools.product(range(-m, m + 1), repeat=2)
                    if a and b and 1 <= a + b <= m}
        assert set(zip(pairs.ordered_k1.tolist(), pairs.ordered_k2.tolist())) == expected
        assert np.all(pairs.k1 >= pairs.k2)


class TestClosureRHS:
    @pytest.mark.parametrize("variant", ["nonstationary", "stationary", "linearized"])
    def test_zero_state(self, variant):
        cfg = ClosureConfig(m=3, variant=variant)
        assert np.all(closure_rhs(ClosureState(np.zeros(3), t=0.4), cfg) == 0)

    def test_linearized_is_pure_damping(self, rng):
        a = random_state(rng, 4)
        cfg = ClosureConfig(m=4, variant="linearized")
        t = 0.13
        k = np.arange(1, 5)
        expect = -np.sqrt(G / B) * k * np.tanh(np.sqrt(G / B) * k * t) * a
        np.testing.assert_allclose(closure_rhs(ClosureState(a, t=t), cfg), expect, rtol=1e-14)

    def test_stationary_two_mode_example(self):
        c = 0.8 - 0.3j
        cfg = ClosureConfig(m=2, variant="stationary")
        d = closure_rhs(ClosureState([c, 0.0]), cfg)
        assert d[1] == pytest.approx(-0.75j * c * c, abs=1e-15)

    def test_undamped_advection_is_truncated_tbh(self, rng):
        a = random_state(rng, 6)
        cfg = ClosureConfig(m=6, gamma=0.0)
        np.testing.assert_allclose(closure_rhs(ClosureState(a, t=0.3), cfg), tbh_rhs_direct(a), atol=1e-13)

    def test_late_nonstationary_matches_stationary(self, rng):
        cfg = ClosureConfig(m=5, gamma=G, beta=B)
        t_late = 10 * np.sqrt(B / G)
        ts, table, _ = omega_history(cfg, t_late + 0.5)
        a = random_state(rng, 5, 0.3)
        ns = closure_rhs(ClosureState(a, t=ts[-1], omega_table=table[-1]), cfg)
        st_ = closure_rhs(ClosureState(a, t=ts[-1]), ClosureConfig(m=5, gamma=G, beta=B, variant="stationary"))
        assert np.max(np.abs(ns - st_)) <= 1e-5 * np.max(np.abs(st_))

    def test_damping_coefficients(self):
        cfg = ClosureConfig(m=3)
        np.testing.assert_allclose(damping_coefficients(cfg, 0.0), 0.0)
        np.testing.assert_allclose(damping_coefficients(ClosureConfig(m=3, variant="stationary"), 0.0),
                                   np.sqrt(G / B) * np.arange(1, 4))

    def test_mode_count_mismatch(self):
        with pytest.raises(ValueError):
            closure_rhs(ClosureState(np.zeros(3)), ClosureConfig(m=4))


class TestIntegrateClosure:
    def test_linearized_cosh_solution(self, rng):
        a0 = random_state(rng, 5, 0.3)
        cfg = ClosureConfig(m=5, variant="linearized", dt=1e-4, t_final=1.5, observe_stride=50)
        s = integrate_closure(a0, cfg)
        k = np.arange(1, 6)
        exact = a0 / np.cosh(np.sqrt(G / B) * np.outer(s.times, k))
        assert np.max(np.abs(s.means - exact)) <= 1e-8

    def test_frozen_damping_is_first_order_only(self, rng):
        a0 = random_state(rng, 3, 0.3)
        cfg = ClosureConfig(m=3, variant="linearized", dt=1e-4, t_final=1.0, freeze_damping=True)
        s = integrate_closure(a0, cfg)
        exact = a0 / np.cosh(np.sqrt(G / B) * np.outer(s.times, np.arange(1, 4)))
        err = np.max(np.abs(s.means - exact))
        assert 1e-8 < err < 1e-3

    def test_undamped_closure_conserves_energy(self, rng):
        a0 = random_state(rng, 5, 0.3)
        cfg = ClosureConfig(m=5, gamma=0.0, dt=1e-4, t_final=1.0, observe_stride=100)
        s = integrate_closure(a0, cfg)
        drift = np.abs(s.energy_mean - s.energy_mean[0]) / s.energy_mean[0]
        assert drift.max() <= 1e-8

    def test_entropy_nondecreasing_under_linear_damping(self, rng):
        a0 = random_state(rng, 4)
        s = integrate_closure(a0, ClosureConfig(m=4, variant="linearized", t_final=0.5))
        ent = np.array([entropy(a, B) for a in s.means])
        assert np.all(np.diff(ent) >= 0)

    def test_time_step_refinement(self, rng):
        a0 = random_state(rng, 5, 0.15)
        coarse = integrate_closure(a0, ClosureConfig(m=5, dt=5e-4, observe_stride=10))
        fine = integrate_closure(a0, ClosureConfig(m=5, dt=5e-5, observe_stride=100))
        np.testing.assert_allclose(coarse.times, fine.times, atol=1e-12)
        assert np.max(np.abs(coarse.means - fine.means)) < 1e-4

    def test_decay_and_grid(self, rng):
        a0 = random_state(rng, 5, 0.15)
        s = integrate_closure(a0, ClosureConfig(m=5))
        assert len(s) == 301 and s.times[-1] == pytest.approx(1.5)
        assert np.all(np.abs(s.means[-1]) < 0.05 * np.abs(a0))

    def test_rejects_bad_initial_data(self):
        with pytest.raises(ValueError):
            integrate_closure(np.zeros(4), ClosureConfig(m=5))
        with pytest.raises(ValueError):
            integrate_closure(np.array([np.inf, 0, 0, 0, 0]), ClosureConfig(m=5))

    @pytest.mark.parametrize("kw", [dict(m=0), dict(gamma=-1.0), dict(variant="other"), dict(dt=0.0),
                                    dict(beta=-1.0), dict(observe_stride=0), dict(t_final=-1.0)])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            ClosureConfig(**kw)


class TestValueFunction:
    def test_reference_coefficient(self):
        v = value_coeffs(G, B, 3)
        assert v.n_coeff(1, 1, -2) == pytest.approx(-1j / (12 * B ** 2))
        assert v.n_coeff(1, 1, 1) == 0
        assert v.n_coeff(-1, -1, 2) == np.conj(v.n_coeff(1, 1, -2))
        np.testing.assert_allclose(v.M, np.sqrt(G / B ** 3) * np.arange(1, 4))

    def test_symmetries(self):
        v = value_coeffs(G, B, 4)
        for key, c in v.N.items():
            for perm in itertools.permutations(key):
                assert v.N[perm] == c
            assert v.N[tuple(-x for x in key)] == pytest.approx(np.conj(c))

    def test_related_to_stationary_factor(self):
        v = value_coeffs(G, B, 5)
        for a, b in pair_table(5).stored:
            k = a + b
            assert (6 * B ** 2 / (1j * k)) * v.n_coeff(a, b, -k) == pytest.approx(omega_factor(a, b))

    def test_conj_gradient_matches_finite_differences(self, rng):
        v = value_coeffs(G, B, 3)
        lam = random_state(rng, 3, 0.5)
        g = v.conj_gradient(lam)
        h = 1e-6
        for j in range(3):
            e = np.zeros(3, dtype=complex)
            e[j] = h
            dx = (v.value(lam + e) - v.value(lam - e)) / (2 * h)
            dy = (v.value(lam + 1j * e) - v.value(lam - 1j * e)) / (2 * h)
            assert g[j] == pytest.approx(0.5 * (dx + 1j * dy), abs=1e-7)

    def test_hamilton_jacobi_residual_is_fourth_order(self, rng):
        # with the cubic term the residual of H(lambda, -dv/dlambda*) = 0 starts at order 4
        v = value_coeffs(G, B, 4)
        direction = random_state(rng, 4)
        quad_only = value_coeffs(G, B, 4)
        quad_only.N = {}
        res, res_quad = [], []
        for eps in (0.1, 0.05, 0.025):
            lam = eps * direction
            res.append(abs(hj_hamiltonian(lam, -v.conj_gradient(lam), G, B)))
            res_quad.append(abs(hj_hamiltonian(lam, -quad_only.conj_gradient(lam), G, B)))
        ratios = np.array(res[:-1]) / np.array(res[1:])
        ratios_quad = np.array(res_quad[:-1]) / np.array(res_quad[1:])
        np.testing.assert_allclose(ratios, 16.0, rtol=0.1)
        np.testing.assert_allclose(ratios_quad, 8.0, rtol=0.1)


class TestEntropyAndCost:
    def test_entropy_examples(self):
        assert entropy(np.zeros(3), B) == 0
        assert entropy(np.array([1.0]), 5.0) == -5.0

    def test_cost_at_equilibrium(self):
        assert cost_function(np.zeros(3), np.zeros(3), G, B) == 0

    def test_adiabatic_path_leaves_potential_term(self, rng):
        a = random_state(rng, 4)
        k = np.arange(1, 5)
        adot = -0.5j * k * pair_table(4).quadratic_sum(a)
        L = cost_function(a, adot, G, B)
        assert L == pytest.approx(np.sum(G * k ** 2 * np.abs(a) ** 2), rel=1e-12)
        assert cost_function(a, adot + 0.1, G, B) > L

    def test_decaying_extremal_minimizes_action(self):
        # one mode has no advection: L = beta|adot|^2 + gamma|a|^2, extremal a0 exp(-sqrt(gamma/beta) t)
        a0, T, steps = 0.4 + 0.2j, 1.0, 2000
        t = np.linspace(0, T, steps + 1)
        cfg = ClosureConfig(m=1, gamma=G, beta=B, variant="stationary", dt=T / steps, t_final=T, observe_stride=1)
        path = integrate_closure(np.array([a0]), cfg).means[:, 0]

        def action(a):
            adot = np.gradient(a, t)
            vals = np.array([cost_function(a[i:i + 1], adot[i:i + 1], G, B) for i in range(t.size)])
            return np.trapezoid(vals, t) if hasattr(np, "trapezoid") else np.trapz(vals, t)

        base = action(path)
        rng = np.random.default_rng(8)
        for _ in range(20):
            j = rng.integers(1, 4)
            c = 0.05 * (rng.standard_normal() + 1j * rng.standard_normal())
            bump = c * np.sin(j * np.pi * t / T)
            assert action(path + bump) > base

    def test_cost_rejects_mismatched_lengths(self):
        with pytest.raises(ValueError):
            cost_function(np.zeros(2), np.zeros(3), G, B)

    def test_reduced_energy(self):
        assert reduced_energy(np.array([1j, 2.0])) == 5.0
