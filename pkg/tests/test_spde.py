"""Mild-solution integrator: propagators, noise, stopping, conservation."""

import math

import numpy as np
import pytest
import scipy.integrate

from dklab.potential import PotentialSpec
from dklab.spde import (DivergenceError, SpdeConfig, SpectralState,
                        build_propagator_bank, convolution_bound_check,
                        default_datum, h_delta, initial_state,
                        linear_propagator, mode_energy, q_wiener_increment,
                        solve_noise_free, solve_spde, step_mild, total_mass)
from dklab.torus import TWO_PI, ResolutionError, TorusGeometry, make_kernel

W_COS = PotentialSpec.cosine_potential()


def small_cfg(**kw):
    base = dict(n_grid=128, epsilon=0.2, gamma=1.0, sigma=1.0,
                n_particles=1e4, dt=1e-3, t_horizon=0.05)
    base.update(kw)
    return SpdeConfig(**base)


class TestConfig:
    def test_derived_quantities(self):
        cfg = small_cfg(sigma=2.0, gamma=4.0)
        assert cfg.csq == pytest.approx(0.5)
        assert cfg.dealias_band == 42
        assert cfg.noise_amplitude == pytest.approx(2.0 / 100.0)

    def test_infinite_particles_silence_the_noise(self):
        cfg = small_cfg(n_particles=math.inf)
        assert cfg.noise_amplitude == 0.0

    def test_c2_defaults_to_half_cap(self):
        cfg = small_cfg(k_norm=3.0)
        assert cfg.c2 == pytest.approx(1.5)

    @pytest.mark.parametrize("kw", [
        dict(gamma=0.0),
        dict(sigma=-1.0),
        dict(epsilon=0.0),
        dict(n_particles=0.5),
        dict(dt=0.0),
        dict(t_horizon=0.0),
        dict(k_norm=0.0),
    ])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            small_cfg(**kw)

    def test_floor_ordering_message(self):
        with pytest.raises(ValueError, match="stopping ordering"):
            small_cfg(delta=0.1, c1=0.05)

    def test_cap_ordering_message(self):
        with pytest.raises(ValueError, match="stopping ordering"):
            small_cfg(c2=6.0, k_norm=5.0)

    def test_unresolvable_kernel(self):
        with pytest.raises(ResolutionError):
            small_cfg(n_grid=64, epsilon=0.05)


class TestPropagator:
    @pytest.mark.parametrize("dt", [1e-3, 0.3])
    def test_matches_dense_exponential(self, dt):
        g = TorusGeometry(64)
        bank = build_propagator_bank(g, 1.0, 0.5, dt)
        worst = 0.0
        for k in range(g.n_modes):
            mat = linear_propagator(k, 1.0, 0.5, dt)
            worst = max(worst,
                        abs(bank.m00[k] - mat[0, 0]), abs(bank.m01[k] - mat[0, 1]),
                        abs(bank.m10[k] - mat[1, 0]), abs(bank.m11[k] - mat[1, 1]))
        assert worst <= 1e-10

    def test_defective_mode_falls_back(self):
        # gamma^2 = 4 k^2 csq at k = 1: eigenvalues collide exactly
        g = TorusGeometry(8)
        bank = build_propagator_bank(g, 2.0, 1.0, 0.1)
        mat = linear_propagator(1, 2.0, 1.0, 0.1)
        assert bank.m00[1] == pytest.approx(mat[0, 0], abs=1e-12)
        assert bank.m11[1] == pytest.approx(mat[1, 1], abs=1e-12)

    def test_semigroup_property(self):
        g = TorusGeometry(64)
        one = build_propagator_bank(g, 1.0, 0.5, 2e-3)
        two = build_propagator_bank(g, 1.0, 0.5, 4e-3)
        sq00 = one.m00 * one.m00 + one.m01 * one.m10
        sq01 = one.m00 * one.m01 + one.m01 * one.m11
        sq10 = one.m10 * one.m00 + one.m11 * one.m10
        sq11 = one.m10 * one.m01 + one.m11 * one.m11
        for sq, ref in ((sq00, two.m00), (sq01, two.m01),
                        (sq10, two.m10), (sq11, two.m11)):
            assert np.abs(sq - ref).max() <= 1e-12

    def test_mass_row_is_pinned(self):
        bank = build_propagator_bank(TorusGeometry(32), 1.3, 0.7, 5e-3)
        assert bank.m00[0] == 1.0
        assert bank.m01[0] == 0.0
        assert bank.m10[0] == 0.0
        assert bank.m11[0] == pytest.approx(np.exp(-1.3 * 5e-3), rel=1e-15)

    @pytest.mark.parametrize("k", [1, 3, 10])
    def test_against_ode_integrator(self, k):
        gamma, csq, t_end = 1.0, 0.5, 0.7
        a = np.array([[0.0, -1j * k], [-1j * k * csq, -gamma]], dtype=complex)
        x0 = np.array([1.0 + 0.5j, -0.3j])
        sol = scipy.integrate.solve_ivp(
            lambda t, y: a @ y, (0.0, t_end), x0, method="DOP853",
            rtol=1e-12, atol=1e-14)
        bank = build_propagator_bank(TorusGeometry(32), gamma, csq, t_end)
        got = np.array([bank.m00[k] * x0[0] + bank.m01[k] * x0[1],
                        bank.m10[k] * x0[0] + bank.m11[k] * x0[1]])
        assert got == pytest.approx(sol.y[:, -1], abs=1e-10)


class TestEnergy:
    def test_linear_flow_dissipates_every_mode(self):
        cfg = small_cfg(n_particles=math.inf)
        rng = np.random.default_rng(0)
        g = cfg.geometry
        state = SpectralState(g, rng.normal(size=g.n_modes) + 1j * rng.normal(size=g.n_modes),
                              rng.normal(size=g.n_modes) + 1j * rng.normal(size=g.n_modes))
        bank = build_propagator_bank(g, cfg.gamma, cfg.csq, cfg.dt)
        before = mode_energy(state, cfg.csq)
        for _ in range(5):
            state = step_mild(state, cfg, bank, PotentialSpec.zero(), None)
            after = mode_energy(state, cfg.csq)
            assert np.all(after <= before + 1e-12)
            before = after


class TestHDelta:
    def test_equals_sqrt_above_the_floor(self):
        r = np.array([0.02, 0.1, 1.0, 7.0])
        assert h_delta(r, 0.02) == pytest.approx(np.sqrt(r), abs=1e-15)

    def test_value_at_zero(self):
        assert h_delta(np.array([0.0]), 0.04)[0] == pytest.approx(
            math.sqrt(0.04) * 35.0 / 48.0)

    def test_continuously_differentiable_at_the_floor(self):
        delta, e = 0.02, 1e-6
        h = lambda r: h_delta(np.array([r]), delta)[0]
        right = (h(delta + e) - h(delta)) / e
        left = (h(delta) - h(delta - e)) / e
        assert right == pytest.approx(0.5 / math.sqrt(delta), rel=1e-4)
        assert left == pytest.approx(right, abs=1e-3)

    def test_positive_and_monotone(self):
        delta = 0.03
        r = np.linspace(-0.05, 0.5, 401)
        vals = h_delta(r, delta)
        assert vals.min() >= math.sqrt(delta) * 35.0 / 48.0 - 1e-12
        pos = h_delta(np.linspace(0.0, 0.5, 301), delta)
        assert np.all(np.diff(pos) >= -1e-15)

    def test_rejects_bad_floor(self):
        with pytest.raises(ValueError):
            h_delta(np.array([0.1]), 0.0)


class TestQWiener:
    def test_empirical_covariance(self):
        g = TorusGeometry(32)
        lam = np.array([1.0, 0.5, 0.25, 0.125])
        dt, band = 1e-2, 3
        rng = np.random.default_rng(0)
        draws = np.array([q_wiener_increment(rng, lam, g, dt, band)
                          for _ in range(30000)])
        # absolute band of about 4 standard errors of the product estimator
        for node, tau in ((0, 0.0), (8, np.pi / 2.0), (16, np.pi)):
            got = np.mean(draws[:, 0] * draws[:, node])
            k = np.arange(1, 4)
            expected = dt * (lam[0] + 2.0 * np.sum(lam[1:] * np.cos(k * tau))) / TWO_PI
            assert got == pytest.approx(expected, abs=1.5e-4)

    def test_mean_is_centred(self):
        g = TorusGeometry(32)
        rng = np.random.default_rng(1)
        draws = np.array([q_wiener_increment(rng, np.array([1.0, 0.5]), g, 1e-2, 1)
                          for _ in range(20000)])
        assert np.abs(draws.mean(axis=0)).max() < 2e-3

    def test_band_guard(self):
        g = TorusGeometry(32)
        with pytest.raises(ValueError):
            q_wiener_increment(np.random.default_rng(0), np.ones(40), g, 1e-2, 17)

    def test_negative_eigenvalue_guard(self):
        g = TorusGeometry(32)
        with pytest.raises(ValueError):
            q_wiener_increment(np.random.default_rng(0),
                               np.array([1.0, -0.1]), g, 1e-2, 1)


class TestMassConservation:
    def test_dc_mode_is_carried_bit_for_bit(self):
        cfg = small_cfg()
        state = initial_state(cfg)
        dc0 = state.rho_hat[0]
        bank = build_propagator_bank(cfg.geometry, cfg.gamma, cfg.csq, cfg.dt)
        rng = np.random.default_rng(0)
        lam = make_kernel(math.sqrt(2.0) * cfg.epsilon, cfg.geometry).fourier_coeffs
        for _ in range(200):
            dw = q_wiener_increment(rng, lam, cfg.geometry, cfg.dt, cfg.dealias_band)
            state = step_mild(state, cfg, bank, W_COS, dw)
            assert state.rho_hat[0] == dc0
        assert total_mass(state) == pytest.approx(1.0, abs=1e-14)


class TestLinearClosedForm:
    def test_repeated_steps_match_one_long_step(self):
        # no drift, no noise: n steps of dt must equal exp(T A) applied once
        cfg = small_cfg(n_particles=math.inf, dt=1e-3, t_horizon=0.2)
        traj = solve_spde(cfg, PotentialSpec.zero(), snapshot_times=[0.0, 0.2])
        rho0, j0 = default_datum(cfg.geometry)
        x0 = SpectralState.from_values(cfg.geometry, rho0, j0, band=cfg.dealias_band)
        bank = build_propagator_bank(cfg.geometry, cfg.gamma, cfg.csq, 0.2)
        rho_exp = bank.m00 * x0.rho_hat + bank.m01 * x0.j_hat
        j_exp = bank.m10 * x0.rho_hat + bank.m11 * x0.j_hat
        final = traj.final
        assert np.abs(final.rho_hat - rho_exp).max() <= 1e-12
        assert np.abs(final.j_hat - j_exp).max() <= 1e-12


class TestInitialState:
    def test_default_datum_is_admissible(self):
        state = initial_state(small_cfg())
        assert total_mass(state) == pytest.approx(1.0, abs=1e-14)

    def test_floor_must_sit_below_the_datum(self):
        with pytest.raises(ValueError, match="stopping ordering"):
            initial_state(small_cfg(delta=0.2, c1=0.3))

    def test_norm_must_sit_below_c2(self):
        with pytest.raises(ValueError, match="stopping ordering"):
            initial_state(small_cfg(k_norm=0.2))

    def test_partial_datum_rejected(self):
        cfg = small_cfg()
        with pytest.raises(ValueError):
            initial_state(cfg, rho0=np.full(64, 1.0 / TWO_PI))


class TestStopping:
    def test_norm_cap_freezes_the_state(self):
        cfg = small_cfg(n_particles=25.0, t_horizon=0.2, k_norm=0.45, c2=0.43)
        traj = solve_spde(cfg, W_COS, seed=0, snapshot_times=[0.0, 0.1, 0.2])
        assert traj.status.stopped
        assert traj.status.reason == "norm_cap"
        stop_idx = int(round(traj.status.time / cfg.dt))
        assert traj.norm_path[stop_idx] >= cfg.k_norm
        frozen = traj.norm_path[stop_idx]
        assert np.all(traj.norm_path[stop_idx:] == frozen)
        if traj.status.time <= 0.1:
            assert np.array_equal(traj.rho[1], traj.rho[2])

    def test_density_floor_reason(self):
        cfg = small_cfg(n_particles=9.0, t_horizon=0.2, delta=0.1, c1=0.105)
        traj = solve_spde(cfg, W_COS, seed=0)
        assert traj.status.stopped
        assert traj.status.reason == "density_floor"
        assert traj.min_rho_path.min() <= cfg.delta

    def test_quiet_run_does_not_stop(self):
        cfg = small_cfg(n_particles=math.inf, t_horizon=0.2)
        traj, report = solve_noise_free(cfg, W_COS)
        assert not traj.status.stopped
        assert report.satisfied
        assert report.density_margin > 0
        assert report.norm_margin > 0


class TestSharedNoiseRefinement:
    def test_strong_error_shrinks_with_dt(self):
        n_grid, eps = 64, 0.3
        g = TorusGeometry(n_grid)
        lam = make_kernel(math.sqrt(2.0) * eps, g).fourier_coeffs
        dt_f = 5e-4
        n_f = 320
        rng = np.random.default_rng(2)
        fine = np.array([q_wiener_increment(rng, lam, g, dt_f, n_grid // 3)
                         for _ in range(n_f)])

        def run(dt, incs):
            cfg = SpdeConfig(n_grid=n_grid, epsilon=eps, n_particles=100.0,
                             dt=dt, t_horizon=0.16)
            return solve_spde(cfg, W_COS, noise_increments=incs).final

        ref = run(dt_f, fine)
        coarse = run(4e-3, fine.reshape(40, 8, n_grid).sum(axis=1))
        mid = run(2e-3, fine.reshape(80, 4, n_grid).sum(axis=1))

        def dist(a, b):
            return np.linalg.norm(a.rho_hat - b.rho_hat) + np.linalg.norm(a.j_hat - b.j_hat)

        e_coarse = dist(coarse, ref)
        e_mid = dist(mid, ref)
        assert e_mid < e_coarse
        assert e_coarse / e_mid > 1.3

    def test_increment_shape_guard(self):
        cfg = small_cfg()
        with pytest.raises(ValueError):
            solve_spde(cfg, W_COS, noise_increments=np.zeros((10, 64)))


class TestConvolutionBound:
    def test_noisy_trajectory_respects_the_bound(self):
        cfg = small_cfg(t_horizon=0.2)
        traj = solve_spde(cfg, W_COS, seed=0,
                          snapshot_times=[0.0, 0.05, 0.1, 0.15, 0.2])
        result = convolution_bound_check(traj, W_COS)
        assert result["checked_snapshots"] >= 1
        assert result["ok"]
        assert result["worst_margin"] >= 0.0


class TestValidation:
    def test_snapshot_times_must_be_step_multiples(self):
        with pytest.raises(ValueError):
            solve_spde(small_cfg(), W_COS, snapshot_times=[0.00033])

    def test_horizon_must_be_step_multiple(self):
        with pytest.raises(ValueError):
            solve_spde(small_cfg(t_horizon=0.0503), W_COS)

    def test_state_shape_guard(self):
        g = TorusGeometry(64)
        with pytest.raises(ValueError):
            SpectralState(g, np.zeros(10, dtype=complex),
                          np.zeros(33, dtype=complex))
