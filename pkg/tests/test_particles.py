"""Coupled Langevin integrator: forces, schemes, coupling, diagnostics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dklab.particles import (ConfigurationError, CoupledTrajectory,
                             ModelParams, TimeStepError, _advance,
                             chaos_distance, chaos_distance_sup,
                             ladder_from_thetas, meanfield_force,
                             pairwise_force, simulate_coupled,
                             simulate_interacting, warm_start)
from dklab.potential import PotentialSpec
from dklab.torus import TWO_PI, TorusGeometry, wrap
from dklab.vfp import uniform_maxwellian

W_COS = PotentialSpec.cosine_potential()


def small_params(**kw):
    base = dict(n_particles=8, gamma=1.0, sigma=1.0, t_horizon=0.1,
                dt=5e-3, burn_in=0.0)
    base.update(kw)
    return ModelParams(**base)


class TestModelParams:
    def test_valid_construction(self):
        p = small_params()
        assert p.temperature == pytest.approx(0.5)

    @pytest.mark.parametrize("kw", [
        dict(n_particles=0),
        dict(gamma=-1.0),
        dict(sigma=-0.1),
        dict(dt=0.0),
        dict(dt=2e-2),
        dict(dt=6e-3, gamma=2.0),
        dict(burn_in=-0.5),
        dict(scheme="leapfrog"),
        dict(epsilon=0.0),
    ])
    def test_rejects(self, kw):
        with pytest.raises(ConfigurationError):
            small_params(**kw)

    def test_temperature_undefined_without_damping(self):
        p = small_params(gamma=0.0)
        with pytest.raises(ConfigurationError):
            p.temperature


class TestLadder:
    def test_example_pair(self):
        pairs = ladder_from_thetas([0.2], 3.0)
        assert pairs[0][0] == 125
        assert pairs[0][1] == pytest.approx(0.2, rel=1e-12)

    @given(eps=st.floats(0.05, 0.5), theta=st.floats(1.0, 8.0))
    @settings(max_examples=40, deadline=None)
    def test_scaling_holds_exactly(self, eps, theta):
        for n, e in ladder_from_thetas([eps], theta):
            assert n >= 2
            assert n * e ** theta == pytest.approx(1.0, rel=1e-9)


class TestForces:
    def test_two_particle_cosine(self):
        q = np.array([0.0, np.pi / 2.0])
        got = pairwise_force(q, W_COS)
        assert got == pytest.approx([-0.5, 0.5], abs=1e-14)

    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        w = PotentialSpec([0.0, 0.5, -0.2], [0.0, 0.1, 0.3])
        q = rng.uniform(0, TWO_PI, 17)
        brute = np.array([-w.w1(qi - q).mean() for qi in q])
        assert pairwise_force(q, w) == pytest.approx(brute, abs=1e-12)

    def test_meanfield_force_single_mode(self):
        # marginal (1 + cos q) / (2 pi) under W = cos gives force sin(q)/2
        f = uniform_maxwellian(TorusGeometry(64), 4.5, 96, 0.5)
        f.values = f.values * (1.0 + np.cos(f.geometry.nodes()))[:, None]
        q = np.linspace(0.0, TWO_PI, 13, endpoint=False)
        got = meanfield_force(q, f, W_COS)
        assert got == pytest.approx(0.5 * np.sin(q), abs=1e-12)

    def test_meanfield_force_rejects_unnormalised(self):
        f = uniform_maxwellian(TorusGeometry(32), 4.5, 64, 0.5)
        f.values = f.values * 2.0
        with pytest.raises(ValueError):
            meanfield_force(np.zeros(3), f, W_COS)


class TestAdvance:
    def test_euler_hand_step(self):
        params = small_params(n_particles=2, gamma=0.5, sigma=0.7, dt=1e-2)
        q = np.array([0.1, 6.27])
        p = np.array([1.0, 2.0])
        lift = q.copy()
        dw = np.array([0.05, -0.02])
        force = np.array([0.3, -0.4])
        q2, p2, lift2 = _advance(q, p, lift, lambda x: force, params, dw)
        assert lift2 == pytest.approx(q + p * 1e-2, abs=1e-15)
        assert q2 == pytest.approx(wrap(q + p * 1e-2), abs=1e-15)
        assert q2[1] < 0.02  # the second particle wrapped around
        assert p2 == pytest.approx(p + (-0.5 * p + force) * 1e-2 + 0.7 * dw,
                                   abs=1e-15)

    def test_strang_hand_step(self):
        params = small_params(n_particles=1, gamma=0.5, sigma=0.7, dt=1e-2,
                              scheme="strang")
        q = np.array([1.0])
        p = np.array([0.8])
        dw = np.array([0.03])
        force_fn = lambda x: np.sin(x)
        q2, p2, lift2 = _advance(q, p, q.copy(), force_fn, params, dw)
        q_half = q + p * 5e-3
        p_exp = p + (-0.5 * p + np.sin(q_half)) * 1e-2 + 0.7 * dw
        assert p2 == pytest.approx(p_exp, abs=1e-15)
        assert q2 == pytest.approx(q_half + p_exp * 5e-3, abs=1e-15)
        assert lift2 == pytest.approx(q2, abs=1e-15)

    def test_momentum_guard_trips(self):
        params = small_params(n_particles=1, momentum_guard=1.0)
        with pytest.raises(TimeStepError):
            _advance(np.array([0.0]), np.array([0.99]), np.array([0.0]),
                     lambda x: np.full_like(x, 100.0), params,
                     np.array([0.0]))


class TestSchemeOrder:
    def _final_q(self, scheme, gamma, dt):
        params = ModelParams(n_particles=2, gamma=gamma, sigma=0.0,
                             t_horizon=0.2, dt=dt, burn_in=0.0, scheme=scheme)
        q0 = np.array([[0.5, 2.0]])
        p0 = np.array([[0.3, -0.2]])
        q, _ = simulate_interacting(params, W_COS, n_replicas=1, seed=0,
                                    initial=(q0, p0))
        return q[0]

    def test_euler_is_first_order(self):
        sols = [self._final_q("euler", 1.0, dt) for dt in (4e-3, 2e-3, 1e-3)]
        e1 = np.abs(sols[0] - sols[1]).max()
        e2 = np.abs(sols[1] - sols[2]).max()
        assert 1.6 < e1 / e2 < 2.4

    def test_strang_is_second_order_without_damping(self):
        sols = [self._final_q("strang", 0.0, dt) for dt in (4e-3, 2e-3, 1e-3)]
        e1 = np.abs(sols[0] - sols[1]).max()
        e2 = np.abs(sols[1] - sols[2]).max()
        assert 3.2 < e1 / e2 < 4.8


class TestCoupledRuns:
    def test_zero_potential_branches_identical(self):
        params = small_params()
        traj = simulate_coupled(params, PotentialSpec.zero(), n_replicas=4,
                                snapshot_times=[0.0, 0.05, 0.1], seed=3)
        assert np.array_equal(traj.q_int, traj.q_mf)
        assert np.array_equal(traj.p_int, traj.p_mf)
        assert np.array_equal(traj.lift_int, traj.lift_mf)
        assert chaos_distance_sup(traj) == 0.0

    def test_snapshot_zero_is_the_common_state(self):
        params = small_params(burn_in=0.1)
        traj = simulate_coupled(params, W_COS, n_replicas=4,
                                snapshot_times=[0.0, 0.1], seed=5)
        assert np.array_equal(traj.q_int[0], traj.q_mf[0])
        assert np.array_equal(traj.p_int[0], traj.p_mf[0])
        assert not np.array_equal(traj.p_int[1], traj.p_mf[1])

    def test_seed_reproducibility(self):
        params = small_params()
        a = simulate_coupled(params, W_COS, n_replicas=4,
                             snapshot_times=[0.1], seed=11)
        b = simulate_coupled(params, W_COS, n_replicas=4,
                             snapshot_times=[0.1], seed=11)
        assert np.array_equal(a.q_int, b.q_int)
        assert np.array_equal(a.p_mf, b.p_mf)

    def test_ragged_last_block(self):
        # 6 replicas in blocks of 4: the second block is partial
        params = small_params()
        traj = simulate_coupled(params, W_COS, n_replicas=6,
                                snapshot_times=[0.1], seed=7, replica_block=4)
        assert traj.q_int.shape == (1, 6, 8)
        # every replica got its own noise: no two final states coincide
        finals = traj.p_int[0]
        for i in range(6):
            for j in range(i + 1, 6):
                assert not np.array_equal(finals[i], finals[j])

    def test_noise_injection_overrides_generator(self):
        params = small_params(n_particles=4, t_horizon=0.05)
        rng = np.random.default_rng(9)
        q0 = rng.uniform(0, TWO_PI, (3, 4))
        p0 = rng.normal(size=(3, 4))
        noise = rng.standard_normal((10, 3, 4))
        runs = [simulate_coupled(params, W_COS, n_replicas=3,
                                 snapshot_times=[0.05], seed=s,
                                 initial=(q0, p0), noise=noise)
                for s in (1, 2)]
        assert np.array_equal(runs[0].q_int, runs[1].q_int)
        assert np.array_equal(runs[0].p_mf, runs[1].p_mf)

    def test_noise_shape_guard(self):
        params = small_params(n_particles=4, t_horizon=0.05)
        with pytest.raises(ConfigurationError):
            simulate_coupled(params, W_COS, n_replicas=3,
                             snapshot_times=[0.05], seed=1,
                             initial=(np.zeros((3, 4)), np.zeros((3, 4))),
                             noise=np.zeros((9, 3, 4)))

    def test_noise_requires_no_burn_in(self):
        params = small_params(n_particles=4, t_horizon=0.05, burn_in=0.05)
        with pytest.raises(ConfigurationError):
            simulate_coupled(params, W_COS, n_replicas=3,
                             snapshot_times=[0.05], seed=1,
                             noise=np.zeros((10, 3, 4)))

    def test_snapshot_time_must_be_on_grid(self):
        params = small_params()
        with pytest.raises(ConfigurationError):
            simulate_coupled(params, W_COS, n_replicas=2,
                             snapshot_times=[0.0033], seed=0)

    def test_snapshot_beyond_horizon(self):
        params = small_params()
        with pytest.raises(ConfigurationError):
            simulate_coupled(params, W_COS, n_replicas=2,
                             snapshot_times=[0.2], seed=0)

    def test_ou_momentum_variance(self):
        # zero potential: p is an OU process, stationary variance sigma^2/(2 gamma)
        params = small_params(n_particles=256, t_horizon=1.0)
        _, p = simulate_interacting(params, PotentialSpec.zero(),
                                    n_replicas=16, seed=0)
        assert p.var() == pytest.approx(0.5, rel=0.05)


class TestWarmStart:
    def test_requires_burn_in(self):
        with pytest.raises(ConfigurationError):
            warm_start(small_params(), W_COS, seed=0)

    def test_returns_reset_clocks(self):
        params = small_params(n_particles=32, burn_in=0.1)
        ens, dens = warm_start(params, W_COS, seed=0)
        assert ens.q.shape == (32,)
        assert ens.t == 0.0
        assert dens.t == 0.0
        assert dens.mass() == pytest.approx(1.0, abs=1e-9)


class TestChaosDistance:
    def _toy(self, dq, dp, n_replicas=3):
        rng = np.random.default_rng(0)
        shape = (2, n_replicas, 5)
        lift_mf = rng.normal(size=shape)
        p_mf = rng.normal(size=shape)
        return CoupledTrajectory(
            times=np.array([0.0, 1.0]),
            q_int=wrap(lift_mf + dq), p_int=p_mf + dp, lift_int=lift_mf + dq,
            q_mf=wrap(lift_mf), p_mf=p_mf, lift_mf=lift_mf)

    def test_hand_values(self):
        traj = self._toy(0.3, 0.4)
        assert chaos_distance(traj, alpha=2) == pytest.approx([0.5, 0.5])
        expected4 = (0.3 ** 4 + 0.4 ** 4) ** 0.25
        assert chaos_distance(traj, alpha=4) == pytest.approx(
            [expected4, expected4])
        assert chaos_distance_sup(traj) == pytest.approx(0.5)

    @pytest.mark.parametrize("alpha", [1, 3, 0])
    def test_alpha_must_be_even(self, alpha):
        with pytest.raises(ValueError):
            chaos_distance(self._toy(0.1, 0.1), alpha=alpha)

    def test_needs_replicas(self):
        with pytest.raises(ValueError):
            chaos_distance(self._toy(0.1, 0.1, n_replicas=1))
