"""Coupled interacting / mean-field Langevin ensembles on the torus.

Two second-order systems share Brownian increments and initial data:

    interacting:  dq_i = p_i dt
                  dp_i = [-gamma p_i - (1/N) sum_j W'(q_i - q_j)] dt + sigma dB_i
    mean-field:   dq_i = p_i dt
                  dp_i = [-gamma p_i - (W' * rho[f_t])(q_i)] dt + sigma dB_i

where f_t is the phase-space law evolved by the VfpSolver.  The pairing makes
the pathwise distance between the two systems a direct estimate of the
mean-field approximation error, which decays like N^{-1/2}.

Positions are integrated twice: wrapped onto [0, 2*pi) for force and field
evaluation, and as an unwrapped real-line lift.  Coupled distances are always
measured through the lift; the torus distance would fold excursions longer
than half a period back onto [0, pi] and corrupt the measured rate.

Runs are organised in replica blocks: replicas are simulated in fixed-size
vectorised batches, each batch drawing from its own child of the master seed,
so results are independent of how many batches execute at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .potential import PotentialSpec, mean_w1_at
from .torus import TorusGeometry, wrap
from .vfp import (PhaseSpaceDensity, VfpSolver, meanfield_force_from_coeffs,
                  uniform_maxwellian)

DEFAULT_MOMENTUM_GUARD = 1e3


class TimeStepError(RuntimeError):
    """A momentum left the guard interval; the step size is too coarse."""


class ConfigurationError(ValueError):
    """Inconsistent simulation parameters."""


@dataclass(frozen=True)
class ModelParams:
    """Physical and discretisation parameters of one particle run."""

    n_particles: int
    gamma: float = 1.0
    sigma: float = 1.0
    t_horizon: float = 1.0
    dt: float = 5e-3
    burn_in: float = 0.5
    epsilon: float | None = None
    theta: float | None = None
    momentum_guard: float = DEFAULT_MOMENTUM_GUARD
    scheme: str = "euler"

    def __post_init__(self):
        if self.n_particles < 1:
            raise ConfigurationError("n_particles must be at least 1")
        if self.gamma < 0 or self.sigma < 0:
            raise ConfigurationError("gamma and sigma must be nonnegative")
        if self.dt <= 0 or self.dt > 1e-2 / max(self.gamma, 1.0):
            raise ConfigurationError(
                f"dt={self.dt} violates dt <= 1e-2/max(gamma,1) with gamma={self.gamma}"
            )
        if self.t_horizon < 0 or self.burn_in < 0:
            raise ConfigurationError("t_horizon and burn_in must be nonnegative")
        if self.scheme not in ("euler", "strang"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive when given")

    @property
    def temperature(self) -> float:
        """Stationary momentum variance sigma^2 / (2 gamma)."""
        if self.gamma == 0:
            raise ConfigurationError("temperature undefined for gamma = 0")
        return self.sigma ** 2 / (2.0 * self.gamma)


def ladder_from_thetas(epsilons, theta: float) -> list[tuple[int, float]]:
    """(N, eps) pairs on the scaling N * eps^theta = 1.

    N is rounded to an integer and eps recomputed as N^(-1/theta), so the
    scaling holds to machine precision for the pair actually used.
    """
    out = []
    for eps in epsilons:
        n = max(2, int(round(float(eps) ** -theta)))
        out.append((n, float(n) ** (-1.0 / theta)))
    return out


@dataclass
class ParticleEnsemble:
    """One ensemble: wrapped positions, momenta, unwrapped lift, clock."""

    q: np.ndarray
    p: np.ndarray
    t: float = 0.0
    q_lift: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.q.shape != self.p.shape:
            raise ValueError("q and p must share a shape")
        if self.q_lift is None:
            self.q_lift = self.q.copy()
        else:
            self.q_lift = np.asarray(self.q_lift, dtype=float)

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.q.copy(), self.p.copy(), self.t, self.q_lift.copy())


@dataclass
class CoupledTrajectory:
    """Snapshots of both branches, replica-batched: arrays (S, R, N)."""

    times: np.ndarray
    q_int: np.ndarray
    p_int: np.ndarray
    lift_int: np.ndarray
    q_mf: np.ndarray
    p_mf: np.ndarray
    lift_mf: np.ndarray
    seed: int | None = None

    @property
    def n_replicas(self) -> int:
        return self.q_int.shape[1]

    @property
    def n_particles(self) -> int:
        return self.q_int.shape[2]


def pairwise_force(q: np.ndarray, w: PotentialSpec) -> np.ndarray:
    """Interacting drift -(1/N) sum_j W'(q_i - q_j), self term included."""
    return -mean_w1_at(w, q, q)


def meanfield_force(q: np.ndarray, density: PhaseSpaceDensity, w: PotentialSpec) -> np.ndarray:
    """Mean-field drift -(W' * rho[f])(q) from a phase-space density."""
    mass = density.mass()
    if abs(mass - 1.0) > 1e-6:
        raise ValueError(f"density mass {mass} is not normalised")
    kmax = w.k_max
    if kmax == 0 or w.is_zero:
        return np.zeros(np.shape(q))
    marg = density.marginal()
    c = np.fft.rfft(marg)[: kmax + 1] / density.geometry.n_grid
    coeffs = (c * w.conv_multiplier(kmax + 1, derivative=1))[1:]
    return meanfield_force_from_coeffs(coeffs, np.asarray(q, dtype=float))


def _advance(q, p, lift, force_fn, params: ModelParams, dw):
    """One Euler-Maruyama (or Strang) step for a batch of ensembles."""
    dt, gamma, sigma = params.dt, params.gamma, params.sigma
    if params.scheme == "euler":
        force = force_fn(q)
        dq = p * dt
        p_new = p + (-gamma * p + force) * dt + sigma * dw
        lift_new = lift + dq
        q_new = wrap(q + dq)
    else:  # strang: half drift in q, full kick, half drift with the new p
        half = p * (dt / 2.0)
        q_half = wrap(q + half)
        force = force_fn(q_half)
        p_new = p + (-gamma * p + force) * dt + sigma * dw
        second = p_new * (dt / 2.0)
        lift_new = lift + half + second
        q_new = wrap(q_half + second)
    worst = float(np.abs(p_new).max()) if p_new.size else 0.0
    if worst > params.momentum_guard:
        raise TimeStepError(
            f"momentum {worst:.3e} exceeded guard {params.momentum_guard:.1e}"
        )
    return q_new, p_new, lift_new


@dataclass
class VfpForceTable:
    """Per-step mean-field force coefficients, shared by all replicas.

    coeffs[s] holds the complex coefficients of (W' * rho[f]) at the start of
    step s, so every replica block can evaluate the deterministic force
    without re-running the kinetic solver.
    """

    coeffs: np.ndarray  # (n_steps, k_max) complex
    dt: float

    def force_at(self, step: int, q_pts: np.ndarray) -> np.ndarray:
        return meanfield_force_from_coeffs(self.coeffs[step], q_pts)


def build_force_table(f0: PhaseSpaceDensity, w: PotentialSpec, gamma: float,
                      sigma: float, n_steps: int, dt: float):
    """Run the kinetic solver for n_steps, recording start-of-step coefficients.

    Returns (table, final_density).  For a zero potential no solve is needed
    and the table is empty-width.
    """
    if w.is_zero:
        return VfpForceTable(np.zeros((n_steps, 0), dtype=complex), dt), f0.copy()
    solver = VfpSolver(f0.copy(), w, gamma, sigma)
    rows = np.zeros((n_steps, w.k_max), dtype=complex)
    for s in range(n_steps):
        rows[s] = solver.conv_coeffs()
        solver.step(dt)
    return VfpForceTable(rows, dt), solver.density


def _steps_from_time(t: float, dt: float, what: str) -> int:
    n = int(round(t / dt))
    if abs(n * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ConfigurationError(f"{what}={t} is not an integer multiple of dt={dt}")
    return n


def default_datum(params: ModelParams, n_q: int = 64, n_p: int = 96) -> PhaseSpaceDensity:
    """Uniform-in-q, Maxwellian-in-p datum at the stationary temperature."""
    m2 = params.temperature
    p_max = 6.0 * np.sqrt(m2)
    return uniform_maxwellian(TorusGeometry(n_q), p_max, n_p, m2)


def _sample_from_maxwellian(rng: np.random.Generator, shape, m2: float):
    q = rng.uniform(0.0, 2.0 * np.pi, size=shape)
    p = rng.normal(0.0, np.sqrt(m2), size=shape)
    return q, p


def simulate_coupled(params: ModelParams, w: PotentialSpec, *, n_replicas: int,
                     snapshot_times, seed: int | None = None,
                     replica_block: int = 16, f0: PhaseSpaceDensity | None = None,
                     initial: tuple[np.ndarray, np.ndarray] | None = None,
                     noise: np.ndarray | None = None) -> CoupledTrajectory:
    """Integrate the coupled pair over [0, t_horizon] after a burn-in.

    The burn-in evolves the mean-field branch (and the kinetic law) from the
    datum for params.burn_in time units; at its end the clock is reset, both
    branches are set to the common warm state, and from then on they share
    every Brownian increment.  Snapshots are taken on the post-restart clock.

    `initial` bypasses sampling with explicit (q0, p0) arrays of shape
    (n_replicas, n_particles); `noise` injects standard-normal increments of
    shape (main_steps, n_replicas, n_particles) in place of generator draws
    (burn_in must be zero in that case).
    """
    dt = params.dt
    burn_steps = _steps_from_time(params.burn_in, dt, "burn_in")
    main_steps = _steps_from_time(params.t_horizon, dt, "t_horizon")
    snap_times = np.asarray(sorted(snapshot_times), dtype=float)
    snap_steps = [_steps_from_time(t, dt, "snapshot time") for t in snap_times]
    if snap_steps and snap_steps[-1] > main_steps:
        raise ConfigurationError("snapshot time beyond t_horizon")
    if noise is not None:
        if burn_steps:
            raise ConfigurationError("noise injection requires burn_in = 0")
        noise = np.asarray(noise, dtype=float)
        if noise.shape != (main_steps, n_replicas, params.n_particles):
            raise ConfigurationError("injected noise has the wrong shape")

    if f0 is None and not w.is_zero:
        f0 = default_datum(params)

    total_steps = burn_steps + main_steps
    if w.is_zero:
        table = VfpForceTable(np.zeros((total_steps, 0), dtype=complex), dt)
    else:
        table, _ = build_force_table(f0, w, params.gamma, params.sigma, total_steps, dt)

    master = np.random.SeedSequence(seed)
    n_blocks = (n_replicas + replica_block - 1) // replica_block
    children = master.spawn(n_blocks)

    shape = (len(snap_steps), n_replicas, params.n_particles)
    out = {name: np.zeros(shape) for name in
           ("q_int", "p_int", "lift_int", "q_mf", "p_mf", "lift_mf")}

    for b in range(n_blocks):
        lo = b * replica_block
        hi = min(lo + replica_block, n_replicas)
        rng = np.random.default_rng(children[b])
        rows = hi - lo
        if initial is not None:
            q = np.array(initial[0][lo:hi], dtype=float)
            p = np.array(initial[1][lo:hi], dtype=float)
        else:
            q, p = _sample_from_maxwellian(rng, (rows, params.n_particles),
                                           params.temperature)
        lift = q.copy()

        for s in range(burn_steps):
            dw = rng.standard_normal((rows, params.n_particles)) * np.sqrt(dt)
            q, p, lift = _advance(q, p, lift, lambda x: table.force_at(s, x),
                                  params, dw)

        qi, pi, li = q.copy(), p.copy(), lift.copy()
        qm, pm, lm = q, p, lift
        for snap_idx, target in enumerate(snap_steps):
            if target == 0:
                _record(out, snap_idx, lo, hi, qi, pi, li, qm, pm, lm)
        for s in range(main_steps):
            if noise is not None:
                dw = noise[s, lo:hi] * np.sqrt(dt)
            else:
                dw = rng.standard_normal((rows, params.n_particles)) * np.sqrt(dt)
            qi, pi, li = _advance(qi, pi, li, lambda x: pairwise_force(x, w),
                                  params, dw)
            step_global = burn_steps + s
            qm, pm, lm = _advance(qm, pm, lm,
                                  lambda x: table.force_at(step_global, x),
                                  params, dw)
            for snap_idx, target in enumerate(snap_steps):
                if target == s + 1:
                    _record(out, snap_idx, lo, hi, qi, pi, li, qm, pm, lm)

    return CoupledTrajectory(times=snap_times, seed=seed, **out)


def _record(out, snap_idx, lo, hi, qi, pi, li, qm, pm, lm):
    out["q_int"][snap_idx, lo:hi] = qi
    out["p_int"][snap_idx, lo:hi] = pi
    out["lift_int"][snap_idx, lo:hi] = li
    out["q_mf"][snap_idx, lo:hi] = qm
    out["p_mf"][snap_idx, lo:hi] = pm
    out["lift_mf"][snap_idx, lo:hi] = lm


def simulate_interacting(params: ModelParams, w: PotentialSpec, *, n_replicas: int,
                         seed: int | None = None, replica_block: int = 16,
                         initial: tuple[np.ndarray, np.ndarray] | None = None,
                         record_path: bool = False):
    """Integrate only the interacting system, optionally keeping every step.

    Burn-in (when params.burn_in > 0) evolves the mean-field dynamics to
    produce an equilibrated start, exactly as simulate_coupled does, and is
    never recorded.  With record_path=True the return value is a dict with
    q/p paths of shape (main_steps + 1, R, N) and the standard-normal
    increments (main_steps, R, N) that generated them; otherwise only the
    final (q, p) arrays are returned.
    """
    dt = params.dt
    burn_steps = _steps_from_time(params.burn_in, dt, "burn_in")
    main_steps = _steps_from_time(params.t_horizon, dt, "t_horizon")
    if burn_steps and not w.is_zero:
        f0 = default_datum(params)
        table, _ = build_force_table(f0, w, params.gamma, params.sigma, burn_steps, dt)
    else:
        table = VfpForceTable(np.zeros((burn_steps, 0), dtype=complex), dt)

    master = np.random.SeedSequence(seed)
    n_blocks = (n_replicas + replica_block - 1) // replica_block
    children = master.spawn(n_blocks)

    q_all = np.zeros((n_replicas, params.n_particles))
    p_all = np.zeros_like(q_all)
    paths = None
    if record_path:
        paths = {
            "q": np.zeros((main_steps + 1, n_replicas, params.n_particles)),
            "p": np.zeros((main_steps + 1, n_replicas, params.n_particles)),
            "xi": np.zeros((main_steps, n_replicas, params.n_particles)),
        }

    for b in range(n_blocks):
        lo = b * replica_block
        hi = min(lo + replica_block, n_replicas)
        rng = np.random.default_rng(children[b])
        rows = hi - lo
        if initial is not None:
            q = np.array(initial[0][lo:hi], dtype=float)
            p = np.array(initial[1][lo:hi], dtype=float)
        else:
            q, p = _sample_from_maxwellian(rng, (rows, params.n_particles),
                                           params.temperature)
        lift = q.copy()
        for s in range(burn_steps):
            dw = rng.standard_normal((rows, params.n_particles)) * np.sqrt(dt)
            q, p, lift = _advance(q, p, lift, lambda x: table.force_at(s, x),
                                  params, dw)
        if record_path:
            paths["q"][0, lo:hi] = q
            paths["p"][0, lo:hi] = p
        for s in range(main_steps):
            xi = rng.standard_normal((rows, params.n_particles))
            dw = xi * np.sqrt(dt)
            q, p, lift = _advance(q, p, lift, lambda x: pairwise_force(x, w),
                                  params, dw)
            if record_path:
                paths["q"][s + 1, lo:hi] = q
                paths["p"][s + 1, lo:hi] = p
                paths["xi"][s, lo:hi] = xi
        q_all[lo:hi] = q
        p_all[lo:hi] = p

    if record_path:
        return paths
    return q_all, p_all


def warm_start(params: ModelParams, w: PotentialSpec, seed: int | None = None,
               f0: PhaseSpaceDensity | None = None):
    """Equilibrate one ensemble by evolving the mean-field dynamics to burn_in.

    Returns (ParticleEnsemble, PhaseSpaceDensity) with both clocks reset to
    zero, ready to serve as the common initial condition of a coupled run.
    """
    if params.burn_in <= 0:
        raise ConfigurationError("warm_start needs burn_in > 0")
    dt = params.dt
    burn_steps = _steps_from_time(params.burn_in, dt, "burn_in")
    if f0 is None:
        f0 = default_datum(params)
    table, final_density = build_force_table(f0, w, params.gamma, params.sigma,
                                             burn_steps, dt)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    q, p = _sample_from_maxwellian(rng, (1, params.n_particles), params.temperature)
    lift = q.copy()
    for s in range(burn_steps):
        dw = rng.standard_normal(q.shape) * np.sqrt(dt)
        q, p, lift = _advance(q, p, lift, lambda x: table.force_at(s, x), params, dw)
    ensemble = ParticleEnsemble(q[0], p[0], t=0.0)
    final_density.t = 0.0
    return ensemble, final_density


def chaos_distance(traj: CoupledTrajectory, alpha: int = 2) -> np.ndarray:
    """Per-snapshot estimate of E[|q - q_mf|^alpha + |p - p_mf|^alpha]^(1/alpha).

    Position differences are taken on the unwrapped lift.  Replicas and the
    exchangeable particle axis are pooled into the Monte Carlo average.
    """
    if alpha < 2 or alpha % 2 != 0:
        raise ValueError("alpha must be an even integer >= 2")
    if traj.n_replicas < 2:
        raise ValueError("need at least two replicas for a Monte Carlo estimate")
    dq = traj.lift_int - traj.lift_mf
    dp = traj.p_int - traj.p_mf
    per = np.abs(dq) ** alpha + np.abs(dp) ** alpha
    return per.mean(axis=(1, 2)) ** (1.0 / alpha)


def chaos_distance_sup(traj: CoupledTrajectory, alpha: int = 2) -> float:
    """Sup over snapshot times of chaos_distance."""
    return float(chaos_distance(traj, alpha).max())
