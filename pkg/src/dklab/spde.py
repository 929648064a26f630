"""Pseudo-spectral mild-solution integrator for the density/momentum system.

The state X = (rho, j) lives in rfft coefficient space on a torus of period
2*pi.  Mode k of the linear part evolves by

    d/dt (rho_k, j_k) = A_k (rho_k, j_k),
    A_k = [[0, -i k], [-i k csq, -gamma]],   csq = sigma^2 / (2 gamma),

which is applied exactly through the closed-form matrix exponential.  The
interaction drift and the multiplicative noise enter through one exponential
Euler-Maruyama step per dt:

    X_{n+1} = exp(dt A) [X_n + dt alpha(X_n) + B(X_n) dW_n],

with alpha(X) = (0, -(W' * rho) rho) evaluated pseudo-spectrally under the
2/3 dealiasing rule and B(X) dW = (0, amp * h_delta(rho) dW).  dW is a
Q-Wiener increment whose spatial covariance is the von Mises kernel at
bandwidth sqrt(2) * epsilon, and amp = sigma / sqrt(n_particles) vanishes
when n_particles is infinite.

Both drift and noise leave the density component of the pre-propagator state
untouched, and the k = 0 row of the propagator is pinned to the identity, so
the total mass coefficient is carried through every step bit for bit.

The solver freezes once the H1 x H1 norm reaches k_norm or the minimum of
rho reaches the floor delta; the stopping status records which guard fired.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .fields import DensityField, convolve_potential, sobolev_norm
from .potential import PotentialSpec
from .torus import TWO_PI, TorusGeometry, make_kernel

PROPAGATOR_GAP_TOL = 1e-8
MASS_IMAG_TOL = 1e-14


class DivergenceError(RuntimeError):
    """A step produced a non-finite coefficient."""


@dataclass
class SpectralState:
    """rfft-layout coefficients of (rho, j) plus the clock."""

    geometry: TorusGeometry
    rho_hat: np.ndarray
    j_hat: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.rho_hat = np.asarray(self.rho_hat, dtype=complex)
        self.j_hat = np.asarray(self.j_hat, dtype=complex)
        if self.rho_hat.shape != (self.geometry.n_modes,):
            raise ValueError("rho_hat has the wrong mode count")
        if self.j_hat.shape != (self.geometry.n_modes,):
            raise ValueError("j_hat has the wrong mode count")

    @classmethod
    def from_values(cls, geometry: TorusGeometry, rho_values, j_values, t: float = 0.0,
                    band: int | None = None) -> "SpectralState":
        n = geometry.n_grid
        rho_hat = np.fft.rfft(np.asarray(rho_values, dtype=float)) / n
        j_hat = np.fft.rfft(np.asarray(j_values, dtype=float)) / n
        if band is not None:
            rho_hat[band + 1:] = 0.0
            j_hat[band + 1:] = 0.0
        return cls(geometry, rho_hat, j_hat, t)

    def rho_field(self) -> DensityField:
        return DensityField.from_fourier(self.geometry, self.rho_hat)

    def j_field(self) -> DensityField:
        return DensityField.from_fourier(self.geometry, self.j_hat)

    def copy(self) -> "SpectralState":
        return SpectralState(self.geometry, self.rho_hat.copy(), self.j_hat.copy(), self.t)

    def norm_h1(self) -> float:
        """sqrt(|rho|_{H1}^2 + |j|_{H1}^2)."""
        a = sobolev_norm(self.rho_field(), k=1)
        b = sobolev_norm(self.j_field(), k=1)
        return float(np.hypot(a, b))

    def min_rho(self) -> float:
        return float(self.rho_field().values.min())


def total_mass(state: SpectralState) -> float:
    """Integral of rho over the torus, with a reality check on the DC mode."""
    dc = state.rho_hat[0]
    if abs(dc.imag) > MASS_IMAG_TOL:
        raise ValueError(f"mass coefficient has imaginary part {dc.imag:.3e}")
    return float(TWO_PI * dc.real)


def mode_energy(state: SpectralState, csq: float) -> np.ndarray:
    """Per-mode energy csq |rho_k|^2 + |j_k|^2, non-increasing under A_k."""
    return csq * np.abs(state.rho_hat) ** 2 + np.abs(state.j_hat) ** 2


@dataclass(frozen=True)
class SpdeConfig:
    """Discretisation, model and stopping parameters of one run.

    n_particles scales the noise as sigma / sqrt(n_particles); math.inf
    switches the noise off entirely.  delta is the density floor used both by
    the noise regularisation h_delta and the stopping rule, c1 the datum
    margin the floor must stay below, k_norm the hard norm cap of the stopped
    process and c2 the smaller norm the noise-free solution must not exceed.
    """

    n_grid: int
    epsilon: float
    gamma: float = 1.0
    sigma: float = 1.0
    n_particles: float = math.inf
    dt: float = 1e-3
    t_horizon: float = 1.0
    delta: float = 0.02
    c1: float = 0.05
    k_norm: float = 5.0
    c2: float | None = None

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not (self.n_particles >= 1):
            raise ValueError("n_particles must be >= 1 (math.inf for no noise)")
        if self.dt <= 0 or self.t_horizon <= 0:
            raise ValueError("dt and t_horizon must be positive")
        if not 0 < self.delta < self.c1:
            raise ValueError(
                f"stopping ordering requires 0 < delta < c1; got delta = "
                f"{self.delta}, c1 = {self.c1}")
        if self.k_norm <= 0:
            raise ValueError("k_norm must be positive")
        if self.c2 is None:
            object.__setattr__(self, "c2", self.k_norm / 2.0)
        if not 0 < self.c2 < self.k_norm:
            raise ValueError(
                f"stopping ordering requires 0 < c2 < k_norm; got c2 = "
                f"{self.c2}, k_norm = {self.k_norm}")
        self.geometry.require_admissible(self.epsilon)

    @property
    def geometry(self) -> TorusGeometry:
        return TorusGeometry(self.n_grid)

    @property
    def csq(self) -> float:
        """Squared wave speed sigma^2 / (2 gamma) of the linearised system."""
        return self.sigma ** 2 / (2.0 * self.gamma)

    @property
    def dealias_band(self) -> int:
        """Largest retained wavenumber under the 2/3 rule."""
        return self.n_grid // 3

    @property
    def noise_amplitude(self) -> float:
        if math.isinf(self.n_particles):
            return 0.0
        return self.sigma / math.sqrt(self.n_particles)


@dataclass(frozen=True)
class StoppingStatus:
    stopped: bool = False
    reason: str | None = None  # "norm_cap" or "density_floor"
    time: float | None = None


@dataclass
class PersistenceReport:
    """Margins of a noise-free run against the floor c1 and the cap c2."""

    min_density: float
    max_norm: float
    c1: float
    c2: float

    @property
    def density_margin(self) -> float:
        return self.min_density - self.c1

    @property
    def norm_margin(self) -> float:
        return self.c2 - self.max_norm

    @property
    def satisfied(self) -> bool:
        return self.density_margin > 0 and self.norm_margin > 0


def linear_propagator(k: int, gamma: float, csq: float, dt: float) -> np.ndarray:
    """Dense 2x2 exp(dt A_k), for cross-checks and the defective fallback."""
    a = np.array([[0.0, -1j * k], [-1j * k * csq, -gamma]], dtype=complex)
    return scipy.linalg.expm(dt * a)


@dataclass
class PropagatorBank:
    """exp(dt A_k) for every retained mode, stored entrywise."""

    dt: float
    m00: np.ndarray
    m01: np.ndarray
    m10: np.ndarray
    m11: np.ndarray


def build_propagator_bank(geometry: TorusGeometry, gamma: float, csq: float,
                          dt: float) -> PropagatorBank:
    """Closed-form exp(dt A_k) over the rfft band, exact mass row at k = 0.

    Eigenvalues are (-gamma +- sqrt(gamma^2 - 4 k^2 csq)) / 2; the spectral
    projector formula breaks down when the two collide, so nearly defective
    modes fall back to a dense matrix exponential.
    """
    k = np.arange(geometry.n_modes, dtype=float)
    disc = gamma ** 2 - 4.0 * k ** 2 * csq
    gap = np.sqrt(disc.astype(complex))
    lam_p = (-gamma + gap) / 2.0
    lam_m = (-gamma - gap) / 2.0
    e_p = np.exp(dt * lam_p)
    e_m = np.exp(dt * lam_m)
    safe = np.abs(gap) >= PROPAGATOR_GAP_TOL
    denom = np.where(safe, gap, 1.0)
    m00 = (-e_p * lam_m + e_m * lam_p) / denom
    m01 = (e_p - e_m) * (-1j * k) / denom
    m10 = (e_p - e_m) * (-1j * k * csq) / denom
    m11 = (e_p * (-gamma - lam_m) + e_m * (lam_p + gamma)) / denom
    for idx in np.nonzero(~safe)[0]:
        mat = linear_propagator(int(idx), gamma, csq, dt)
        m00[idx], m01[idx] = mat[0, 0], mat[0, 1]
        m10[idx], m11[idx] = mat[1, 0], mat[1, 1]
    # Pin the mass row so rho_hat[0] is carried through bit for bit.
    m00[0] = 1.0
    m01[0] = 0.0
    m10[0] = 0.0
    m11[0] = np.exp(-gamma * dt)
    return PropagatorBank(dt, m00, m01, m10, m11)


def h_delta(r: np.ndarray, delta: float) -> np.ndarray:
    """C^2, strictly positive square-root surrogate.

    Equals sqrt(r) for r >= delta; below the floor it follows
    sqrt(delta) * P(|r| / delta) with the quartic
    P(s) = 35/48 + (7/12) s^3 - (5/16) s^4, which matches value, first and
    second derivative of sqrt at r = delta, is even and flat at r = 0, and
    never drops below sqrt(delta) * 35/48.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    r = np.asarray(r, dtype=float)
    s = np.minimum(np.abs(r) / delta, 1.0)
    inner = math.sqrt(delta) * (35.0 / 48.0 + (7.0 / 12.0) * s ** 3 - (5.0 / 16.0) * s ** 4)
    return np.where(r >= delta, np.sqrt(np.maximum(r, delta)), inner)


def q_wiener_increment(rng: np.random.Generator, lam: np.ndarray,
                       geometry: TorusGeometry, dt: float, band: int) -> np.ndarray:
    """Grid values of one Q-Wiener increment with covariance kernel dt * w.

    lam[k] are the kernel Fourier coefficients (its eigenvalues); modes above
    `band` are dropped.  The synthesised field satisfies
    E[dW(x) dW(y)] = dt * sum_{|k| <= band} lam_k e^{i k (x - y)} / (2 pi).
    """
    if band >= geometry.n_modes:
        raise ValueError("band exceeds the grid's mode count")
    lam = np.asarray(lam, dtype=float)[: band + 1]
    if lam.min() < 0:
        raise ValueError("covariance eigenvalues must be nonnegative")
    coeffs = np.zeros(geometry.n_modes, dtype=complex)
    coeffs[0] = math.sqrt(lam[0] * dt / TWO_PI) * rng.standard_normal()
    g = rng.standard_normal(band) + 1j * rng.standard_normal(band)
    coeffs[1: band + 1] = np.sqrt(lam[1:] * dt / (2.0 * TWO_PI)) * g
    return np.fft.irfft(coeffs * geometry.n_grid, n=geometry.n_grid)


def nonlinear_drift(state: SpectralState, w: PotentialSpec, band: int) -> np.ndarray:
    """Coefficients of the momentum drift -(W' * rho) rho, dealiased."""
    n = state.geometry.n_grid
    if w.is_zero:
        return np.zeros(state.geometry.n_modes, dtype=complex)
    kmax = min(w.k_max, state.geometry.n_modes - 1)
    conv_hat = np.zeros(state.geometry.n_modes, dtype=complex)
    conv_hat[: kmax + 1] = (state.rho_hat[: kmax + 1]
                            * w.conv_multiplier(kmax + 1, derivative=1))
    conv_vals = np.fft.irfft(conv_hat * n, n=n)
    rho_vals = np.fft.irfft(state.rho_hat * n, n=n)
    drift_hat = np.fft.rfft(-conv_vals * rho_vals) / n
    drift_hat[band + 1:] = 0.0
    return drift_hat


def step_mild(state: SpectralState, cfg: SpdeConfig, bank: PropagatorBank,
              w: PotentialSpec, dw_values: np.ndarray | None) -> SpectralState:
    """One exponential Euler-Maruyama step; dw_values None means no noise.

    The drift and noise act on the momentum component only, so the
    pre-propagator density coefficients are literally state.rho_hat, and the
    pinned mass row keeps rho_hat[0] unchanged to the last bit.
    """
    n = state.geometry.n_grid
    band = cfg.dealias_band
    drift = nonlinear_drift(state, w, band)
    pre_rho = state.rho_hat
    pre_j = state.j_hat + bank.dt * drift
    if dw_values is not None:
        rho_vals = np.fft.irfft(state.rho_hat * n, n=n)
        forcing = cfg.noise_amplitude * h_delta(rho_vals, cfg.delta) * dw_values
        forcing_hat = np.fft.rfft(forcing) / n
        forcing_hat[band + 1:] = 0.0
        pre_j = pre_j + forcing_hat
    new_rho = bank.m00 * pre_rho + bank.m01 * pre_j
    new_j = bank.m10 * pre_rho + bank.m11 * pre_j
    if not (np.all(np.isfinite(new_rho.view(float))) and np.all(np.isfinite(new_j.view(float)))):
        raise DivergenceError(f"non-finite coefficients at t = {state.t + bank.dt:.6g}")
    return SpectralState(state.geometry, new_rho, new_j, state.t + bank.dt)


@dataclass
class SpdeTrajectory:
    """Recorded run: field snapshots plus per-step scalar monitors."""

    times: np.ndarray        # (S,) snapshot times
    rho: np.ndarray          # (S, n_grid) values
    j: np.ndarray            # (S, n_grid) values
    step_times: np.ndarray   # (n_steps + 1,)
    norm_path: np.ndarray    # H1 x H1 norm at every step
    min_rho_path: np.ndarray
    status: StoppingStatus
    config: SpdeConfig
    seed: int | None = None
    final: SpectralState | None = None


def default_datum(geometry: TorusGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Mass-one density (1 + 0.3 cos x) / (2 pi) and zero momentum."""
    x = geometry.nodes()
    rho = (1.0 + 0.3 * np.cos(x)) / TWO_PI
    return rho, np.zeros_like(rho)


def initial_state(cfg: SpdeConfig, rho0=None, j0=None) -> SpectralState:
    geometry = cfg.geometry
    if rho0 is None and j0 is None:
        rho0, j0 = default_datum(geometry)
    elif rho0 is None or j0 is None:
        raise ValueError("give both rho0 and j0 or neither")
    state = SpectralState.from_values(geometry, rho0, j0, band=cfg.dealias_band)
    if state.min_rho() < cfg.c1:
        raise ValueError(
            f"stopping ordering requires delta < c1 <= min rho0: datum minimum "
            f"{state.min_rho():.4g} sits below c1 = {cfg.c1} "
            f"(delta = {cfg.delta})"
        )
    if state.norm_h1() > cfg.c2:
        raise ValueError(
            f"stopping ordering requires norm(X0) <= c2 < k_norm: datum norm "
            f"{state.norm_h1():.4g} exceeds c2 = {cfg.c2}"
        )
    return state


def solve_spde(cfg: SpdeConfig, w: PotentialSpec, *, seed: int | None = None,
               snapshot_times=None, rho0=None, j0=None,
               noise_increments: np.ndarray | None = None) -> SpdeTrajectory:
    """Integrate over [0, t_horizon], freezing the state if a guard trips.

    noise_increments, when given, must hold pre-generated Q-Wiener values of
    shape (n_steps, n_grid), which makes runs with shared noise at different
    resolutions possible; otherwise increments are drawn from `seed`.
    Snapshots requested after a stop repeat the frozen state.
    """
    n_steps = int(round(cfg.t_horizon / cfg.dt))
    if abs(n_steps * cfg.dt - cfg.t_horizon) > 1e-9 * max(1.0, cfg.t_horizon):
        raise ValueError("t_horizon must be an integer multiple of dt")
    geometry = cfg.geometry
    state = initial_state(cfg, rho0, j0)
    bank = build_propagator_bank(geometry, cfg.gamma, cfg.csq, cfg.dt)

    if snapshot_times is None:
        snapshot_times = [0.0, cfg.t_horizon]
    snap_times = np.asarray(sorted(snapshot_times), dtype=float)
    snap_steps = [int(round(t / cfg.dt)) for t in snap_times]
    for t, s in zip(snap_times, snap_steps):
        if abs(s * cfg.dt - t) > 1e-9 * max(1.0, abs(t)) or s > n_steps:
            raise ValueError(f"snapshot time {t} is not a step multiple within the horizon")

    noisy = cfg.noise_amplitude > 0.0
    if noise_increments is not None:
        noise_increments = np.asarray(noise_increments, dtype=float)
        if noise_increments.shape != (n_steps, geometry.n_grid):
            raise ValueError("noise_increments has the wrong shape")
    rng = np.random.default_rng(np.random.SeedSequence(seed)) if noisy else None
    lam = None
    if noisy and noise_increments is None:
        kern = make_kernel(math.sqrt(2.0) * cfg.epsilon, geometry)
        lam = kern.fourier_coeffs

    rho_snap = np.zeros((len(snap_steps), geometry.n_grid))
    j_snap = np.zeros_like(rho_snap)
    norm_path = np.zeros(n_steps + 1)
    min_path = np.zeros(n_steps + 1)
    step_times = cfg.dt * np.arange(n_steps + 1)

    status = StoppingStatus()
    norm_path[0] = state.norm_h1()
    min_path[0] = state.min_rho()
    for idx, target in enumerate(snap_steps):
        if target == 0:
            rho_snap[idx] = state.rho_field().values
            j_snap[idx] = state.j_field().values

    for s in range(n_steps):
        if not status.stopped:
            if noisy:
                if noise_increments is not None:
                    dw = noise_increments[s]
                else:
                    dw = q_wiener_increment(rng, lam, geometry, cfg.dt, cfg.dealias_band)
            else:
                dw = None
            state = step_mild(state, cfg, bank, w, dw)
            if state.norm_h1() >= cfg.k_norm:
                status = StoppingStatus(True, "norm_cap", state.t)
            elif state.min_rho() <= cfg.delta:
                status = StoppingStatus(True, "density_floor", state.t)
        norm_path[s + 1] = state.norm_h1()
        min_path[s + 1] = state.min_rho()
        for idx, target in enumerate(snap_steps):
            if target == s + 1:
                rho_snap[idx] = state.rho_field().values
                j_snap[idx] = state.j_field().values

    return SpdeTrajectory(times=snap_times, rho=rho_snap, j=j_snap,
                          step_times=step_times, norm_path=norm_path,
                          min_rho_path=min_path, status=status, config=cfg,
                          seed=seed, final=state)


def solve_noise_free(cfg: SpdeConfig, w: PotentialSpec, *, snapshot_times=None,
                     rho0=None, j0=None) -> tuple[SpdeTrajectory, PersistenceReport]:
    """Deterministic limit run plus its floor/cap margins."""
    quiet = SpdeConfig(n_grid=cfg.n_grid, epsilon=cfg.epsilon, gamma=cfg.gamma,
                       sigma=cfg.sigma, n_particles=math.inf, dt=cfg.dt,
                       t_horizon=cfg.t_horizon, delta=cfg.delta, c1=cfg.c1,
                       k_norm=cfg.k_norm, c2=cfg.c2)
    traj = solve_spde(quiet, w, snapshot_times=snapshot_times, rho0=rho0, j0=j0)
    report = PersistenceReport(min_density=float(traj.min_rho_path.min()),
                               max_norm=float(traj.norm_path.max()),
                               c1=cfg.c1, c2=cfg.c2)
    return traj, report


def convolution_bound_check(traj: SpdeTrajectory, w: PotentialSpec,
                            tol: float = 1e-10) -> dict:
    """sup |W' * rho| <= max|W'| * mass at every admissible snapshot.

    A snapshot is admissible when it lies at or before the stopping time and
    its density is nonnegative; in that regime the integral of |rho| equals
    the mass and Young's inequality gives the bound.  tol absorbs the
    quadrature roundoff of the spectral convolution.  Returns the worst
    margin (bound + tol minus observed sup) over the admissible snapshots.
    """
    geometry = traj.config.geometry
    max_w1 = w.max_abs_w1()
    worst_margin = math.inf
    worst_sup = 0.0
    checked = 0
    for s, t in enumerate(traj.times):
        if traj.status.stopped and t > traj.status.time:
            continue
        values = traj.rho[s]
        if values.min() < 0.0:
            continue
        rho = DensityField(geometry, values)
        conv = convolve_potential(rho, w, derivative=1)
        mass = float(values.mean()) * TWO_PI
        sup_conv = float(np.abs(conv.values).max())
        worst_margin = min(worst_margin, max_w1 * mass + tol - sup_conv)
        worst_sup = max(worst_sup, sup_conv)
        checked += 1
    return {
        "checked_snapshots": checked,
        "worst_sup": worst_sup,
        "worst_margin": worst_margin,
        "ok": checked > 0 and worst_margin >= 0.0,
    }
