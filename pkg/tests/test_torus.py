"""Kernel geometry and spectrum against Bessel-function oracles."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import ive

from dklab.torus import (TWO_PI, ResolutionError, TorusGeometry, kernel_fourier,
                         kernel_moment, kernel_residual_sup, make_kernel,
                         normalization_constant, von_mises_eval, wrap,
                         wrap_centered)

EPS_LADDER = (0.4, 0.2, 0.1, 0.05)


class TestWrap:
    @given(st.floats(-1e6, 1e6))
    def test_wrap_lands_in_period(self, x):
        assert 0.0 <= wrap(x) < TWO_PI

    @given(st.floats(-1e6, 1e6))
    def test_wrap_centered_lands_in_symmetric_interval(self, x):
        assert -np.pi <= wrap_centered(x) <= np.pi

    @given(st.floats(-50.0, 50.0), st.integers(-3, 3))
    def test_shift_by_full_turns_is_invisible(self, x, k):
        assert wrap(x + k * TWO_PI) == pytest.approx(wrap(x), abs=1e-10)

    def test_reference_points(self):
        assert wrap(-0.5) == pytest.approx(TWO_PI - 0.5)
        assert wrap_centered(1.5 * np.pi) == pytest.approx(-0.5 * np.pi)


class TestGeometry:
    def test_requires_power_of_two(self):
        with pytest.raises(ValueError):
            TorusGeometry(100)

    def test_requires_at_least_four_nodes(self):
        with pytest.raises(ValueError):
            TorusGeometry(2)

    def test_spacing_covers_period(self):
        g = TorusGeometry(128)
        assert g.spacing * g.n_grid == pytest.approx(TWO_PI)
        assert g.n_modes == 65
        assert g.nodes().shape == (128,)
        assert g.nodes()[0] == 0.0

    @given(st.floats(0.02, 0.5))
    def test_for_epsilon_is_admissible_and_minimal(self, eps):
        g = TorusGeometry.for_epsilon(eps)
        assert g.admits(eps)
        if g.n_grid > 64:
            assert not TorusGeometry(g.n_grid // 2).admits(eps)

    def test_oversample_doubles(self):
        g0 = TorusGeometry.for_epsilon(0.1)
        g2 = TorusGeometry.for_epsilon(0.1, oversample=2)
        assert g2.n_grid == 4 * g0.n_grid

    def test_error_message_names_the_rule(self):
        with pytest.raises(ResolutionError, match="n_grid=64.*epsilon=0.05"):
            TorusGeometry(64).require_admissible(0.05)


class TestNormalization:
    @pytest.mark.parametrize("eps", EPS_LADDER)
    def test_matches_bessel_closed_form(self, eps):
        kappa = eps ** -2
        exact = TWO_PI * ive(0, kappa)  # 2 pi e^-kappa I0(kappa), overflow-safe
        assert abs(normalization_constant(eps) - exact) <= 1e-10 * exact

    def test_rejects_underresolved_quadrature(self):
        with pytest.raises(ResolutionError):
            normalization_constant(0.05, n_grid=64)

    def test_rejects_nonpositive_width(self):
        with pytest.raises(ValueError):
            normalization_constant(-0.1)


class TestKernelSpectrum:
    @pytest.mark.parametrize("eps", EPS_LADDER)
    def test_coefficients_match_bessel_ratio(self, eps):
        kern = make_kernel(eps)
        kappa = eps ** -2
        k = np.arange(min(40, kern.geometry.n_modes))
        oracle = ive(k, kappa) / ive(0, kappa)
        got = kernel_fourier(kern, int(k[-1]))
        assert np.abs(got - oracle).max() <= 1e-8

    def test_mass_coefficient_is_one(self):
        for eps in EPS_LADDER:
            assert make_kernel(eps).fourier_coeffs[0] == pytest.approx(1.0, abs=1e-12)

    def test_coefficients_clamped_and_decreasing(self):
        c = make_kernel(0.2).fourier_coeffs
        assert c.min() >= 0.0 and c.max() <= 1.0
        assert np.all(np.diff(c[:12]) < 0.0)

    def test_kernel_integrates_to_one(self):
        kern = make_kernel(0.15)
        vals = von_mises_eval(kern, kern.geometry.nodes())
        assert vals.sum() * kern.geometry.spacing == pytest.approx(1.0, abs=1e-12)

    def test_kernel_fourier_band_guard(self):
        kern = make_kernel(0.2)
        with pytest.raises(ValueError):
            kernel_fourier(kern, kern.geometry.n_grid)


class TestEval:
    def test_derivatives_match_finite_differences(self):
        kern = make_kernel(0.3)
        x = np.linspace(-3.0, 3.0, 41)
        h = 1e-6
        d1_fd = (von_mises_eval(kern, x + h) - von_mises_eval(kern, x - h)) / (2 * h)
        d2_fd = (von_mises_eval(kern, x + h, 1) - von_mises_eval(kern, x - h, 1)) / (2 * h)
        scale = von_mises_eval(kern, 0.0) / 0.3
        assert np.abs(von_mises_eval(kern, x, 1) - d1_fd).max() <= 1e-4 * scale
        assert np.abs(von_mises_eval(kern, x, 2) - d2_fd).max() <= 1e-3 * scale / 0.3

    def test_even_symmetry(self):
        kern = make_kernel(0.25)
        x = np.linspace(0.1, 3.0, 17)
        assert von_mises_eval(kern, x) == pytest.approx(von_mises_eval(kern, -x))
        assert von_mises_eval(kern, x, 1) == pytest.approx(-von_mises_eval(kern, -x, 1))

    def test_order_guard(self):
        with pytest.raises(ValueError):
            von_mises_eval(make_kernel(0.2), 0.0, order=3)


class TestGaussianResidual:
    """Distance to the unperiodised line Gaussian of matching variance."""

    def test_decreases_with_width(self):
        vals = [kernel_residual_sup(e) for e in EPS_LADDER]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_linear_rate_constant(self):
        # residual / eps approaches 1/(8 sqrt(2 pi)) from above
        c = 1.0 / (8.0 * np.sqrt(TWO_PI))
        assert kernel_residual_sup(0.05) / 0.05 == pytest.approx(c, rel=2e-3)
        assert kernel_residual_sup(0.1) / 0.1 > c

    def test_attained_at_origin(self):
        eps = 0.1
        kern = make_kernel(eps)
        at_zero = abs(von_mises_eval(kern, 0.0)
                      - 1.0 / (eps * np.sqrt(TWO_PI)))
        assert at_zero == pytest.approx(kernel_residual_sup(eps), rel=1e-9)

    def test_domain_guard(self):
        with pytest.raises(ValueError):
            kernel_residual_sup(0.6)


class TestMoments:
    def test_second_moment_tracks_variance(self):
        # integral x^2 w_eps approaches eps^2 as the kernel localises
        assert kernel_moment(0.05, 2) == pytest.approx(0.05 ** 2, rel=2e-3)

    def test_first_absolute_moment(self):
        assert kernel_moment(0.05, 1) == pytest.approx(
            np.sqrt(2.0 / np.pi) * 0.05, rel=2e-3)

    def test_zeroth_moment_is_mass(self):
        assert kernel_moment(0.2, 0) == pytest.approx(1.0, abs=1e-12)
