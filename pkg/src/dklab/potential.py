"""Smooth interaction potentials as short trigonometric polynomials.

A potential is W(x) = sum_k a_k cos(kx) + b_k sin(kx) with the wavenumber k
running from 0 to a small k_max.  Only W' and W'' enter the dynamics, so the
constant a_0 is irrelevant but kept for completeness.  The default choice
throughout the package is W = cos(x).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .torus import TWO_PI


@dataclass(frozen=True)
class PotentialSpec:
    """Trigonometric interaction potential.

    cosine[k] and sine[k] are the coefficients of cos(kx) and sin(kx);
    the arrays must have equal length k_max + 1.
    """

    cosine: np.ndarray
    sine: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.cosine, dtype=float))
        b = np.atleast_1d(np.asarray(self.sine, dtype=float))
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("cosine and sine coefficient arrays must be 1-d and equal length")
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise ValueError("potential coefficients must be finite")
        object.__setattr__(self, "cosine", a)
        object.__setattr__(self, "sine", b)

    @classmethod
    def cosine_potential(cls) -> "PotentialSpec":
        """W(x) = cos(x)."""
        return cls(cosine=np.array([0.0, 1.0]), sine=np.array([0.0, 0.0]))

    @classmethod
    def zero(cls) -> "PotentialSpec":
        """Free dynamics, W' identically zero."""
        return cls(cosine=np.array([0.0]), sine=np.array([0.0]))

    @property
    def k_max(self) -> int:
        return len(self.cosine) - 1

    @property
    def is_zero(self) -> bool:
        return bool(np.all(self.cosine[1:] == 0.0) and np.all(self.sine[1:] == 0.0))

    def w(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, self.cosine[0])
        for k in range(1, self.k_max + 1):
            out = out + self.cosine[k] * np.cos(k * x) + self.sine[k] * np.sin(k * x)
        return out

    def w1(self, x) -> np.ndarray:
        """First derivative W'."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for k in range(1, self.k_max + 1):
            out = out + k * (-self.cosine[k] * np.sin(k * x) + self.sine[k] * np.cos(k * x))
        return out

    def w2(self, x) -> np.ndarray:
        """Second derivative W''."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for k in range(1, self.k_max + 1):
            out = out - k * k * (self.cosine[k] * np.cos(k * x) + self.sine[k] * np.sin(k * x))
        return out

    def max_abs_w1(self, n_scan: int = 4096) -> float:
        """sup |W'| by dense scan (exact enough for low-order polynomials)."""
        x = np.arange(n_scan) * (TWO_PI / n_scan)
        return float(np.abs(self.w1(x)).max())

    def max_abs_w2(self, n_scan: int = 4096) -> float:
        x = np.arange(n_scan) * (TWO_PI / n_scan)
        return float(np.abs(self.w2(x)).max())

    def conv_multiplier(self, n_modes: int, derivative: int = 0) -> np.ndarray:
        """Fourier multiplier of f -> W^(derivative) * f (circular convolution).

        In the series convention f(x) = sum_k c_k exp(ikx), convolution with a
        kernel g multiplies c_k by g_hat_k = integral g(x) exp(-ikx) dx, i.e.
        2*pi times g's own series coefficient.  For the trig polynomial W the
        series coefficients are (a_k - i b_k)/2 on k >= 1, so

            multiplier[k] = 2*pi * (ik)^derivative * (a_k - i b_k) / 2.

        Returns a complex array over k = 0 .. n_modes-1 (rfft layout).
        """
        mult = np.zeros(n_modes, dtype=complex)
        if derivative == 0:
            mult[0] = TWO_PI * self.cosine[0]
        for k in range(1, min(self.k_max, n_modes - 1) + 1):
            ck = 0.5 * (self.cosine[k] - 1j * self.sine[k])
            mult[k] = TWO_PI * (1j * k) ** derivative * ck
        return mult


def mean_w1_at(w: PotentialSpec, q: np.ndarray, at: np.ndarray) -> np.ndarray:
    """Ensemble average (1/N) sum_j W'(at - q_j), vectorised in both arguments.

    q has shape (..., N) and `at` either (M,) or a batch-compatible (..., M);
    the sum over j collapses to per-wavenumber totals

        C_k = sum_j cos(k q_j),   S_k = sum_j sin(k q_j),

    so the cost is O((N + M) k_max) instead of O(N M).  Evaluating at the
    particle positions themselves (at = q) includes the self term W'(0),
    which is the convention used by the pairwise force.
    """
    q = np.asarray(q, dtype=float)
    at = np.asarray(at, dtype=float)
    n_part = q.shape[-1]
    out = np.zeros(np.broadcast_shapes(q.shape[:-1] + (1,), at.shape), dtype=float)
    for k in range(1, w.k_max + 1):
        a, b = w.cosine[k], w.sine[k]
        if a == 0.0 and b == 0.0:
            continue
        ck = np.cos(k * q).sum(axis=-1, keepdims=True)
        sk = np.sin(k * q).sum(axis=-1, keepdims=True)
        cos_at = np.cos(k * at)
        sin_at = np.sin(k * at)
        out += k * (-a * (ck * sin_at - sk * cos_at) + b * (ck * cos_at + sk * sin_at))
    return out / n_part
