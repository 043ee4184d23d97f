"""Closed-form asymptotic generalisation errors.

Small-noise laws for the plateau value eps_g reached at long times, in
the regimes where the fixed point of the macroscopic flow is known in
closed form (or to first order in the noise variance).
"""

from __future__ import annotations

import math

from .errors import DivergenceError


def eg_scm_erf_small_eta(eta: float, sigma: float, M: int, L: int) -> float:
    """Erf soft committee machine, K = M + L students, eta -> 0 limit:
    eps_g -> sigma^2 eta (L + M / sqrt(3)) / (2 pi)."""
    if M < 0 or L < 0:
        raise ValueError("M and L must be non-negative")
    return sigma ** 2 * eta * (L + M / math.sqrt(3.0)) / (2.0 * math.pi)


def eg_scm_linear(eta: float, sigma: float, M: int, L: int) -> float:
    """Linear soft committee machine at any eta below the divergence point:
    eps_g = eta sigma^2 (L + M) / (4 - 2 eta (L + M))."""
    K = M + L
    denom = 4.0 - 2.0 * eta * K
    if denom <= 0.0:
        raise DivergenceError(
            f"eta (M + L) = {eta * K:.6g} >= 2; linear fixed point diverges")
    return eta * sigma ** 2 * K / denom


def eg_both_erf_m1(eta: float, sigma: float, K: int, v_star: float) -> float:
    """Both-layer erf training against an M = 1 teacher with second-layer
    weight v_star: eps_g = eta (sigma v_star)^2 / (2 sqrt(3) K pi)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return eta * (sigma * v_star) ** 2 / (2.0 * math.sqrt(3.0) * K * math.pi)


def eg_perceptron(eta: float, sigma: float, T: float) -> float:
    """K = M = 1 erf student against a teacher with self-overlap T.

    eps_g = eta sigma^2 (4T + 1) / (2 sqrt(2T + 1)
            (-eta sqrt(8T^2 + 6T + 1) + 4 pi T + pi)).
    """
    if T <= 0:
        raise ValueError("T must be positive")
    denom = 2.0 * math.sqrt(2.0 * T + 1.0) * (
        -eta * math.sqrt(8.0 * T * T + 6.0 * T + 1.0)
        + 4.0 * math.pi * T + math.pi)
    if denom <= 0.0:
        raise DivergenceError("learning rate beyond the perceptron divergence point")
    return eta * sigma ** 2 * (4.0 * T + 1.0) / denom


def eta_max(M: int) -> float:
    """Largest learning rate with a stable noiseless fixed point for the
    fully matched erf committee (K = M):
    eta_max = sqrt(3) pi / (M + 3 / sqrt(5) - 1)."""
    if M < 1:
        raise ValueError("M must be >= 1")
    return math.sqrt(3.0) * math.pi / (M + 3.0 / math.sqrt(5.0) - 1.0)
