"""Multivariate Gaussian moment integrals closing the order-parameter ODEs.

All moments are expectations over zero-mean Gaussian fields with a small
(2-4 dimensional) covariance matrix:

    i2 = <g(a) g(b)>        j2 = <g'(a) g'(b)>
    i3 = <g'(a) b g(c)>     i4 = <g'(a) g'(b) g(c) g(d)>

For the erf activation all four have closed forms built from arcsin
kernels; for the linear activation they collapse to covariance entries.
ReLU moments reduce to Gaussian orthant probabilities and orthant second
moments E[x_p x_q 1{x > 0}]. Stein's identity turns the second moments
into combinations of lower-dimensional orthant probabilities, which are
closed form up to three dimensions; the single remaining numeric piece
is the quadrivariate orthant probability, computed from Plackett's
identity as a one-dimensional integral (tanh-sinh rule, `nodes` points,
converging spectrally even for near-singular covariances). A Monte
Carlo oracle `mc_moment` backs every evaluator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri

from .activations import Activation
from .errors import DomainError

# Tolerance for PSD / arcsin-domain violations: round-off from long ODE
# integrations may push arguments marginally outside the exact domain.
DOMAIN_TOL = 1e-9

# Variances below this are treated as exactly degenerate (field pinned to 0).
_DEGENERATE_VAR = 1e-12

DEFAULT_QUAD_NODES = 64

MOMENT_KINDS = ("I2", "I3", "I4", "J2")
_KIND_DIM = {"I2": 2, "I3": 3, "I4": 4, "J2": 2}


@dataclass(frozen=True)
class CovBlock:
    """Symmetric covariance matrix of one 2-4 dimensional Gaussian block."""

    c: np.ndarray = field()

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] not in (2, 3, 4):
            raise DomainError(f"covariance block must be 2x2, 3x3 or 4x4, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise DomainError("covariance block has non-finite entries")
        if np.max(np.abs(c - c.T)) > 1e-12:
            raise DomainError("covariance block is not symmetric to 1e-12")
        c = 0.5 * (c + c.T)
        if np.linalg.eigvalsh(c)[0] < -DOMAIN_TOL:
            raise DomainError("covariance block is not PSD within tolerance")
        object.__setattr__(self, "c", c)

    @property
    def dim(self) -> int:
        return self.c.shape[0]


def _clamped_arcsin(arg, tol=DOMAIN_TOL, what="arcsin argument"):
    arg = np.asarray(arg, dtype=float)
    bad = np.abs(arg) > 1.0 + tol
    if np.any(bad):
        raise DomainError(f"{what} outside [-1, 1] beyond tolerance "
                          f"(worst {np.max(np.abs(arg)):.6g})")
    return np.arcsin(np.clip(arg, -1.0, 1.0))


def _guarded_sqrt(x, tol=DOMAIN_TOL, what="discriminant"):
    x = np.asarray(x, dtype=float)
    if np.any(x < -tol):
        raise DomainError(f"negative {what} beyond tolerance (worst {np.min(x):.6g})")
    return np.sqrt(np.maximum(x, 0.0))


# ---------------------------------------------------------------------------
# erf closed forms (vectorized over broadcastable covariance entries)
# ---------------------------------------------------------------------------

def erf_i2(c11, c12, c22):
    """<g(a) g(b)> for erf activation."""
    arg = c12 / _guarded_sqrt((1.0 + c11) * (1.0 + c22))
    return (2.0 / math.pi) * _clamped_arcsin(arg)


def erf_j2(c11, c12, c22):
    """<g'(a) g'(b)> for erf activation."""
    disc = 1.0 + c11 + c22 + c11 * c22 - c12 * c12
    return (2.0 / math.pi) / _guarded_sqrt(disc)


def erf_i3(c11, c12, c13, c22, c23, c33):
    """<g'(a) b g(c)> for erf activation."""
    lam3 = (1.0 + c11) * (1.0 + c33) - c13 * c13
    return (2.0 / math.pi) * (c23 * (1.0 + c11) - c12 * c13) / (
        (1.0 + c11) * _guarded_sqrt(lam3, what="Lambda_3"))


def erf_i4(c11, c12, c13, c14, c22, c23, c24, c33, c34, c44):
    """<g'(a) g'(b) g(c) g(d)> for erf activation."""
    lam4 = (1.0 + c11) * (1.0 + c22) - c12 * c12
    lam0 = (lam4 * c34 - c23 * c24 * (1.0 + c11) - c13 * c14 * (1.0 + c22)
            + c12 * c13 * c24 + c12 * c14 * c23)
    lam1 = (lam4 * (1.0 + c33) - c23 * c23 * (1.0 + c11) - c13 * c13 * (1.0 + c22)
            + 2.0 * c12 * c13 * c23)
    lam2 = (lam4 * (1.0 + c44) - c24 * c24 * (1.0 + c11) - c14 * c14 * (1.0 + c22)
            + 2.0 * c12 * c14 * c24)
    arg = lam0 / _guarded_sqrt(lam1 * lam2, what="Lambda_1 * Lambda_2")
    return (4.0 / math.pi ** 2) * _clamped_arcsin(arg) / _guarded_sqrt(
        lam4, what="Lambda_4")


# ---------------------------------------------------------------------------
# ReLU quadrature: Gaussian orthant probabilities and second moments
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _unit_ts(n: int):
    # tanh-sinh (double-exponential) nodes/weights on (0, 1); robust to the
    # endpoint square-root singularities of near-singular covariances
    t_max = 3.8
    j = np.arange(n) - (n - 1) / 2.0
    h = 2.0 * t_max / max(n - 1, 1)
    u = j * h
    s = 0.5 * math.pi * np.sinh(u)
    x = 0.5 * (1.0 + np.tanh(s))
    w = 0.25 * math.pi * h * np.cosh(u) / np.cosh(s) ** 2
    return x, w


_TINY = 1e-300


def _corr(c11, c12, c22):
    return np.clip(c12 / np.sqrt(np.maximum(c11 * c22, _TINY)), -1.0, 1.0)


def _orthant_p2(c11, c12, c22):
    return 0.25 + np.arcsin(_corr(c11, c12, c22)) / (2.0 * math.pi)


def _orthant_p3(covs):
    d = np.einsum("bii->bi", covs)
    s = (np.arcsin(_corr(d[:, 0], covs[:, 0, 1], d[:, 1]))
         + np.arcsin(_corr(d[:, 0], covs[:, 0, 2], d[:, 2]))
         + np.arcsin(_corr(d[:, 1], covs[:, 1, 2], d[:, 2])))
    return 0.125 + s / (4.0 * math.pi)


def _orthant_p4(covs, nodes):
    """Quadrivariate orthant probability via Plackett's identity.

    Along the linear path Sigma(t) = D + t (Sigma - D) from the diagonal
    (orthant probability 1/16), dP/dt is a sum over index pairs of
    phi2(0, 0) times a conditional bivariate orthant probability, all in
    closed form; the resulting 1-D integrand is smooth in t.
    """
    t, wt = _unit_ts(nodes)
    B = covs.shape[0]
    d = np.einsum("bii->bi", covs)
    acc = np.zeros((B, t.size))
    for i in range(4):
        for j in range(i + 1, 4):
            k, l = (m for m in range(4) if m not in (i, j))
            sij = covs[:, i, j][:, None]
            a11 = d[:, i][:, None]
            a22 = d[:, j][:, None]
            a12 = sij * t
            det2 = np.maximum(a11 * a22 - a12 * a12, _TINY)
            bki = covs[:, k, i][:, None] * t
            bkj = covs[:, k, j][:, None] * t
            bli = covs[:, l, i][:, None] * t
            blj = covs[:, l, j][:, None] * t
            qkk = (a22 * bki * bki - 2 * a12 * bki * bkj + a11 * bkj * bkj) / det2
            qll = (a22 * bli * bli - 2 * a12 * bli * blj + a11 * blj * blj) / det2
            qkl = (a22 * bki * bli - a12 * (bki * blj + bkj * bli)
                   + a11 * bkj * blj) / det2
            ckk = d[:, k][:, None] - qkk
            cll = d[:, l][:, None] - qll
            ckl = covs[:, k, l][:, None] * t - qkl
            p2 = _orthant_p2(ckk, ckl, cll)
            acc += sij * p2 / (2.0 * math.pi * np.sqrt(det2))
    return 1.0 / 16.0 + acc @ wt


def orthant_prob(covs: np.ndarray, nodes: int = DEFAULT_QUAD_NODES) -> np.ndarray:
    """P(x > 0) for a batch of zero-mean Gaussians, dimension 1 to 4."""
    covs = np.asarray(covs, dtype=float)
    B, d, _ = covs.shape
    dg = np.einsum("bii->bi", covs)
    if d == 1:
        return np.full(B, 0.5)
    if d == 2:
        return _orthant_p2(dg[:, 0], covs[:, 0, 1], dg[:, 1])
    if d == 3:
        return _orthant_p3(covs)
    if d == 4:
        return _orthant_p4(covs, nodes)
    raise DomainError(f"orthant probability implemented for d <= 4, got {d}")


def _conditional(covs, m):
    """Covariance of the remaining coordinates given x_m = 0."""
    d = covs.shape[1]
    idx = [j for j in range(d) if j != m]
    sub = covs[:, idx][:, :, idx]
    col = covs[:, idx, m]
    smm = np.maximum(covs[:, m, m], _TINY)
    return sub - col[:, :, None] * col[:, None, :] / smm[:, None, None]


def orthant_first(covs: np.ndarray, nodes: int = DEFAULT_QUAD_NODES) -> np.ndarray:
    """E[x_q 1{x > 0}], shape (B, d), via Stein's identity.

    E[x_q 1{x > 0}] = sum_m sigma_qm phi_m(0) P(conditional orthant),
    and the conditional orthant probabilities live in dimension d - 1.
    """
    covs = np.asarray(covs, dtype=float)
    B, d, _ = covs.shape
    out = np.zeros((B, d))
    for m in range(d):
        smm = np.maximum(covs[:, m, m], _TINY)
        if d == 1:
            pm = np.ones(B)
        else:
            pm = orthant_prob(_conditional(covs, m), nodes)
        out += covs[:, :, m] * (pm / np.sqrt(2.0 * math.pi * smm))[:, None]
    return out


def orthant_moments(covs: np.ndarray, nodes: int = DEFAULT_QUAD_NODES):
    """P(x > 0) and E[x_p x_q 1{x > 0}] for zero-mean Gaussians.

    covs has shape (B, d, d) with d <= 4. Returns (prob, second) with
    shapes (B,) and (B, d, d). Stein's identity reduces the second
    moments to the orthant probability plus first orthant moments of the
    (d-1)-dimensional conditionals:

        E[x_p x_q 1] = sigma_pq P + sum_k sigma_pk phi_k(0)
                       E[x_q 1 | x_k = 0].
    """
    covs = np.asarray(covs, dtype=float)
    B, d, _ = covs.shape
    if d == 1:
        var = covs[:, 0, 0]
        return np.full(B, 0.5), (0.5 * var)[:, None, None]
    # Jitter keeps conditional covariances PSD for (near-)singular blocks;
    # the induced error is far below the evaluation target.
    scale = np.maximum(np.einsum("bii->b", covs) / d, 1.0)
    covs = covs + (1e-12 * scale)[:, None, None] * np.eye(d)

    prob = orthant_prob(covs, nodes)
    second = covs * prob[:, None, None]
    for k in range(d):
        skk = np.maximum(covs[:, k, k], _TINY)
        mk = orthant_first(_conditional(covs, k), nodes)   # (B, d-1)
        mfull = np.zeros((B, d))
        idx = [j for j in range(d) if j != k]
        mfull[:, idx] = mk
        coef = covs[:, :, k] / np.sqrt(2.0 * math.pi * skk)[:, None]
        second = second + coef[:, :, None] * mfull[:, None, :]
    second = 0.5 * (second + np.swapaxes(second, 1, 2))
    return prob, second


def _relu_degenerate(covs):
    # any pinned field (zero variance) kills the ReLU integrand
    return np.einsum("bii->bi", covs).min(axis=1) < _DEGENERATE_VAR


def relu_i2(covs, nodes: int = DEFAULT_QUAD_NODES):
    """<relu(a) relu(b)> = E[a b 1{a>0, b>0}] for a batch of 2x2 covariances."""
    covs = np.asarray(covs, dtype=float).reshape(-1, 2, 2)
    out = np.zeros(covs.shape[0])
    ok = ~_relu_degenerate(covs)
    if np.any(ok):
        _, second = orthant_moments(covs[ok], nodes)
        out[ok] = second[:, 0, 1]
    return out


def relu_j2(c11, c12, c22):
    """<1{a>0} 1{b>0}> orthant probability (closed form)."""
    c11 = np.asarray(c11, dtype=float)
    c12 = np.asarray(c12, dtype=float)
    c22 = np.asarray(c22, dtype=float)
    out = np.zeros(np.broadcast(c11, c12, c22).shape)
    ok = (c11 >= _DEGENERATE_VAR) & (c22 >= _DEGENERATE_VAR)
    rho = np.where(ok, c12, 0.0) / np.sqrt(np.where(ok, c11 * c22, 1.0))
    val = 0.25 + _clamped_arcsin(rho, what="correlation") / (2.0 * math.pi)
    return np.where(ok, val, 0.0)[()]


def relu_i3(covs, nodes: int = DEFAULT_QUAD_NODES):
    """<1{a>0} b relu(c)> = E[b c 1{a>0, c>0}] for a batch of 3x3 covariances."""
    covs = np.asarray(covs, dtype=float).reshape(-1, 3, 3)
    out = np.zeros(covs.shape[0])
    ok = ~_relu_degenerate(covs)
    if not np.any(ok):
        return out
    sub = covs[ok]
    # condition the unconstrained middle field on the constrained pair (a, c)
    s_idx = [0, 2]
    sigma_ss = sub[np.ix_(np.arange(sub.shape[0]), s_idx, s_idx)]
    sigma_sb = sub[:, s_idx, 1]
    scale = np.maximum(np.einsum("bii->b", sigma_ss) / 2, 1.0)
    alpha = np.linalg.solve(
        sigma_ss + (1e-12 * scale)[:, None, None] * np.eye(2),
        sigma_sb[:, :, None])[:, :, 0]
    _, second = orthant_moments(sigma_ss, nodes)
    # E[b c 1] = sum_p alpha_p E[x_p c 1] over the constrained pair
    out[ok] = np.einsum("bp,bp->b", alpha, second[:, :, 1])
    return out


def relu_i4(covs, nodes: int = DEFAULT_QUAD_NODES):
    """<1{a>0} 1{b>0} relu(c) relu(d)> for a batch of 4x4 covariances."""
    covs = np.asarray(covs, dtype=float).reshape(-1, 4, 4)
    out = np.zeros(covs.shape[0])
    ok = ~_relu_degenerate(covs)
    if np.any(ok):
        _, second = orthant_moments(covs[ok], nodes)
        out[ok] = second[:, 2, 3]
    return out


# ---------------------------------------------------------------------------
# public scalar evaluators
# ---------------------------------------------------------------------------

def _entries2(c):
    return c[0, 0], c[0, 1], c[1, 1]


def i2(cov: CovBlock, activation: Activation, nodes: int = DEFAULT_QUAD_NODES) -> float:
    """Second moment <g(a) g(b)> of the two fields of `cov`."""
    c = cov.c
    if c.shape != (2, 2):
        raise DomainError("i2 requires a 2x2 covariance block")
    c11, c12, c22 = _entries2(c)
    if activation is Activation.LINEAR:
        return float(c12)
    if activation is Activation.ERF:
        if min(c11, c22) < _DEGENERATE_VAR:
            return 0.0  # erf(0) = 0 pins the product
        return float(erf_i2(c11, c12, c22))
    return float(relu_i2(c[None], nodes)[0])


def j2(cov: CovBlock, activation: Activation, nodes: int = DEFAULT_QUAD_NODES) -> float:
    """Derivative moment <g'(a) g'(b)> of the two fields of `cov`."""
    c = cov.c
    if c.shape != (2, 2):
        raise DomainError("j2 requires a 2x2 covariance block")
    c11, c12, c22 = _entries2(c)
    if activation is Activation.LINEAR:
        return 1.0
    if activation is Activation.ERF:
        return float(erf_j2(c11, c12, c22))
    return float(relu_j2(c11, c12, c22))


def i3(cov: CovBlock, activation: Activation, nodes: int = DEFAULT_QUAD_NODES) -> float:
    """<g'(a) b g(c)> with field roles ordered (a, b, c)."""
    c = cov.c
    if c.shape != (3, 3):
        raise DomainError("i3 requires a 3x3 covariance block")
    if activation is Activation.LINEAR:
        return float(c[1, 2])
    if activation is Activation.ERF:
        if c[2, 2] < _DEGENERATE_VAR or c[1, 1] < _DEGENERATE_VAR:
            return 0.0
        return float(erf_i3(c[0, 0], c[0, 1], c[0, 2], c[1, 1], c[1, 2], c[2, 2]))
    return float(relu_i3(c[None], nodes)[0])


def i4(cov: CovBlock, activation: Activation, nodes: int = DEFAULT_QUAD_NODES) -> float:
    """<g'(a) g'(b) g(c) g(d)> with field roles ordered (a, b, c, d)."""
    c = cov.c
    if c.shape != (4, 4):
        raise DomainError("i4 requires a 4x4 covariance block")
    if activation is Activation.LINEAR:
        return float(c[2, 3])
    if activation is Activation.ERF:
        if c[2, 2] < _DEGENERATE_VAR or c[3, 3] < _DEGENERATE_VAR:
            return 0.0
        return float(erf_i4(c[0, 0], c[0, 1], c[0, 2], c[0, 3],
                            c[1, 1], c[1, 2], c[1, 3],
                            c[2, 2], c[2, 3], c[3, 3]))
    return float(relu_i4(c[None], nodes)[0])


def mc_moment(kind: str, cov: CovBlock, activation: Activation,
              n_samples: int, seed: int) -> tuple[float, float]:
    """Monte Carlo oracle for the four moment kinds.

    Samples the Gaussian block through a symmetric square-root
    factorization and averages the integrand. Returns (estimate, stderr);
    deterministic for a given seed.
    """
    kind = kind.upper()
    if kind not in MOMENT_KINDS:
        raise ValueError(f"unknown moment kind {kind!r}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    c = cov.c
    if c.shape[0] != _KIND_DIM[kind]:
        raise DomainError(f"{kind} requires a {_KIND_DIM[kind]}-dimensional block")

    evals, evecs = np.linalg.eigh(c)
    if evals[0] < -DOMAIN_TOL:
        raise DomainError("covariance block is not PSD; cannot factorize")
    root = (evecs * np.sqrt(np.maximum(evals, 0.0))) @ evecs.T

    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    remaining = int(n_samples)
    while remaining > 0:
        m = min(remaining, 1 << 19)
        x = rng.standard_normal((m, c.shape[0])) @ root.T
        if kind == "I2":
            vals = activation.g(x[:, 0]) * activation.g(x[:, 1])
        elif kind == "J2":
            vals = activation.g_prime(x[:, 0]) * activation.g_prime(x[:, 1])
        elif kind == "I3":
            vals = activation.g_prime(x[:, 0]) * x[:, 1] * activation.g(x[:, 2])
        else:
            vals = (activation.g_prime(x[:, 0]) * activation.g_prime(x[:, 1])
                    * activation.g(x[:, 2]) * activation.g(x[:, 3]))
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals * vals))
        remaining -= m
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    stderr = math.sqrt(var / n_samples)
    return mean, stderr
