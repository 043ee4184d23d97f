import math

import numpy as np
import pytest

from committee_flow import Activation, CovBlock, i2, i3, i4, j2, mc_moment
from committee_flow.errors import DomainError
from committee_flow.moments import orthant_moments, orthant_prob

ERF, RELU, LIN = Activation.ERF, Activation.RELU, Activation.LINEAR


def random_block(rng, d, scale=1.0):
    a = rng.standard_normal((d, d))
    return CovBlock(scale * a @ a.T / d)


# ---------------------------------------------------------------------------
# covariance block validation
# ---------------------------------------------------------------------------

def test_covblock_rejects_bad_shapes_and_values():
    with pytest.raises(DomainError):
        CovBlock(np.eye(5))
    with pytest.raises(DomainError):
        CovBlock(np.array([[1.0, 0.5], [0.4, 1.0]]))  # asymmetric
    with pytest.raises(DomainError):
        CovBlock(np.array([[1.0, 2.0], [2.0, 1.0]]))  # not PSD
    with pytest.raises(DomainError):
        CovBlock(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_covblock_accepts_roundoff_psd():
    c = np.array([[1.0, 1.0], [1.0, 1.0 - 1e-12]])
    CovBlock(0.5 * (c + c.T))


# ---------------------------------------------------------------------------
# erf closed forms against hand-evaluated special cases
# ---------------------------------------------------------------------------

def test_erf_i2_unit_correlated():
    # c11 = c12 = c22 = 1: (2/pi) asin(1/2) = 1/3
    assert i2(CovBlock(np.ones((2, 2))), ERF) == pytest.approx(1.0 / 3.0)


def test_erf_j2_special_cases():
    assert j2(CovBlock(np.eye(2)), ERF) == pytest.approx(1.0 / math.pi)
    assert j2(CovBlock(np.ones((2, 2))), ERF) == pytest.approx(
        2.0 / (math.pi * math.sqrt(3.0)))


def test_erf_i3_i4_fully_correlated():
    # all entries 1: i3 = 1/(pi sqrt(3)), i4 = (4/pi^2) asin(1/4)/sqrt(3)
    assert i3(CovBlock(np.ones((3, 3))), ERF) == pytest.approx(
        1.0 / (math.pi * math.sqrt(3.0)))
    assert i4(CovBlock(np.ones((4, 4))), ERF) == pytest.approx(
        (4.0 / math.pi ** 2) * math.asin(0.25) / math.sqrt(3.0))


def test_linear_moments_are_covariances():
    rng = np.random.default_rng(0)
    c2, c3, c4 = (random_block(rng, d) for d in (2, 3, 4))
    assert i2(c2, LIN) == c2.c[0, 1]
    assert j2(c2, LIN) == 1.0
    assert i3(c3, LIN) == c3.c[1, 2]
    assert i4(c4, LIN) == c4.c[2, 3]


# ---------------------------------------------------------------------------
# ReLU evaluators against independent closed forms
# ---------------------------------------------------------------------------

def _arc_cosine_kernel(c11, c12, c22):
    # E[relu(a) relu(b)] for a bivariate Gaussian (independent derivation)
    s1, s2 = math.sqrt(c11), math.sqrt(c22)
    rho = min(1.0, max(-1.0, c12 / (s1 * s2)))
    theta = math.acos(rho)
    return s1 * s2 * (math.sin(theta) + (math.pi - theta) * math.cos(theta)) / (
        2.0 * math.pi)


def test_relu_i2_matches_arc_cosine_kernel():
    rng = np.random.default_rng(1)
    for _ in range(50):
        c = random_block(rng, 2, scale=rng.uniform(0.1, 4.0))
        ref = _arc_cosine_kernel(c.c[0, 0], c.c[0, 1], c.c[1, 1])
        assert i2(c, RELU) == pytest.approx(ref, abs=1e-10)


def test_relu_j2_independent():
    assert j2(CovBlock(np.eye(2)), RELU) == pytest.approx(0.25)
    assert j2(CovBlock(np.ones((2, 2))), RELU) == pytest.approx(0.5)


def test_orthant_prob_trivariate_closed_form():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((3, 3))
    c = a @ a.T / 3
    d = np.sqrt(np.diag(c))
    rho = c / np.outer(d, d)
    expected = 0.125 + (math.asin(rho[0, 1]) + math.asin(rho[0, 2])
                        + math.asin(rho[1, 2])) / (4.0 * math.pi)
    assert orthant_prob(c[None])[0] == pytest.approx(expected)


def test_orthant_moments_independent_case():
    c = np.diag([4.0, 9.0])[None]
    prob, second = orthant_moments(c)
    assert prob[0] == pytest.approx(0.25)
    # E[a b 1] = E[a 1{a>0}] E[b 1{b>0}] = (2/sqrt(2 pi)) (3/sqrt(2 pi))
    assert second[0, 0, 1] == pytest.approx(6.0 / (2.0 * math.pi))
    # E[a^2 1] = 0.5 var(a) P(b > 0)
    assert second[0, 0, 0] == pytest.approx(0.5 * 4.0 * 0.5)


# ---------------------------------------------------------------------------
# degenerate (pinned) fields
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("activation", [ERF, RELU])
def test_degenerate_variance_pins_moments_to_zero(activation):
    c2 = CovBlock(np.diag([1.0, 0.0]))
    assert i2(c2, activation) == 0.0
    c3 = np.eye(3)
    c3[2, 2] = 0.0
    assert i3(CovBlock(c3), activation) == 0.0
    c4 = np.eye(4)
    c4[2, 2] = 0.0
    assert i4(CovBlock(c4), activation) == 0.0


# ---------------------------------------------------------------------------
# node-count stability (the quadrature invariant)
# ---------------------------------------------------------------------------

def test_relu_moments_stable_under_node_doubling():
    rng = np.random.default_rng(3)
    for _ in range(20):
        c2, c3, c4 = (random_block(rng, d) for d in (2, 3, 4))
        assert abs(i2(c2, RELU, 64) - i2(c2, RELU, 128)) < 1e-8
        assert abs(i3(c3, RELU, 64) - i3(c3, RELU, 128)) < 1e-8
        assert abs(i4(c4, RELU, 64) - i4(c4, RELU, 128)) < 1e-8


# ---------------------------------------------------------------------------
# Monte Carlo oracle agreement (small-scale; full suite in acceptance)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("activation", [ERF, RELU, LIN])
@pytest.mark.parametrize("kind,dim", [("I2", 2), ("J2", 2), ("I3", 3), ("I4", 4)])
def test_moments_match_mc(activation, kind, dim):
    from committee_flow.moments import i2 as f2, i3 as f3, i4 as f4, j2 as fj
    funcs = {"I2": f2, "J2": fj, "I3": f3, "I4": f4}
    rng = np.random.default_rng(hash((kind, activation.value)) % 2 ** 31)
    for rep in range(4):
        cov = random_block(rng, dim)
        closed = funcs[kind](cov, activation)
        mc, err = mc_moment(kind, cov, activation, 200_000, seed=rep)
        assert abs(closed - mc) <= max(5.0 * err, 1e-12)


def test_mc_moment_deterministic():
    cov = CovBlock(np.eye(2))
    a = mc_moment("I2", cov, ERF, 10_000, seed=5)
    b = mc_moment("I2", cov, ERF, 10_000, seed=5)
    assert a == b


def test_dimension_mismatch_raises():
    with pytest.raises(DomainError):
        i2(CovBlock(np.eye(3)), ERF)
    with pytest.raises(DomainError):
        i3(CovBlock(np.eye(2)), ERF)
    with pytest.raises(DomainError):
        mc_moment("I4", CovBlock(np.eye(2)), ERF, 100, seed=0)
