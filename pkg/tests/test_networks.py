import numpy as np
import pytest

from committee_flow import (Activation, MacroState, NetworkParams, forward,
                            gen_error_analytic, gen_error_mc, measure_macro)
from committee_flow.errors import DimensionError, DomainError
from committee_flow.networks import embed_gram, networks_from_macro


def random_macro(rng, K, M):
    a = rng.standard_normal((K + M, K + M))
    G = a @ a.T / (K + M)
    return MacroState(G[:K, K:], G[:K, :K], G[K:, K:],
                      rng.standard_normal(K), rng.standard_normal(M))


def test_network_params_validation():
    with pytest.raises(DimensionError):
        NetworkParams(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(DimensionError):
        NetworkParams(np.zeros(5), np.zeros(1))
    with pytest.raises(DimensionError):
        NetworkParams(np.full((1, 2), np.inf), np.zeros(1))
    p = NetworkParams(np.ones((2, 4)), np.ones(2))
    assert p.hidden_units == 2 and p.input_dim == 4


def test_forward_matches_manual():
    w = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0]])
    v = np.array([1.5, -0.5])
    p = NetworkParams(w, v)
    x = np.array([2.0, 1.0, 0.0, 0.0])
    lam = w @ x / 2.0
    expected = v @ Activation.ERF.g(lam)
    assert forward(p, x, Activation.ERF) == pytest.approx(expected)


def test_measure_macro_definitions():
    rng = np.random.default_rng(0)
    N, K, M = 50, 3, 2
    student = NetworkParams(rng.standard_normal((K, N)), rng.standard_normal(K))
    teacher = NetworkParams(rng.standard_normal((M, N)), rng.standard_normal(M))
    m = measure_macro(student, teacher)
    assert np.allclose(m.R, student.first_layer @ teacher.first_layer.T / N)
    assert np.allclose(m.Q, student.first_layer @ student.first_layer.T / N)
    assert np.allclose(m.T, teacher.first_layer @ teacher.first_layer.T / N)
    m.validate()  # measured Gram blocks are PSD by construction


def test_validate_rejects_non_psd():
    m = MacroState(np.array([[2.0]]), np.array([[1.0]]), np.array([[1.0]]),
                   np.ones(1), np.ones(1))
    with pytest.raises(DomainError):
        m.validate()


def test_gen_error_zero_when_student_equals_teacher():
    rng = np.random.default_rng(1)
    N, M = 40, 3
    w = rng.standard_normal((M, N))
    v = rng.standard_normal(M)
    net = NetworkParams(w, v)
    m = measure_macro(net, net)
    for act in Activation:
        assert gen_error_analytic(m, act) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("activation", list(Activation))
def test_gen_error_analytic_matches_mc(activation):
    rng = np.random.default_rng(2)
    N, K, M = 600, 3, 2
    scale = 1.0 if activation is Activation.ERF else N ** -0.25
    student = NetworkParams(scale * rng.standard_normal((K, N)), np.ones(K))
    teacher = NetworkParams(rng.standard_normal((M, N)), np.ones(M))
    analytic = gen_error_analytic(measure_macro(student, teacher), activation)
    mc, err = gen_error_mc(student, teacher, activation, 400_000, seed=3)
    assert abs(analytic - mc) <= 5.0 * err


def test_embed_gram_exact():
    rng = np.random.default_rng(3)
    m = random_macro(rng, 3, 2)
    rows = embed_gram(m.block_gram(), 37)
    assert np.allclose(rows @ rows.T / 37, m.block_gram(), atol=1e-12)
    with pytest.raises(DimensionError):
        embed_gram(np.eye(6), 5)


def test_networks_from_macro_roundtrip():
    rng = np.random.default_rng(4)
    m = random_macro(rng, 3, 2)
    student, teacher = networks_from_macro(m, 100)
    m2 = measure_macro(student, teacher)
    for name in ("R", "Q", "T", "v", "v_star"):
        assert np.allclose(getattr(m, name), getattr(m2, name), atol=1e-10)


def test_macro_state_arithmetic():
    rng = np.random.default_rng(5)
    a, b = random_macro(rng, 2, 2), random_macro(rng, 2, 2)
    s = a + b.scaled(0.5)
    assert np.allclose(s.Q, a.Q + 0.5 * b.Q)
    assert np.allclose(s.flat(),
                       np.concatenate([s.R.ravel(), s.Q.ravel(), s.v]))
