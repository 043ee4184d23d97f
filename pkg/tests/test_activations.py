import math

import numpy as np
import pytest

from committee_flow import Activation


def test_erf_values():
    x = np.array([-1.0, 0.0, 1.0, 3.0])
    g = Activation.ERF.g(x)
    assert g[1] == 0.0
    assert g[2] == pytest.approx(math.erf(1.0 / math.sqrt(2.0)))
    assert np.all(np.abs(g) < 1.0)
    gp = Activation.ERF.g_prime(x)
    assert gp[1] == pytest.approx(math.sqrt(2.0 / math.pi))
    assert np.all(gp > 0)


def test_relu_values_and_kink():
    x = np.array([-2.0, 0.0, 3.0])
    assert np.allclose(Activation.RELU.g(x), [0.0, 0.0, 3.0])
    # derivative at the kink is defined as 0
    assert np.allclose(Activation.RELU.g_prime(x), [0.0, 0.0, 1.0])


def test_linear_identity():
    x = np.linspace(-2, 2, 7)
    assert np.allclose(Activation.LINEAR.g(x), x)
    assert np.allclose(Activation.LINEAR.g_prime(x), 1.0)


def test_erf_derivative_matches_finite_difference():
    x = np.linspace(-2.5, 2.5, 11)
    h = 1e-6
    fd = (Activation.ERF.g(x + h) - Activation.ERF.g(x - h)) / (2 * h)
    assert np.allclose(Activation.ERF.g_prime(x), fd, atol=1e-9)


def test_from_name():
    assert Activation.from_name(" Erf ") is Activation.ERF
    assert Activation.from_name("RELU") is Activation.RELU
    with pytest.raises(ValueError):
        Activation.from_name("tanh")
