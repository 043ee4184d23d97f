"""Activation functions and their derivatives.

Three activations are supported: erf-sigmoidal g(x) = erf(x / sqrt(2)),
ReLU g(x) = max(x, 0), and linear g(x) = x. The derivative of ReLU at the
kink is taken to be 0 (a measure-zero event under Gaussian inputs).
"""

from __future__ import annotations

import enum
import math

import numpy as np
from scipy.special import erf


class Activation(enum.Enum):
    ERF = "erf"
    RELU = "relu"
    LINEAR = "linear"

    def g(self, x):
        """Apply the activation elementwise."""
        x = np.asarray(x, dtype=float)
        if self is Activation.ERF:
            return erf(x / math.sqrt(2.0))
        if self is Activation.RELU:
            return np.maximum(x, 0.0)
        return x

    def g_prime(self, x):
        """Apply the activation derivative elementwise."""
        x = np.asarray(x, dtype=float)
        if self is Activation.ERF:
            return math.sqrt(2.0 / math.pi) * np.exp(-0.5 * x * x)
        if self is Activation.RELU:
            return np.where(x > 0.0, 1.0, 0.0)
        return np.ones_like(x)

    @classmethod
    def from_name(cls, name: str) -> "Activation":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown activation {name!r}; expected one of "
                             f"{[a.value for a in cls]}") from None
