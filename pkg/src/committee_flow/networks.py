"""Two-layer networks, order-parameter measurement and generalisation error.

A network computes phi(x) = sum_h v_h g(w_h . x / sqrt(N)). The macroscopic
state of a student/teacher pair is the overlap collection
(R, Q, T, v, v_star) with R = w w*^T / N, Q = w w^T / N, T = w* w*^T / N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .activations import Activation
from .errors import DimensionError, DomainError
from . import moments
from .moments import DEFAULT_QUAD_NODES, DOMAIN_TOL


@dataclass(frozen=True)
class NetworkParams:
    """Weights of one two-layer network (teacher or student).

    first_layer is H x N with rows w_h; second_layer has length H.
    """

    first_layer: np.ndarray
    second_layer: np.ndarray

    def __post_init__(self):
        w = np.array(self.first_layer, dtype=float)
        v = np.array(self.second_layer, dtype=float)
        if w.ndim != 2:
            raise DimensionError(f"first layer must be a matrix, got shape {w.shape}")
        if v.ndim != 1 or v.shape[0] != w.shape[0]:
            raise DimensionError(
                f"second layer length {v.shape} does not match {w.shape[0]} hidden units")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
            raise DimensionError("network weights contain non-finite entries")
        w.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "first_layer", w)
        object.__setattr__(self, "second_layer", v)

    @property
    def hidden_units(self) -> int:
        return self.first_layer.shape[0]

    @property
    def input_dim(self) -> int:
        return self.first_layer.shape[1]


@dataclass(frozen=True)
class MacroState:
    """Order parameters (R, Q, T, v, v_star) of a student/teacher pair."""

    R: np.ndarray       # K x M teacher-student overlaps
    Q: np.ndarray       # K x K student self-overlaps
    T: np.ndarray       # M x M teacher self-overlaps (constant during a run)
    v: np.ndarray       # student second layer, length K
    v_star: np.ndarray  # teacher second layer, length M

    def __post_init__(self):
        for name in ("R", "Q", "T", "v", "v_star"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        K, M = self.R.shape
        if self.Q.shape != (K, K) or self.T.shape != (M, M):
            raise DimensionError("overlap matrix shapes are inconsistent")
        if self.v.shape != (K,) or self.v_star.shape != (M,):
            raise DimensionError("second-layer vector shapes are inconsistent")

    @property
    def K(self) -> int:
        return self.R.shape[0]

    @property
    def M(self) -> int:
        return self.R.shape[1]

    def block_gram(self) -> np.ndarray:
        """The (K+M) x (K+M) Gram matrix [[Q, R], [R^T, T]]."""
        return np.block([[self.Q, self.R], [self.R.T, self.T]])

    def validate(self, sym_tol: float = 1e-12, psd_tol: float = DOMAIN_TOL):
        """Check symmetry and positive semi-definiteness of the Gram block."""
        if np.max(np.abs(self.Q - self.Q.T)) > sym_tol:
            raise DomainError("Q is not symmetric to tolerance")
        if np.max(np.abs(self.T - self.T.T)) > sym_tol:
            raise DomainError("T is not symmetric to tolerance")
        lo = np.linalg.eigvalsh(self.block_gram())[0]
        if lo < -psd_tol:
            raise DomainError(f"block Gram matrix not PSD: min eigenvalue {lo:.3e}")

    def flat(self) -> np.ndarray:
        """Time-varying components (R, Q, v) as one vector."""
        return np.concatenate([self.R.ravel(), self.Q.ravel(), self.v])

    def __add__(self, other: "MacroState") -> "MacroState":
        return MacroState(self.R + other.R, self.Q + other.Q, self.T + other.T,
                          self.v + other.v, self.v_star + other.v_star)

    def scaled(self, factor: float) -> "MacroState":
        return MacroState(factor * self.R, factor * self.Q, factor * self.T,
                          factor * self.v, factor * self.v_star)


def forward(params: NetworkParams, x: np.ndarray, activation: Activation) -> float:
    """Network output sum_h v_h g(w_h . x / sqrt(N)); no output noise."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.input_dim,):
        raise DimensionError(
            f"input length {x.shape} does not match input_dim {params.input_dim}")
    fields = params.first_layer @ x / math.sqrt(params.input_dim)
    return float(params.second_layer @ activation.g(fields))


def measure_macro(student: NetworkParams, teacher: NetworkParams) -> MacroState:
    """Order parameters of a student/teacher weight pair."""
    if student.input_dim != teacher.input_dim:
        raise DimensionError("student and teacher input dimensions differ")
    N = student.input_dim
    w, ws = student.first_layer, teacher.first_layer
    return MacroState(
        R=w @ ws.T / N,
        Q=w @ w.T / N,
        T=ws @ ws.T / N,
        v=student.second_layer.copy(),
        v_star=teacher.second_layer.copy(),
    )


def _pair_i2_matrix(G: np.ndarray, activation: Activation,
                    nodes: int = DEFAULT_QUAD_NODES) -> np.ndarray:
    """Matrix of <g(a) g(b)> over all field pairs of a joint Gram matrix."""
    d = np.diag(G)
    if activation is Activation.LINEAR:
        return G
    if activation is Activation.ERF:
        return moments.erf_i2(d[:, None], G, d[None, :])
    P = G.shape[0]
    ii, kk = np.meshgrid(np.arange(P), np.arange(P), indexing="ij")
    covs = np.stack([
        np.stack([d[ii], G[ii, kk]], axis=-1),
        np.stack([G[ii, kk], d[kk]], axis=-1),
    ], axis=-2).reshape(-1, 2, 2)
    return moments.relu_i2(covs, nodes).reshape(P, P)


def gen_error_analytic(m: MacroState, activation: Activation,
                       nodes: int = DEFAULT_QUAD_NODES) -> float:
    """Generalisation error from the order parameters alone.

    eps_g = 1/2 <(phi_student - phi_teacher)^2> evaluated through the
    pairwise second moments of the joint Gaussian local fields.
    """
    G = m.block_gram()
    e = np.concatenate([m.v, -m.v_star])
    kernel = _pair_i2_matrix(G, activation, nodes)
    return float(0.5 * e @ kernel @ e)


def gen_error_mc(student: NetworkParams, teacher: NetworkParams,
                 activation: Activation, n_samples: int,
                 seed: int) -> tuple[float, float]:
    """Monte Carlo estimate of the generalisation error over Gaussian inputs."""
    if student.input_dim != teacher.input_dim:
        raise DimensionError("student and teacher input dimensions differ")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    N = student.input_dim
    rng = np.random.default_rng(seed)
    sq_n = math.sqrt(N)
    total = 0.0
    total_sq = 0.0
    remaining = int(n_samples)
    while remaining > 0:
        b = min(remaining, max(1, int(4e6 // N)))
        x = rng.standard_normal((b, N))
        lam = x @ student.first_layer.T / sq_n
        rho = x @ teacher.first_layer.T / sq_n
        diff = (activation.g(lam) @ student.second_layer
                - activation.g(rho) @ teacher.second_layer)
        vals = 0.5 * diff * diff
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals * vals))
        remaining -= b
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    return mean, math.sqrt(var / n_samples)


def embed_gram(G: np.ndarray, N: int) -> np.ndarray:
    """Weight rows (P x N) whose Gram matrix w w^T / N equals G exactly.

    Used to realize a prescribed macroscopic state at any input dimension
    N >= P (Gram-factor construction): rows are sqrt(N) times a symmetric
    square root of G placed on the first P coordinates.
    """
    G = np.asarray(G, dtype=float)
    P = G.shape[0]
    if N < P:
        raise DimensionError(f"need N >= {P} to embed a {P}-field Gram matrix")
    evals, evecs = np.linalg.eigh(0.5 * (G + G.T))
    if evals[0] < -DOMAIN_TOL:
        raise DomainError("target Gram matrix is not PSD")
    root = (evecs * np.sqrt(np.maximum(evals, 0.0))) @ evecs.T
    out = np.zeros((P, N))
    out[:, :P] = math.sqrt(N) * root
    return out


def networks_from_macro(m: MacroState, N: int) -> tuple[NetworkParams, NetworkParams]:
    """Student/teacher weights at input dimension N realizing `m` exactly."""
    rows = embed_gram(m.block_gram(), N)
    student = NetworkParams(rows[:m.K], m.v)
    teacher = NetworkParams(rows[m.K:], m.v_star)
    return student, teacher
