"""Macroscopic dynamics of the order parameters.

Implements the full coupled ODEs for (R, Q, v) driven by the Gaussian
moment integrals, fixed-step Euler/RK4 integration, the reduced
8-parameter ansatz for soft committee machines, the denoising ansatz for
both-layer training, and a numeric perturbative solver for the noisy
fixed point.

Sign convention: with the error term Delta = phi_student - phi_teacher
- noise, the SGD recursions subtract the gradient, so every drift below
carries the teacher-sum-minus-student-sum orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .activations import Activation
from .errors import DimensionError, DivergenceError, DomainError
from . import moments
from .moments import DEFAULT_QUAD_NODES
from .networks import MacroState, gen_error_analytic

BLOWUP_NORM = 1e6


@dataclass
class OdeConfig:
    """Parameters of one macroscopic integration."""

    M: int
    K: int
    activation: Activation
    eta_w: float
    eta_v: float = 0.0
    sigma: float = 0.0
    v_star: float | np.ndarray = 1.0
    T_overlap: np.ndarray | None = None  # defaults to the identity
    mode: str = "scm"  # "scm" (second layer frozen) or "both"
    integrator: str = "euler"
    d_alpha: float = 1e-3
    quad_nodes: int = DEFAULT_QUAD_NODES

    def __post_init__(self):
        self.mode = self.mode.lower()
        if self.mode not in ("scm", "both"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "scm":
            self.eta_v = 0.0
        if self.integrator.lower() not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        self.integrator = self.integrator.lower()
        if self.d_alpha <= 0:
            raise ValueError("d_alpha must be positive")

    def v_star_vector(self) -> np.ndarray:
        vs = np.asarray(self.v_star, dtype=float)
        if vs.ndim == 0:
            return np.full(self.M, float(vs))
        if vs.shape != (self.M,):
            raise DimensionError("v_star length does not match M")
        return vs

    def t_matrix(self) -> np.ndarray:
        if self.T_overlap is None:
            return np.eye(self.M)
        T = np.asarray(self.T_overlap, dtype=float)
        if T.shape != (self.M, self.M):
            raise DimensionError("T_overlap shape does not match M")
        return T


# ---------------------------------------------------------------------------
# full right-hand side
# ---------------------------------------------------------------------------

def _moment_sums_erf_linear(C, dg, e, K, activation):
    """G3[i, b] = sum_a e_a I3(i, b, a), quad[i, k] = sum_ab e_a e_b I4(i,k,a,b),
    J2[i, k], and I2row[i] = sum_a e_a I2(i, a)."""
    P = C.shape[0]
    Qd = dg[:K]
    if activation is Activation.LINEAR:
        ce = C @ e
        G3 = np.tile(ce, (K, 1))
        quad = np.full((K, K), float(e @ ce))
        J2m = np.ones((K, K))
        I2row = C[:K] @ e
        return G3, quad, J2m, I2row

    I3t = moments.erf_i3(
        Qd[:, None, None], C[:K][:, :, None], C[:K][:, None, :],
        None, C[None, :, :], dg[None, None, :])
    G3 = I3t @ e

    I4t = moments.erf_i4(
        Qd[:, None, None, None], C[:K, :K][:, :, None, None],
        C[:K][:, None, :, None], C[:K][:, None, None, :],
        Qd[None, :, None, None],
        C[:K][None, :, :, None], C[:K][None, :, None, :],
        dg[None, None, :, None], C[None, None, :, :], dg[None, None, None, :])
    quad = np.einsum("ikab,a,b->ik", I4t, e, e)

    J2m = moments.erf_j2(Qd[:, None], C[:K, :K], Qd[None, :])
    I2row = moments.erf_i2(Qd[:, None], C[:K], dg[None, :]) @ e
    return G3, quad, J2m, I2row


def _moment_sums_relu(C, dg, e, K, nodes):
    P = C.shape[0]
    Qd = dg[:K]

    cov3 = np.empty((K, P, P, 3, 3))
    cov3[..., 0, 0] = Qd[:, None, None]
    cov3[..., 0, 1] = cov3[..., 1, 0] = C[:K][:, :, None]
    cov3[..., 0, 2] = cov3[..., 2, 0] = C[:K][:, None, :]
    cov3[..., 1, 1] = dg[None, :, None]
    cov3[..., 1, 2] = cov3[..., 2, 1] = C[None, :, :]
    cov3[..., 2, 2] = dg[None, None, :]
    G3 = moments.relu_i3(cov3.reshape(-1, 3, 3), nodes).reshape(K, P, P) @ e

    cov4 = np.empty((K, K, P, P, 4, 4))
    cov4[..., 0, 0] = Qd[:, None, None, None]
    cov4[..., 1, 1] = Qd[None, :, None, None]
    cov4[..., 0, 1] = cov4[..., 1, 0] = C[:K, :K][:, :, None, None]
    cov4[..., 0, 2] = cov4[..., 2, 0] = C[:K][:, None, :, None]
    cov4[..., 0, 3] = cov4[..., 3, 0] = C[:K][:, None, None, :]
    cov4[..., 1, 2] = cov4[..., 2, 1] = C[:K][None, :, :, None]
    cov4[..., 1, 3] = cov4[..., 3, 1] = C[:K][None, :, None, :]
    cov4[..., 2, 2] = dg[None, None, :, None]
    cov4[..., 3, 3] = dg[None, None, None, :]
    cov4[..., 2, 3] = cov4[..., 3, 2] = C[None, None, :, :]
    I4t = moments.relu_i4(cov4.reshape(-1, 4, 4), nodes).reshape(K, K, P, P)
    quad = np.einsum("ikab,a,b->ik", I4t, e, e)

    J2m = moments.relu_j2(Qd[:, None], C[:K, :K], Qd[None, :])

    cov2 = np.empty((K, P, 2, 2))
    cov2[..., 0, 0] = Qd[:, None]
    cov2[..., 0, 1] = cov2[..., 1, 0] = C[:K]
    cov2[..., 1, 1] = dg[None, :]
    I2row = moments.relu_i2(cov2.reshape(-1, 2, 2), nodes).reshape(K, P) @ e
    return G3, quad, J2m, I2row


def full_rhs(m: MacroState, cfg: OdeConfig) -> MacroState:
    """Drift d(R, Q, v)/d alpha of the order parameters; dT = dv* = 0."""
    K, M = m.K, m.M
    if (K, M) != (cfg.K, cfg.M):
        raise DimensionError("state dimensions do not match the configuration")
    C = m.block_gram()
    dg = np.diag(C).copy()
    e = np.concatenate([m.v, -m.v_star])

    if cfg.activation is Activation.RELU:
        G3, quad, J2m, I2row = _moment_sums_relu(C, dg, e, K, cfg.quad_nodes)
    else:
        G3, quad, J2m, I2row = _moment_sums_erf_linear(C, dg, e, K, cfg.activation)

    eta = cfg.eta_w
    dR = -eta * m.v[:, None] * G3[:, K:]
    A = eta * m.v[:, None] * G3[:, :K]
    dQ = -(A + A.T) + eta * eta * np.outer(m.v, m.v) * (
        quad + cfg.sigma ** 2 * J2m)
    dv = np.zeros(K) if cfg.mode == "scm" else -cfg.eta_v * I2row
    return MacroState(dR, dQ, np.zeros_like(m.T), dv, np.zeros_like(m.v_star))


# ---------------------------------------------------------------------------
# fixed-step integration
# ---------------------------------------------------------------------------

@dataclass
class OdeTrajectory:
    alphas: np.ndarray
    states: list  # MacroState at each recorded alpha
    eg: np.ndarray
    diverged: bool = False

    def flat_states(self) -> np.ndarray:
        return np.array([s.flat() for s in self.states])


def integrate(rhs, initial: MacroState, cfg: OdeConfig, alpha_max: float,
              record_stride: int | None = None) -> OdeTrajectory:
    """Integrate d m / d alpha = rhs(m) with fixed-step Euler or RK4.

    Records (alpha, state, eps_g) every `record_stride` steps plus the
    endpoint. On blow-up (state norm above 1e6) or a non-finite state the
    partial trajectory is returned with `diverged` set.
    """
    n_steps = max(0, int(round(alpha_max / cfg.d_alpha)))
    if record_stride is None:
        record_stride = max(1, n_steps // 1000)
    h = cfg.d_alpha
    state = initial
    alphas, states, egs = [], [], []
    diverged = False

    def _record(alpha, s):
        alphas.append(alpha)
        states.append(s)
        egs.append(gen_error_analytic(s, cfg.activation, cfg.quad_nodes))

    for step in range(n_steps):
        if step % record_stride == 0:
            _record(step * h, state)
        if cfg.integrator == "euler":
            k1 = rhs(state)
            state = state + k1.scaled(h)
        else:
            k1 = rhs(state)
            k2 = rhs(state + k1.scaled(0.5 * h))
            k3 = rhs(state + k2.scaled(0.5 * h))
            k4 = rhs(state + k3.scaled(h))
            state = state + (k1 + (k2 + k3).scaled(2.0) + k4).scaled(h / 6.0)
        vec = state.flat()
        if not np.all(np.isfinite(vec)) or np.linalg.norm(vec) > BLOWUP_NORM:
            diverged = True
            break
    if not diverged:
        _record(n_steps * h, state)
    return OdeTrajectory(np.array(alphas), states, np.array(egs), diverged)


# ---------------------------------------------------------------------------
# reduced SCM ansatz (eight order parameters)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReducedScmState:
    """Block values of the K x K and K x M overlaps under the SCM ansatz.

    The first M student units pair up with the teacher units (diagonal
    overlap R, off-diagonal S, self-overlap Q, cross C); the L = K - M
    surplus units carry overlaps U with every teacher, D with the paired
    students, self-overlap E and mutual overlap F.
    """

    Q: float = 1.0
    C: float = 0.0
    D: float = 0.0
    E: float = 0.0
    F: float = 0.0
    R: float = 1.0
    S: float = 0.0
    U: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.Q, self.C, self.D, self.E, self.F,
                         self.R, self.S, self.U])

    @classmethod
    def from_array(cls, x) -> "ReducedScmState":
        return cls(*map(float, x))


_SCM_FIELDS = ("Q", "C", "D", "E", "F", "R", "S", "U")


def scm_active_fields(M: int, L: int) -> tuple[str, ...]:
    """Block values that actually appear in the (M, L) overlap matrices."""
    names = ["Q", "R"]
    if M >= 2:
        names += ["C", "S"]
    if L >= 1:
        names += ["D", "E", "U"]
    if L >= 2:
        names += ["F"]
    return tuple(n for n in _SCM_FIELDS if n in names)


def embed_scm(s: ReducedScmState, M: int, L: int) -> MacroState:
    """Full MacroState with the block pattern of the reduced SCM ansatz."""
    K = M + L
    R = np.full((K, M), s.S)
    np.fill_diagonal(R[:M], s.R)
    if L:
        R[M:] = s.U
    Q = np.full((K, K), s.C)
    Q[:M, M:] = Q[M:, :M] = s.D
    Q[M:, M:] = s.F
    np.fill_diagonal(Q[:M, :M], s.Q)
    np.fill_diagonal(Q[M:, M:], s.E)
    return MacroState(R, Q, np.eye(M), np.ones(K), np.ones(M))


def _read_blocks(values: np.ndarray, masks: dict, tol: float):
    out = {}
    for name, mask in masks.items():
        entries = values[mask]
        if entries.size == 0:
            out[name] = 0.0
            continue
        if np.ptp(entries) > tol:
            raise DomainError(
                f"block {name} of the derivative is not constant "
                f"(spread {np.ptp(entries):.3e}); state left the ansatz manifold")
        out[name] = float(entries[0])
    return out


def _scm_masks(M: int, L: int):
    K = M + L
    i = np.arange(K)
    eye_m = np.eye(M, dtype=bool)
    r_masks = {
        "R": np.pad(eye_m, ((0, L), (0, 0))),
        "S": np.pad(~eye_m, ((0, L), (0, 0))),
        "U": np.zeros((K, M), dtype=bool),
    }
    r_masks["U"][M:] = True
    top = i < M
    q_masks = {
        "Q": np.diag(top),
        "C": np.outer(top, top) & ~np.eye(K, dtype=bool),
        "D": np.outer(top, ~top) | np.outer(~top, top),
        "E": np.diag(~top),
        "F": np.outer(~top, ~top) & ~np.eye(K, dtype=bool),
    }
    return r_masks, q_masks


def reduced_scm_rhs(s: ReducedScmState, M: int, L: int, eta: float,
                    sigma: float, activation: Activation = Activation.ERF,
                    tol: float = 1e-8) -> ReducedScmState:
    """Drift of the eight block values, read off the full drift.

    The reduced right-hand side is assembled by embedding the block state,
    evaluating the full drift and checking that it is itself block-constant
    (the ansatz is closed under the dynamics).
    """
    cfg = OdeConfig(M=M, K=M + L, activation=activation, eta_w=eta,
                    sigma=sigma, mode="scm")
    dm = full_rhs(embed_scm(s, M, L), cfg)
    r_masks, q_masks = _scm_masks(M, L)
    blocks = _read_blocks(dm.R, r_masks, tol)
    blocks.update(_read_blocks(dm.Q, q_masks, tol))
    return ReducedScmState(**blocks)


# ---------------------------------------------------------------------------
# denoising ansatz for both-layer training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DenoisingState:
    """Block values for K = Z * M students organized in Z groups.

    Students i and teachers n interact through R when i = n (mod M) and S
    otherwise; student pairs share Q within a group (i = j mod M) and C
    across groups. All student second-layer weights share the value v.
    """

    Q: float
    C: float
    R: float
    S: float
    v: float
    Z: int = 1

    def as_array(self) -> np.ndarray:
        return np.array([self.Q, self.C, self.R, self.S, self.v])


def embed_denoising(s: DenoisingState, M: int, Z: int,
                    v_star: float = 1.0) -> MacroState:
    """Full MacroState with the group-block pattern of the denoising ansatz."""
    K = Z * M
    i = np.arange(K) % M
    n = np.arange(M)
    R = np.where(i[:, None] == n[None, :], s.R, s.S)
    Q = np.where(i[:, None] == i[None, :], s.Q, s.C)
    return MacroState(R, Q, np.eye(M), np.full(K, s.v), np.full(M, v_star))


def denoising_rhs(s: DenoisingState, M: int, Z: int, eta_w: float,
                  eta_v: float, sigma: float, v_star: float = 1.0,
                  tol: float = 1e-8) -> DenoisingState:
    """Drift of (Q, C, R, S, v) under both-layer training."""
    K = Z * M
    cfg = OdeConfig(M=M, K=K, activation=Activation.ERF, eta_w=eta_w,
                    eta_v=eta_v, sigma=sigma, v_star=v_star, mode="both")
    dm = full_rhs(embed_denoising(s, M, Z, v_star), cfg)
    i = np.arange(K) % M
    same_rn = i[:, None] == np.arange(M)[None, :]
    same_q = i[:, None] == i[None, :]
    blocks = _read_blocks(dm.R, {"R": same_rn, "S": ~same_rn}, tol)
    blocks.update(_read_blocks(dm.Q, {"Q": same_q, "C": ~same_q}, tol))
    blocks.update(_read_blocks(dm.v, {"v": np.ones(K, dtype=bool)}, tol))
    return DenoisingState(Z=Z, **blocks)


# ---------------------------------------------------------------------------
# numeric perturbative fixed point (first order in sigma^2)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReducedScm:
    """Perturbative system: erf/linear SCM under the eight-parameter ansatz."""
    M: int
    L: int
    activation: Activation = Activation.ERF


@dataclass(frozen=True)
class Denoising:
    """Perturbative system: both-layer erf network under the denoising ansatz."""
    M: int
    Z: int


@dataclass(frozen=True)
class Perceptron:
    """Perturbative system: K = M = 1 erf student, teacher self-overlap T."""
    T: float = 1.0


def _system_interface(system, eta, v_star):
    """(x0, rhs(x, sigma), eg(x)) in flat coordinates for a perturbative solve."""
    if isinstance(system, ReducedScm):
        names = scm_active_fields(system.M, system.L)
        x0 = np.array([{"Q": 1.0, "R": 1.0}.get(n, 0.0) for n in names])

        def to_state(x):
            return ReducedScmState(**dict(zip(names, x)))

        def rhs(x, sigma):
            d = reduced_scm_rhs(to_state(x), system.M, system.L, eta, sigma,
                                system.activation, tol=np.inf)
            return np.array([getattr(d, n) for n in names])

        def eg(x):
            return gen_error_analytic(
                embed_scm(to_state(x), system.M, system.L), system.activation)

        return x0, rhs, eg

    if isinstance(system, Denoising):
        names = ("Q", "R", "v") if system.M == 1 else ("Q", "C", "R", "S", "v")
        base = {"Q": 1.0, "C": 0.0, "R": 1.0, "S": 0.0, "v": v_star / system.Z}
        x0 = np.array([base[n] for n in names])

        def to_state(x):
            vals = dict(C=0.0, S=0.0, **dict(zip(names, x)))
            return DenoisingState(Z=system.Z, **vals)

        def rhs(x, sigma):
            d = denoising_rhs(to_state(x), system.M, system.Z, eta, eta,
                              sigma, v_star, tol=np.inf)
            return np.array([getattr(d, n) for n in names])

        def eg(x):
            return gen_error_analytic(
                embed_denoising(to_state(x), system.M, system.Z, v_star),
                Activation.ERF)

        return x0, rhs, eg

    if isinstance(system, Perceptron):
        T = float(system.T)
        x0 = np.array([T, T])  # (R, Q)
        cfg = OdeConfig(M=1, K=1, activation=Activation.ERF, eta_w=eta,
                        mode="scm", T_overlap=np.array([[T]]))

        def to_state(x):
            return MacroState(np.array([[x[0]]]), np.array([[x[1]]]),
                              np.array([[T]]), np.ones(1), np.ones(1))

        def rhs(x, sigma):
            d = full_rhs(to_state(x), replace(cfg, sigma=sigma))
            return np.array([d.R[0, 0], d.Q[0, 0]])

        def eg(x):
            return gen_error_analytic(to_state(x), Activation.ERF)

        return x0, rhs, eg

    raise TypeError(f"unknown perturbative system {system!r}")


def perturbative_eg(system, eta: float, sigma: float,
                    v_star: float = 1.0) -> float:
    """Asymptotic generalisation error to first order in sigma^2.

    Linearizes the reduced drift at the noiseless fixed point X0 and
    solves J X1 = -d rhs / d sigma^2 for the noise-induced shift, then
    returns sigma^2 times the directional derivative of eps_g along X1.
    """
    x0, rhs, eg = _system_interface(system, eta, v_star)
    n = x0.size

    b = rhs(x0, 1.0) - rhs(x0, 0.0)

    jac = np.empty((n, n))
    for k in range(n):
        h = 1e-6 * max(1.0, abs(x0[k]))
        xp = x0.copy(); xp[k] += h
        xm = x0.copy(); xm[k] -= h
        jac[:, k] = (rhs(xp, 0.0) - rhs(xm, 0.0)) / (2.0 * h)

    eigs = np.linalg.eigvals(jac)
    scale = np.max(np.abs(eigs))
    if np.max(eigs.real) > 1e-8 * max(scale, 1.0):
        raise DivergenceError(
            "noiseless fixed point is unstable at this learning rate "
            f"(max Jacobian eigenvalue {np.max(eigs.real):.3e})")
    # Exactly flat directions (e.g. weight redistribution between linear
    # units) are tolerated as long as the noise shift stays solvable;
    # take the minimum-norm solution in that case.
    x1 = np.linalg.lstsq(jac, -b, rcond=1e-10)[0]
    resid = float(np.linalg.norm(jac @ x1 + b))
    if resid > 1e-8 * max(float(np.linalg.norm(b)), 1e-30):
        raise DivergenceError(
            "noise shift has no solution at the linearized fixed point "
            f"(residual {resid:.3e}); learning rate at or beyond divergence")

    t = 1e-5 / max(1.0, float(np.linalg.norm(x1)))
    deriv = (eg(x0 + t * x1) - eg(x0 - t * x1)) / (2.0 * t)
    return float(sigma ** 2 * deriv)


def jacobian_condition(system, eta: float, v_star: float = 1.0) -> float:
    """Condition number of the noiseless fixed-point Jacobian."""
    x0, rhs, _ = _system_interface(system, eta, v_star)
    n = x0.size
    jac = np.empty((n, n))
    for k in range(n):
        h = 1e-6 * max(1.0, abs(x0[k]))
        xp = x0.copy(); xp[k] += h
        xm = x0.copy(); xm[k] -= h
        jac[:, k] = (rhs(xp, 0.0) - rhs(xm, 0.0)) / (2.0 * h)
    return float(np.linalg.cond(jac))
