"""Online SGD for two-layer teacher/student networks.

Inputs arrive one mini-batch at a time (fresh Gaussians, a fixed design
matrix replayed over epochs, or rows of an IDX image file); both layers
are updated from the same pre-step weights. The simulator records the
macroscopic state and generalisation error along the trajectory.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .activations import Activation
from .errors import DimensionError, IdxFormatError
from .networks import (MacroState, NetworkParams, gen_error_analytic,
                       measure_macro, networks_from_macro)

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801


@dataclass(frozen=True)
class Sample:
    """One labelled input."""

    x: np.ndarray
    y: float


@dataclass
class TrainConfig:
    """Hyperparameters of one SGD run."""

    N: int
    M: int
    K: int
    activation: Activation
    eta_w: float
    eta_v: float = 0.0
    sigma: float = 0.0
    kappa: float = 0.0
    batch: int = 1
    mode: str = "scm"  # "scm" freezes the second layer at ones
    steps: int = 0
    seed: int = 0
    init: str | NetworkParams = "default"

    def __post_init__(self):
        if min(self.N, self.M, self.K, self.batch) < 1:
            raise ValueError("N, M, K and batch must be positive")
        if self.K < self.M:
            raise ValueError("need K >= M (at least as many students as teachers)")
        self.mode = self.mode.lower()
        if self.mode not in ("scm", "both"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "scm":
            self.eta_v = 0.0
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass
class SimRecord:
    """Snapshot taken along an SGD trajectory."""

    step: int
    alpha: float
    eg: float
    macro: MacroState | None = None
    train_loss: float | None = None
    eg_min: float | None = None


# ---------------------------------------------------------------------------
# input sources
# ---------------------------------------------------------------------------

@dataclass
class GaussianStream:
    """Fresh standard-normal inputs at every step (online learning)."""

    seed: int | None = None


@dataclass
class FixedSet:
    """A finite training set replayed over epochs.

    Labels are generated once (with one realization of the output noise)
    and kept fixed; the order is reshuffled every epoch when `shuffle`.
    """

    x: np.ndarray
    y: np.ndarray
    shuffle: bool = True

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise DimensionError("FixedSet needs x with shape (P, N) and y with shape (P,)")


@dataclass
class IdxImages:
    """Inputs drawn from a standardized image matrix; labels come from the
    teacher (with fresh noise) at every visit."""

    x: np.ndarray
    shuffle: bool = True

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim != 2:
            raise DimensionError("IdxImages needs a (P, N) matrix")


def load_idx(path) -> IdxImages:
    """Read an IDX image file and standardize pixels to zero mean, unit variance.

    Only the unsigned-byte image format (magic 0x00000803) is accepted;
    label files and other type codes raise IdxFormatError.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError("file too short for an IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic == IDX_MAGIC_LABELS:
        raise IdxFormatError("got an IDX label file; images are required")
    if magic != IDX_MAGIC_IMAGES:
        raise IdxFormatError(f"bad IDX magic 0x{magic:08x}")
    n_dims = magic & 0xFF
    header = 4 + 4 * n_dims
    if len(raw) < header:
        raise IdxFormatError("truncated IDX dimension header")
    dims = struct.unpack(f">{n_dims}I", raw[4:header])
    count = dims[0]
    pixels = int(np.prod(dims[1:], dtype=np.int64))
    if len(raw) - header != count * pixels:
        raise IdxFormatError(
            f"payload size {len(raw) - header} does not match "
            f"{count} x {pixels} bytes")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header).astype(float)
    data = data.reshape(count, pixels)
    mean = data.mean()
    std = data.std()
    if std == 0:
        raise IdxFormatError("image data is constant; cannot standardize")
    return IdxImages((data - mean) / std)


def make_fixed_set(teacher: NetworkParams, activation: Activation, P: int,
                   sigma: float, seed: int, x: np.ndarray | None = None,
                   shuffle: bool = True) -> FixedSet:
    """Draw (or accept) P inputs and label them once through the teacher."""
    rng = np.random.default_rng(seed)
    N = teacher.input_dim
    if x is None:
        x = rng.standard_normal((P, N))
    else:
        x = np.asarray(x, dtype=float)
        if x.shape != (P, N):
            raise DimensionError(f"expected inputs of shape {(P, N)}, got {x.shape}")
    y = _phi(teacher, x, activation)
    if sigma > 0:
        y = y + sigma * rng.standard_normal(P)
    return FixedSet(x, y, shuffle=shuffle)


# ---------------------------------------------------------------------------
# the update rule
# ---------------------------------------------------------------------------

def _phi(params: NetworkParams, X: np.ndarray, activation: Activation) -> np.ndarray:
    lam = X @ params.first_layer.T / math.sqrt(params.input_dim)
    return activation.g(lam) @ params.second_layer


def _update(w, v, X, y, cfg: TrainConfig):
    """One mini-batch update; both layers move from the pre-step weights."""
    b = X.shape[0]
    sq_n = math.sqrt(cfg.N)
    lam = X @ w.T / sq_n                       # (b, K)
    gl = cfg.activation.g(lam)
    delta = gl @ v - y                         # (b,)
    grad = (cfg.activation.g_prime(lam) * delta[:, None]).T @ X   # (K, N)
    w_new = w - (cfg.kappa / cfg.N) * w - (cfg.eta_w / (b * sq_n)) * v[:, None] * grad
    if cfg.mode == "both":
        v_new = v - (cfg.eta_v / (b * cfg.N)) * (gl.T @ delta)
    else:
        v_new = v
    return w_new, v_new


def sgd_step(student: NetworkParams, batch, cfg: TrainConfig) -> NetworkParams:
    """Apply one SGD step for a mini-batch of labelled Samples."""
    samples = list(batch)
    X = np.stack([np.asarray(s.x, dtype=float) for s in samples])
    y = np.array([s.y for s in samples], dtype=float)
    if X.shape[1] != cfg.N:
        raise DimensionError(f"sample dimension {X.shape[1]} does not match N={cfg.N}")
    w, v = _update(student.first_layer, student.second_layer, X, y, cfg)
    return NetworkParams(w, v)


def init_student(cfg: TrainConfig, rng: np.random.Generator) -> NetworkParams:
    """Random initial student weights.

    Erf students start from unit-variance Gaussians; ReLU and linear
    students start small (weight variance 1/sqrt(N)) so that the initial
    order parameters are close to zero. In SCM mode the second layer is
    fixed at ones.
    """
    if isinstance(cfg.init, NetworkParams):
        if cfg.init.first_layer.shape != (cfg.K, cfg.N):
            raise DimensionError("explicit init has the wrong first-layer shape")
        return cfg.init
    std = 1.0 if cfg.activation is Activation.ERF else cfg.N ** -0.25
    w = std * rng.standard_normal((cfg.K, cfg.N))
    if cfg.mode == "scm":
        v = np.ones(cfg.K)
    else:
        v = std * rng.standard_normal(cfg.K)
    return NetworkParams(w, v)


def make_teacher(cfg: TrainConfig, rng: np.random.Generator,
                 v_star: float | np.ndarray = 1.0) -> NetworkParams:
    """Random teacher with i.i.d. standard-normal first-layer weights."""
    w = rng.standard_normal((cfg.M, cfg.N))
    vs = np.asarray(v_star, dtype=float)
    if vs.ndim == 0:
        vs = np.full(cfg.M, float(vs))
    return NetworkParams(w, vs)


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------

def run(cfg: TrainConfig, teacher: NetworkParams, source=None,
        record_stride: int | None = None,
        keep_macro: bool = True) -> list[SimRecord]:
    """Train a student against `teacher` and record the trajectory.

    `source` selects the input model (GaussianStream by default). Records
    are taken every `record_stride` steps (default: about 200 records per
    run) plus once at the end. If the weights become non-finite the run
    aborts with a final diagnostic record carrying eg = nan.
    """
    if teacher.input_dim != cfg.N or teacher.hidden_units != cfg.M:
        raise DimensionError("teacher shape does not match the configuration")
    if source is None:
        source = GaussianStream()
    if record_stride is None:
        record_stride = max(1, cfg.steps // 200)

    ss = np.random.SeedSequence(cfg.seed)
    rng_init, rng_data, rng_noise = (np.random.default_rng(s) for s in ss.spawn(3))
    student = init_student(cfg, rng_init)
    w = student.first_layer.copy()
    v = student.second_layer.copy()
    b = cfg.batch

    fixed = isinstance(source, (FixedSet, IdxImages))
    if isinstance(source, GaussianStream) and source.seed is not None:
        rng_data = np.random.default_rng(source.seed)
    if fixed:
        X_all = source.x
        if X_all.shape[1] != cfg.N:
            raise DimensionError("data dimension does not match N")
        P = X_all.shape[0]
        if isinstance(source, FixedSet):
            y_all = source.y
        else:
            y_all = _phi(teacher, X_all, cfg.activation)
            if cfg.sigma > 0:
                y_all = y_all + cfg.sigma * rng_noise.standard_normal(P)
        order = np.arange(P)
        pos = P  # force a (re)shuffle before the first batch

    records: list[SimRecord] = []
    eg_min = math.inf

    def _record(step):
        nonlocal eg_min
        macro = measure_macro(NetworkParams(w, v), teacher)
        eg = gen_error_analytic(macro, cfg.activation)
        eg_min = min(eg_min, eg)
        train_loss = None
        if fixed:
            diff = cfg.activation.g(X_all @ w.T / math.sqrt(cfg.N)) @ v - y_all
            train_loss = float(0.5 * np.mean(diff * diff))
        records.append(SimRecord(step, step / cfg.N, eg,
                                 macro if keep_macro else None,
                                 train_loss, eg_min))

    # fresh-input path: draw inputs in chunks to keep the loop tight
    chunk = max(1, int(2e6 // (b * cfg.N)))
    X_buf = None
    buf_pos = chunk

    for step in range(cfg.steps):
        if step % record_stride == 0:
            _record(step)
        if fixed:
            if pos + b > P:
                if source.shuffle:
                    order = rng_data.permutation(P)
                pos = 0
            idx = order[pos:pos + b]
            pos += b
            X = X_all[idx]
            y = y_all[idx]
        else:
            if buf_pos >= chunk:
                X_buf = rng_data.standard_normal((chunk, b, cfg.N))
                buf_pos = 0
            X = X_buf[buf_pos]
            buf_pos += 1
            y = _phi(teacher, X, cfg.activation)
            if cfg.sigma > 0:
                y = y + cfg.sigma * rng_noise.standard_normal(b)
        w, v = _update(w, v, X, y, cfg)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
            records.append(SimRecord(step + 1, (step + 1) / cfg.N, math.nan,
                                     None, None, eg_min))
            return records
    _record(cfg.steps)
    return records


# ---------------------------------------------------------------------------
# concentration check: simulation vs the deterministic flow
# ---------------------------------------------------------------------------

def _default_target(cfg: TrainConfig) -> MacroState:
    """A deterministic, mildly asymmetric macroscopic initial condition."""
    K, M = cfg.K, cfg.M
    R = 0.3 / (1.0 + np.add.outer(np.arange(K), np.arange(M)))
    Q = np.eye(K) + 0.05 / (1.0 + np.add.outer(np.arange(K), np.arange(K)))
    Q = 0.5 * (Q + Q.T)
    v = np.ones(K) if cfg.mode == "scm" else np.full(K, 0.5)
    return MacroState(R, Q, np.eye(M), v, np.ones(M))


def theorem1_deviation(cfg: TrainConfig, N_list, horizon: float, seeds: int,
                       target: MacroState | None = None,
                       d_alpha: float = 1e-3,
                       per_seed: bool = False) -> list:
    """Mean (over seeds) of the maximal deviation between the simulated
    order parameters and the deterministic flow, per input dimension.

    The student and teacher are built to realize the same macroscopic
    initial condition exactly at every N, so the entire deviation comes
    from the stochasticity of the trajectory. The expected scaling is
    O(1/sqrt(N)).
    """
    from .ode import OdeConfig, full_rhs, integrate

    if target is None:
        target = _default_target(cfg)
    target.validate()
    ocfg = OdeConfig(M=cfg.M, K=cfg.K, activation=cfg.activation,
                     eta_w=cfg.eta_w, eta_v=cfg.eta_v, sigma=cfg.sigma,
                     v_star=target.v_star, T_overlap=target.T,
                     mode=cfg.mode, integrator="rk4", d_alpha=d_alpha)
    traj = integrate(lambda m: full_rhs(m, ocfg), target, ocfg, horizon,
                     record_stride=1)
    flat = traj.flat_states()

    ss = np.random.SeedSequence(cfg.seed)
    out = []
    for N in N_list:
        devs = []
        for sub in ss.spawn(seeds):
            seed = int(sub.generate_state(1)[0])
            student, teacher = networks_from_macro(target, N)
            cfg_n = replace(cfg, N=N, steps=int(round(horizon * N)),
                            seed=seed, init=student)
            stride = max(1, cfg_n.steps // 200)
            recs = run(cfg_n, teacher, GaussianStream(),
                       record_stride=stride)
            worst = 0.0
            for r in recs:
                if r.macro is None:
                    continue
                ref = np.array([np.interp(r.alpha, traj.alphas, flat[:, j])
                                for j in range(flat.shape[1])])
                worst = max(worst, float(np.linalg.norm(r.macro.flat() - ref)))
            devs.append(worst)
        if per_seed:
            out.append((int(N), np.array(devs)))
        else:
            out.append((int(N), float(np.mean(devs))))
    return out


# ---------------------------------------------------------------------------
# effective single-layer update for v^T w
# ---------------------------------------------------------------------------

def balance_update(v: np.ndarray, w: np.ndarray, sample: Sample,
                   eta: float) -> np.ndarray:
    """Increment of the collapsed weight u = v^T w for a linear network.

    For a deep linear pair trained by gradient descent on one sample the
    collapsed vector moves by eta * (y - u.x) * (x ||v||^2 + w^T (w x)).
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    x = np.asarray(sample.x, dtype=float)
    u = v @ w
    err = sample.y - u @ x
    return eta * err * (x * float(v @ v) + w.T @ (w @ x))
