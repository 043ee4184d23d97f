"""Experiment orchestration command line.

Usage: committee-flow <command> [--config FILE] [key=value ...]

Commands: simulate, ode, sweep, verify-theorem1, moments-check,
asymptotics. Parameters come from an optional plain-text config file
(key=value lines, optional [sweep] section with comma-separated lists)
and are overridden by key=value arguments; `sweep.<axis>=a,b,c` sets a
sweep axis from the command line. Every command writes CSV artifacts
plus a JSON manifest into output_dir; rerunning with the same config
and seeds reproduces the CSV bodies byte for byte (timestamps live only
in the manifest). The environment variable COMMITTEE_FLOW_THREADS caps
sweep parallelism.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import asymptotics, moments
from .activations import Activation
from .errors import CommitteeFlowError, ConfigError
from .networks import MacroState, gen_error_analytic, measure_macro
from .ode import (Denoising, OdeConfig, Perceptron, ReducedScm, full_rhs,
                  integrate, perturbative_eg)
from .simulate import (GaussianStream, TrainConfig, init_student,
                       make_teacher, run, theorem1_deviation)

COMMANDS = ("simulate", "ode", "sweep", "verify-theorem1",
            "moments-check", "asymptotics")

_MASK64 = (1 << 64) - 1


def splitmix64(master: int, index: int) -> int:
    """Per-grid-point seed: splitmix64 applied to master + index.

    The standard finalizer of the splitmix64 generator; documented here
    so sweeps can be reproduced outside this package.
    """
    z = (master + 0x9E3779B97F4A7C15 * (index + 1)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


# ---------------------------------------------------------------------------
# configuration parsing
# ---------------------------------------------------------------------------

def _int(s): return int(s)
def _float(s): return float(s)
def _str(s): return str(s)
def _ints(s): return [int(t) for t in s.split(",") if t.strip()]
def _floats(s): return [float(t) for t in s.split(",") if t.strip()]


_PARAM_TYPES = {
    "N": _int, "M": _int, "K": _int, "L": _int, "Z": _int,
    "activation": _str, "mode": _str, "integrator": _str,
    "eta": _float, "eta_w": _float, "eta_v": _float,
    "sigma": _float, "kappa": _float, "v_star": _float, "T": _float,
    "batch": _int, "steps": _int, "seed": _int,
    "alpha_max": _float, "d_alpha": _float, "quad_nodes": _int,
    "horizon": _float, "seeds": _int, "N_list": _ints,
    "n_covs": _int, "n_samples": _int, "record_stride": _int,
    "figure": _str, "output_dir": _str,
}

_SWEEP_TYPES = {"K": _ints, "eta": _floats, "sigma": _floats, "seed": _ints}


@dataclass
class ExperimentSpec:
    """A fully parsed command invocation."""

    command: str
    params: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)

    @property
    def output_dir(self) -> Path:
        return Path(self.params.get("output_dir", "out"))

    @property
    def figure(self) -> str:
        return self.params.get("figure", self.command)

    def get(self, key, default=None):
        return self.params.get(key, default)


def _set_key(spec: ExperimentSpec, section: str, key: str, value: str,
             where: str):
    if section == "sweep":
        if key not in _SWEEP_TYPES:
            raise ConfigError(f"{where}: unknown sweep axis {key!r} "
                              f"(allowed: {', '.join(_SWEEP_TYPES)})")
        try:
            vals = _SWEEP_TYPES[key](value)
        except ValueError:
            raise ConfigError(f"{where}: bad value for sweep axis {key!r}: "
                              f"{value!r}") from None
        if not vals:
            raise ConfigError(f"{where}: sweep axis {key!r} is empty")
        spec.sweep[key] = vals
        return
    if section not in ("", "run"):
        raise ConfigError(f"{where}: unknown section [{section}]")
    if key not in _PARAM_TYPES:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        spec.params[key] = _PARAM_TYPES[key](value)
    except ValueError:
        raise ConfigError(
            f"{where}: bad value for {key!r}: {value!r} "
            f"(expected {_PARAM_TYPES[key].__name__.lstrip('_')})") from None


def parse_config(text: str, command: str, overrides=()) -> ExperimentSpec:
    """Parse a key=value config file plus command-line overrides.

    Lines are `key = value`; `#` starts a comment; `[sweep]` opens the
    sweep-axis section (comma-separated lists). Overrides use the same
    syntax, with `sweep.<axis>=...` addressing the sweep section.
    Errors carry the offending line number.
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    spec = ExperimentSpec(command)
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("run", "sweep"):
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        _set_key(spec, section, key, value, f"line {lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        if key.startswith("sweep."):
            _set_key(spec, "sweep", key[len("sweep."):], value, f"override {item!r}")
        else:
            _set_key(spec, "", key, value, f"override {item!r}")
    _fill_defaults(spec)
    _validate(spec)
    return spec


def _fill_defaults(spec: ExperimentSpec):
    p = spec.params
    if "eta" in p:
        p.setdefault("eta_w", p["eta"])
        p.setdefault("eta_v", p["eta"])
    p.setdefault("eta_w", 0.1)
    p.setdefault("eta_v", p["eta_w"])
    p.setdefault("N", 784)
    p.setdefault("M", 1)
    p.setdefault("K", p["M"] + p.get("L", 0))
    p.setdefault("L", p["K"] - p["M"])
    p.setdefault("activation", "erf")
    p.setdefault("mode", "scm")
    p.setdefault("sigma", 0.0)
    p.setdefault("kappa", 0.0)
    p.setdefault("batch", 1)
    p.setdefault("seed", 0)
    p.setdefault("v_star", 1.0)
    p.setdefault("steps", 200 * p["N"])
    p.setdefault("alpha_max", p["steps"] / p["N"])
    p.setdefault("d_alpha", 1e-3)
    p.setdefault("integrator", "rk4")


def _validate(spec: ExperimentSpec):
    p = spec.params
    for key in ("N", "M", "K", "batch"):
        if p[key] < 1:
            raise ConfigError(f"{key} must be >= 1, got {p[key]}")
    if p["K"] < p["M"]:
        raise ConfigError(f"K={p['K']} must be >= M={p['M']}")
    if p["L"] != p["K"] - p["M"]:
        raise ConfigError(f"inconsistent L={p['L']} with K={p['K']}, M={p['M']}")
    Activation.from_name(p["activation"])
    if p["mode"] not in ("scm", "both"):
        raise ConfigError(f"mode must be scm or both, got {p['mode']!r}")
    if spec.command == "sweep" and not spec.sweep:
        raise ConfigError("sweep command requires at least one sweep axis")


# ---------------------------------------------------------------------------
# CSV / manifest emission
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".12g")
    return str(value)


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def write_manifest(path: Path, spec: ExperimentSpec, artifacts,
                   extra=None, failures=None):
    payload = {
        "command": spec.command,
        "figure": spec.figure,
        "parameters": spec.params,
        "sweep": spec.sweep,
        "artifacts": [str(a) for a in artifacts],
        "failures": failures or [],
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    if extra:
        payload.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _thread_cap() -> int:
    raw = os.environ.get("COMMITTEE_FLOW_THREADS")
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError(f"COMMITTEE_FLOW_THREADS={raw!r} is not an integer")
        if cap < 1:
            raise ConfigError("COMMITTEE_FLOW_THREADS must be >= 1")
        return cap
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _train_config(p: dict) -> TrainConfig:
    return TrainConfig(
        N=p["N"], M=p["M"], K=p["K"],
        activation=Activation.from_name(p["activation"]),
        eta_w=p["eta_w"], eta_v=p["eta_v"], sigma=p["sigma"],
        kappa=p["kappa"], batch=p["batch"], mode=p["mode"],
        steps=p["steps"], seed=p["seed"])


def _ode_config(p: dict) -> OdeConfig:
    return OdeConfig(
        M=p["M"], K=p["K"], activation=Activation.from_name(p["activation"]),
        eta_w=p["eta_w"], eta_v=p["eta_v"], sigma=p["sigma"],
        v_star=p["v_star"], mode=p["mode"], integrator=p["integrator"],
        d_alpha=p["d_alpha"])


def _run_point(p: dict):
    """One simulation grid point: returns (alpha_final, eg_final, eg_early_stop).

    eg_final is the time average of eps_g over the last 20% of the run
    (the stationary plateau), eg_early_stop the running minimum.
    """
    cfg = _train_config(p)
    teacher_rng = np.random.default_rng(np.random.SeedSequence([p["seed"], 1]))
    teacher = make_teacher(cfg, teacher_rng, p["v_star"])
    records = run(cfg, teacher, GaussianStream(), keep_macro=False)
    egs = np.array([r.eg for r in records])
    alphas = np.array([r.alpha for r in records])
    if not np.all(np.isfinite(egs)):
        raise CommitteeFlowError("simulation diverged (non-finite weights)")
    tail = egs[alphas >= 0.8 * alphas[-1]]
    return float(alphas[-1]), float(np.mean(tail)), float(records[-1].eg_min)


def cmd_simulate(spec: ExperimentSpec):
    p = spec.params
    cfg = _train_config(p)
    teacher_rng = np.random.default_rng(np.random.SeedSequence([p["seed"], 1]))
    teacher = make_teacher(cfg, teacher_rng, p["v_star"])
    records = run(cfg, teacher, GaussianStream(),
                  record_stride=p.get("record_stride"), keep_macro=False)
    rows = [(r.step, r.alpha, r.eg) for r in records]
    path = spec.output_dir / f"{spec.figure}.csv"
    write_csv(path, ("step", "alpha", "eg"), rows)
    write_manifest(spec.output_dir / f"{spec.figure}.manifest.json", spec, [path])
    return 0


def cmd_ode(spec: ExperimentSpec):
    p = spec.params
    cfg = _ode_config(p)
    # deterministic initial condition: the macroscopic state of a random
    # student/teacher pair at the configured N and seed
    tcfg = _train_config(p)
    ss = np.random.SeedSequence(p["seed"])
    rng_init = np.random.default_rng(ss.spawn(3)[0])
    teacher = make_teacher(tcfg, np.random.default_rng(
        np.random.SeedSequence([p["seed"], 1])), p["v_star"])
    student = init_student(tcfg, rng_init)
    state = measure_macro(student, teacher)
    traj = integrate(lambda m: full_rhs(m, cfg), state, cfg, p["alpha_max"],
                     record_stride=p.get("record_stride"))
    rows = list(zip(traj.alphas, traj.eg))
    path = spec.output_dir / f"{spec.figure}.csv"
    write_csv(path, ("alpha", "eg"), rows)
    write_manifest(spec.output_dir / f"{spec.figure}.manifest.json", spec,
                   [path], extra={"diverged": traj.diverged})
    return 0


def cmd_sweep(spec: ExperimentSpec):
    p = spec.params
    axes = {k: list(v) for k, v in spec.sweep.items()}
    names = sorted(axes)
    grids = [axes[n] for n in names]
    points = []
    shape = [len(g) for g in grids]
    total = int(np.prod(shape))
    for flat_idx in range(total):
        idx = np.unravel_index(flat_idx, shape)
        point = dict(p)
        for n, g, i in zip(names, grids, idx):
            if n == "eta":
                point["eta_w"] = point["eta_v"] = g[i]
            else:
                point[n] = g[i]
        if "seed" not in axes:
            point["seed"] = splitmix64(p["seed"], flat_idx) % (1 << 32)
        point["L"] = point["K"] - point["M"]
        points.append(point)

    rows = [None] * total
    failures = []

    def _one(i):
        return _run_point(points[i])

    with concurrent.futures.ThreadPoolExecutor(max_workers=_thread_cap()) as ex:
        futures = {ex.submit(_one, i): i for i in range(total)}
        for fut in concurrent.futures.as_completed(futures):
            i = futures[fut]
            pt = points[i]
            try:
                alpha_f, eg_f, eg_stop = fut.result()
                rows[i] = (spec.figure, pt["activation"], pt["mode"], pt["N"],
                           pt["M"], pt["K"], pt["eta_w"], pt["sigma"],
                           pt["seed"], alpha_f, eg_f, eg_stop)
            except Exception as exc:  # recorded per point, command fails at the end
                failures.append({"point": {n: pt[n] for n in
                                           ("N", "M", "K", "eta_w", "sigma", "seed")},
                                 "error": str(exc)})

    rows = [r for r in rows if r is not None]
    path = spec.output_dir / f"{spec.figure}.csv"
    write_csv(path, ("figure", "activation", "mode", "N", "M", "K", "eta",
                     "sigma", "seed", "alpha_final", "eg_final",
                     "eg_early_stop"), rows)
    write_manifest(spec.output_dir / f"{spec.figure}.manifest.json", spec,
                   [path], failures=failures)
    return 1 if failures else 0


def cmd_verify_theorem1(spec: ExperimentSpec):
    p = spec.params
    n_list = p.get("N_list")
    if not n_list or len(n_list) < 3:
        raise ConfigError("verify-theorem1 needs N_list with at least 3 values")
    seeds = p.get("seeds", 10)
    horizon = p.get("horizon", 1.0)
    cfg = _train_config(p)
    results = theorem1_deviation(cfg, n_list, horizon, seeds, per_seed=True)

    means = np.array([np.mean(devs) for _, devs in results])
    logs_n = np.log(np.array([n for n, _ in results], dtype=float))
    degenerate = bool(np.any(means <= 0))
    if degenerate:
        slope, slope_err = math.nan, math.nan
    else:
        slope = float(np.polyfit(logs_n, np.log(means), 1)[0])
        rng = np.random.default_rng(p["seed"])
        boot = []
        for _ in range(200):
            resampled = [np.mean(rng.choice(devs, size=len(devs)))
                         for _, devs in results]
            if min(resampled) <= 0:
                continue
            boot.append(np.polyfit(logs_n, np.log(resampled), 1)[0])
        slope_err = float(np.std(boot)) if boot else math.nan

    rows = [(n, float(np.mean(devs))) for n, devs in results]
    path = spec.output_dir / f"{spec.figure}.csv"
    write_csv(path, ("N", "deviation"), rows)
    write_manifest(spec.output_dir / f"{spec.figure}.manifest.json", spec,
                   [path], extra={
                       "slope": slope, "slope_bootstrap_std": slope_err,
                       "degenerate": degenerate,
                       "wide_error_bars": seeds < 3,
                   })
    label = "degenerate" if degenerate else f"{slope:.3f} +- {slope_err:.3f}"
    print(f"fitted log-log slope: {label}")
    return 0


def cmd_moments_check(spec: ExperimentSpec):
    p = spec.params
    n_covs = p.get("n_covs", 20)
    n_samples = p.get("n_samples", 200_000)
    rng = np.random.default_rng(p["seed"])
    rows = []
    worst = 0.0
    dims = {"I2": 2, "J2": 2, "I3": 3, "I4": 4}
    funcs = {"I2": moments.i2, "J2": moments.j2, "I3": moments.i3,
             "I4": moments.i4}
    for activation in Activation:
        for kind in moments.MOMENT_KINDS:
            d = dims[kind]
            for rep in range(n_covs):
                a = rng.standard_normal((d, d))
                cov = moments.CovBlock(a @ a.T / d)
                closed = funcs[kind](cov, activation)
                mc, err = moments.mc_moment(
                    kind, cov, activation, n_samples,
                    seed=int(rng.integers(1 << 31)))
                z = abs(closed - mc) / err if err > 0 else 0.0
                worst = max(worst, z)
                rows.append((activation.value, kind, rep, closed, mc, err, z))
    path = spec.output_dir / f"{spec.figure}.csv"
    write_csv(path, ("activation", "kind", "rep", "closed_form",
                     "mc_estimate", "mc_stderr", "z"), rows)
    ok = worst <= 4.0
    write_manifest(spec.output_dir / f"{spec.figure}.manifest.json", spec,
                   [path], extra={"worst_z": worst, "passed": ok})
    print(f"worst |closed - MC| / stderr = {worst:.2f} "
          f"({'OK' if ok else 'FAIL: beyond 4 stderr'})")
    return 0 if ok else 1


def cmd_asymptotics(spec: ExperimentSpec):
    p = spec.params
    eta, sigma = p["eta_w"], p["sigma"]
    M, L, K = p["M"], p["L"], p["K"]
    rows = []

    def _safe(name, fn):
        try:
            rows.append((name, fn()))
        except CommitteeFlowError as exc:
            rows.append((name, f"error: {exc}"))

    _safe("eg_scm_erf_small_eta",
          lambda: asymptotics.eg_scm_erf_small_eta(eta, sigma, M, L))
    _safe("eg_scm_linear", lambda: asymptotics.eg_scm_linear(eta, sigma, M, L))
    _safe("eg_perceptron",
          lambda: asymptotics.eg_perceptron(eta, sigma, p.get("T", 1.0)))
    _safe("eg_both_erf_m1",
          lambda: asymptotics.eg_both_erf_m1(eta, sigma, K, p["v_star"]))
    _safe("eta_max", lambda: asymptotics.eta_max(M))
    _safe("perturbative_eg_scm_erf",
          lambda: perturbative_eg(ReducedScm(M, L), eta, sigma))
    path = spec.output_dir / f"{spec.figure}.csv"
    write_csv(path, ("law", "value"), rows)
    write_manifest(spec.output_dir / f"{spec.figure}.manifest.json", spec, [path])
    for name, value in rows:
        print(f"{name}: {_fmt(value) if isinstance(value, float) else value}")
    return 0


_DISPATCH = {
    "simulate": cmd_simulate,
    "ode": cmd_ode,
    "sweep": cmd_sweep,
    "verify-theorem1": cmd_verify_theorem1,
    "moments-check": cmd_moments_check,
    "asymptotics": cmd_asymptotics,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="committee-flow",
        description="Teacher/student SGD laboratory: simulations, "
                    "order-parameter flows and asymptotic laws.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, default=None,
                        help="plain-text key=value configuration file")
    parser.add_argument("overrides", nargs="*", metavar="key=value",
                        help="parameter overrides (sweep.<axis>=a,b,c for sweeps)")
    args = parser.parse_args(argv)
    try:
        text = args.config.read_text() if args.config else ""
        spec = parse_config(text, args.command, args.overrides)
        return _DISPATCH[spec.command](spec)
    except CommitteeFlowError as exc:
        print(f"committee-flow: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
