"""Monte Carlo convergence experiments: coupled-path error statistics,
sample-set indicators, truncated expectations, and rate fits.

The unavailable exact solution is replaced by a reference trajectory on the
finest level driven by the same Brownian path; every reported error is
relative to that surrogate (or to the closed-form decaying vortex when the
forcing is switched off). Coarse levels reuse the reference increments by
summation, so all levels see the same Brownian motion.
"""

from __future__ import annotations

import concurrent.futures
import csv
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .assemble import OperatorSet, velocity_error_norms
from .mesh import build_uniform_mesh
from .noise import (NoiseModel, WienerPath, coarsen_path,
                    make_default_family, sample_path)
from .saddle import Projector
from .schemes import (SchemeConfig, StepError, Stepper, Trajectory,
                      energy_report, random_divfree, run_scheme, taylor_green,
                      taylor_green_exact)
from .spaces import FeField, FeSpace, lift_velocity
from .spectral import SpectralGrid, monitor_pressure_norms


# ---------------------------------------------------------------------------
# error norms and indicators
# ---------------------------------------------------------------------------


def error_norm(traj_coarse: Trajectory, traj_ref: Trajectory,
               ref_ops: OperatorSet | None = None) -> float:
    """Squared path error max_m |e_m|_L2^2 + dt sum_m |grad e_m|_L2^2.

    The reference is subsampled at the coarse time grid; coarse iterates
    are lifted into the reference space when the meshes differ.
    """
    mc = traj_coarse.num_steps
    mr = traj_ref.num_steps
    if mr % mc != 0 or abs(traj_coarse.times[-1] - traj_ref.times[-1]) > 1e-12:
        raise ValueError("incompatible time grids")
    stride = mr // mc
    ref_space = traj_ref.space
    same_space = (traj_coarse.space is ref_space
                  or (traj_coarse.space.mesh.n == ref_space.mesh.n
                      and traj_coarse.space.velocity_degree
                      == ref_space.velocity_degree))
    if ref_ops is None:
        ref_ops = OperatorSet(ref_space)
    max_l2 = 0.0
    grad_sum = 0.0
    for m in range(1, mc + 1):
        if same_space:
            coarse = traj_coarse.iterates[m]
        else:
            coarse = lift_velocity(traj_coarse.field(m), ref_space).coeffs
        e = coarse - traj_ref.iterates[m * stride]
        max_l2 = max(max_l2, ref_ops.velocity_l2_sq(e))
        grad_sum += ref_ops.velocity_h1_semi_sq(e)
    return max_l2 + traj_coarse.dt * grad_sum


def error_norm_exact(traj: Trajectory, exact_at, splits: int = 3) -> float:
    """Squared path error against a closed-form reference.

    exact_at(t) must return the pair (field callable, jacobian callable).
    """
    max_l2 = 0.0
    grad_sum = 0.0
    for m in range(1, traj.num_steps + 1):
        fn, grad_fn = exact_at(traj.times[m])
        l2, h1 = velocity_error_norms(traj.field(m), fn, grad_fn,
                                      splits=splits)
        max_l2 = max(max_l2, l2)
        grad_sum += h1
    return max_l2 + traj.dt * grad_sum


def indicator_time(traj: Trajectory, eps: float) -> bool:
    """Membership in the time sample set:
    max_m |grad u_m|^2 <= -eps log(dt)."""
    if traj.dt >= 1.0:
        raise ValueError("time indicator needs dt < 1")
    return float(np.max(traj.grad_sq)) <= -eps * np.log(traj.dt)


def indicator_space(traj_time: Trajectory, traj_fe: Trajectory, eps: float,
                    h: float) -> bool:
    """Membership in the space sample set:
    max_m (|grad u_m|^4 + |u_{h,m}|^2) <= -eps log(h), including m = 0.

    traj_time plays the role of the time-discrete solution (here the
    reference trajectory) and is subsampled at the coarse grid.
    """
    if h >= 1.0:
        raise ValueError("space indicator needs h < 1")
    mc = traj_fe.num_steps
    stride = traj_time.num_steps // mc
    if stride * mc != traj_time.num_steps:
        raise ValueError("incompatible time grids")
    grads = np.concatenate([[traj_time.grad_sq0],
                            traj_time.grad_sq[stride - 1::stride]])
    energies = np.concatenate([[traj_fe.energy0], traj_fe.energy])
    stat = float(np.max(grads ** 2 + energies))
    return stat <= -eps * np.log(h)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    max_residual: float


def fit_rates(params, errors) -> RateFit:
    """Least-squares slope of log2(error) against log2(parameter)."""
    params = np.asarray(params, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(params) < 3:
        raise ValueError("need at least three levels to fit a rate")
    if np.any(errors <= 0.0) or np.any(params <= 0.0):
        raise ValueError("rate fits need positive errors and parameters")
    x = np.log2(params)
    y = np.log2(errors)
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r_sq = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return RateFit(slope=float(slope), intercept=float(intercept),
                   r_squared=r_sq,
                   max_residual=float(np.max(np.abs(y - fitted))))


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete description of one coupled-path convergence experiment."""

    levels: tuple            # ((n, M), ...)
    reference: tuple         # (n, M)
    num_paths: int = 32
    master_seed: int = 20260801
    eps: float = 1.0
    coupling_constant: float = 1.0
    mu: float = 1.0
    horizon: float = 0.5
    convection_form: str = "skew"
    scheme: str = "txdiscr"
    reference_kind: str = "trajectory"   # trajectory | exact_taylor_green
    noise_mode: str = "additive"
    noise_scale: float = 0.05
    noise_decay: float = 2.0
    noise_modes: int = 16
    initial_kind: str = "taylor_green"   # taylor_green | random | zero
    initial_amplitude: float = 0.1
    initial_seed: int = 0
    velocity_degree: int = 2
    pressure_degree: int = 1
    spectral_oversample: int = 4
    monitor_pressure: bool = True
    workers: int = 0

    def __post_init__(self):
        object.__setattr__(self, "levels",
                           tuple((int(n), int(m)) for n, m in self.levels))
        object.__setattr__(self, "reference",
                           (int(self.reference[0]), int(self.reference[1])))
        n_ref, m_ref = self.reference
        for n, m in self.levels:
            if n > n_ref or m > m_ref:
                raise ValueError("reference level must be at least as fine "
                                 "as every tested level")
            if m_ref % m != 0:
                raise ValueError("reference steps must be a multiple of "
                                 f"every level's steps (got {m})")
            if n_ref % n != 0:
                raise ValueError("reference mesh must refine every level's "
                                 f"mesh (got {n})")
        if self.reference_kind == "exact_taylor_green":
            if self.noise_scale != 0.0 or self.initial_kind != "taylor_green":
                raise ValueError("the closed-form reference requires the "
                                 "unforced vortex configuration")

    @property
    def stochastic(self) -> bool:
        return self.noise_scale != 0.0

    @property
    def use_indicators(self) -> bool:
        return self.stochastic

    def hypothesis_warnings(self) -> list[str]:
        """Check L dt <= 1 / (-eps log h) for every level."""
        out = []
        for n, m in self.levels:
            h = np.sqrt(2.0) * 2.0 * np.pi / n
            dt = self.horizon / m
            if h >= 1.0:
                out.append(f"level ({n},{m}): h={h:.3f} >= 1, the sample-set "
                           "threshold is undefined")
            elif self.coupling_constant * dt > 1.0 / (-self.eps * np.log(h)):
                out.append(f"level ({n},{m}): L dt = "
                           f"{self.coupling_constant * dt:.4f} exceeds "
                           f"1/(-eps log h) = {1.0 / (-self.eps * np.log(h)):.4f}")
        return out


@dataclass
class LevelSummary:
    n: int
    num_steps: int
    h: float
    dt: float
    truncated_expectation: float
    truncated_stderr: float
    mean_error: float
    acceptance_fraction: float
    num_failed: int


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    levels: list                      # LevelSummary per level
    rows: list                        # per (level, path) dicts
    fits: dict                        # name -> RateFit
    warnings: list
    kernel_backend: str
    elapsed_seconds: float

    def level_values(self, key: str) -> np.ndarray:
        return np.array([getattr(s, key) for s in self.levels])


# ---------------------------------------------------------------------------
# per-path work
# ---------------------------------------------------------------------------


class _Bundle:
    """Space, operators, and steppers shared by all paths in one process."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.noise = make_default_family(
            config.noise_decay, config.noise_scale, config.noise_mode,
            config.noise_modes, _allow_unstable=True)
        self.spaces = {}
        self.ops = {}
        self.projectors = {}
        self.steppers = {}
        self.initials = {}
        self.grids = {}
        all_levels = list(config.levels)
        if config.reference_kind == "trajectory":
            all_levels.append(config.reference)
        for n, m in all_levels:
            if n not in self.spaces:
                space = FeSpace(build_uniform_mesh(n),
                                config.velocity_degree,
                                config.pressure_degree)
                self.spaces[n] = space
                self.ops[n] = OperatorSet(space)
                self.projectors[n] = Projector(self.ops[n])
                self.initials[n] = self.projectors[n].velocity(
                    self._initial_callable())
                if config.monitor_pressure:
                    self.grids[n] = SpectralGrid(
                        config.spectral_oversample * n)
            if (n, m) not in self.steppers:
                scheme_cfg = SchemeConfig(
                    mu=config.mu, horizon=config.horizon, num_steps=m,
                    convection_form=config.convection_form)
                self.steppers[(n, m)] = Stepper(
                    self.spaces[n], self.ops[n], scheme_cfg, self.noise)

    def _initial_callable(self):
        cfg = self.config
        if cfg.initial_kind == "taylor_green":
            return taylor_green(cfg.initial_amplitude)[0]
        if cfg.initial_kind == "random":
            return random_divfree(cfg.initial_amplitude,
                                  seed=cfg.initial_seed)
        if cfg.initial_kind == "zero":
            return lambda x, y: np.stack([0.0 * x, 0.0 * y])
        raise ValueError(f"unknown initial kind {self.config.initial_kind!r}")

    def run_level(self, n: int, m: int, path: WienerPath) -> Trajectory:
        stepper = self.steppers[(n, m)]
        return run_scheme(self.initials[n], path, stepper.config, self.noise,
                          which=self.config.scheme, stepper=stepper)


def _path_task(bundle: _Bundle, path_id: int) -> dict:
    config = bundle.config
    n_ref, m_ref = config.reference
    ref_path = sample_path(m_ref, config.noise_modes, config.master_seed,
                           path_id, horizon=config.horizon)
    out = {"path": path_id, "levels": [], "failed": False, "error": ""}
    try:
        ref_traj = None
        if config.reference_kind == "trajectory":
            ref_traj = bundle.run_level(n_ref, m_ref, ref_path)
        for n, m in config.levels:
            entry = {"n": n, "M": m}
            coarse = coarsen_path(ref_path, m_ref // m)
            traj = bundle.run_level(n, m, coarse)
            if config.reference_kind == "trajectory":
                entry["error"] = error_norm(traj, ref_traj,
                                            bundle.ops[n_ref])
            else:
                entry["error"] = error_norm_exact(
                    traj, lambda t: taylor_green_exact(
                        config.initial_amplitude, config.mu, t))
            if config.use_indicators:
                # thresholds are only defined below parameter 1; coarser
                # levels have empty sample sets
                entry["flag_time"] = (indicator_time(traj, config.eps)
                                      if traj.dt < 1.0 else False)
                entry["flag_space"] = (
                    indicator_space(ref_traj, traj, config.eps,
                                    traj.space.mesh.h)
                    if traj.space.mesh.h < 1.0 else False)
            else:
                entry["flag_time"] = True
                entry["flag_space"] = True
            (entry["max_energy"], entry["grad_time_integral"],
             entry["increment_sum"], entry["max_grad"]) = energy_report(traj)
            if config.monitor_pressure:
                fields = [traj.field(k) for k in range(1, m + 1)]
                d1, d2 = monitor_pressure_norms(fields, traj.dt, bundle.noise,
                                                bundle.grids[n])
                entry["pressure_det_diag"] = d1
                entry["pressure_stoch_diag"] = d2
            else:
                entry["pressure_det_diag"] = float("nan")
                entry["pressure_stoch_diag"] = float("nan")
            out["levels"].append(entry)
    except StepError as exc:
        out["failed"] = True
        out["error"] = str(exc)
    return out


_WORKER_BUNDLE: _Bundle | None = None


def _worker_init(config: ExperimentConfig) -> None:
    global _WORKER_BUNDLE
    _WORKER_BUNDLE = _Bundle(config)


def _worker_task(path_id: int) -> dict:
    return _path_task(_WORKER_BUNDLE, path_id)


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------


def run_convergence_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Run all (path, level) tasks, aggregate, and fit rates."""
    start = time.time()
    warnings = config.hypothesis_warnings()
    path_ids = list(range(config.num_paths))

    if config.workers and config.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=config.workers, initializer=_worker_init,
                initargs=(config,)) as pool:
            results = list(pool.map(_worker_task, path_ids))
    else:
        bundle = _Bundle(config)
        results = [_path_task(bundle, pid) for pid in path_ids]

    results.sort(key=lambda r: r["path"])
    failed = [r for r in results if r["failed"]]
    if len(failed) > 0.1 * config.num_paths:
        raise RuntimeError(
            f"{len(failed)} of {config.num_paths} paths failed; first "
            f"failure: {failed[0]['error']}")
    for r in failed:
        warnings.append(f"path {r['path']} failed and was excluded: "
                        f"{r['error']}")
    ok = [r for r in results if not r["failed"]]

    rows = []
    summaries = []
    for idx, (n, m) in enumerate(config.levels):
        errors = np.array([r["levels"][idx]["error"] for r in ok])
        flags = np.array([r["levels"][idx]["flag_time"]
                          and r["levels"][idx]["flag_space"] for r in ok])
        truncated = errors * flags
        summaries.append(LevelSummary(
            n=n, num_steps=m, h=float(np.sqrt(2.0) * 2.0 * np.pi / n),
            dt=config.horizon / m,
            truncated_expectation=float(np.mean(truncated)),
            truncated_stderr=(float(np.std(truncated, ddof=1)
                                    / np.sqrt(len(truncated)))
                              if len(truncated) > 1 else 0.0),
            mean_error=float(np.mean(errors)),
            acceptance_fraction=float(np.mean(flags)),
            num_failed=len(failed)))
        for r in ok:
            entry = dict(r["levels"][idx])
            entry["path"] = r["path"]
            entry["level"] = idx
            entry["h"] = summaries[-1].h
            entry["dt"] = summaries[-1].dt
            rows.append(entry)

    fits = _fit_all(config, summaries)
    return ExperimentReport(config=config, levels=summaries, rows=rows,
                            fits=fits, warnings=warnings,
                            kernel_backend=kernels.backend(),
                            elapsed_seconds=time.time() - start)


def _fit_all(config: ExperimentConfig, summaries) -> dict:
    fits = {}
    ns = {s.n for s in summaries}
    ms = {s.num_steps for s in summaries}
    usable = [s for s in summaries if s.truncated_expectation > 0.0]
    if len(usable) < 3:
        return fits
    for name, param in (("dt", [s.dt for s in usable]),
                        ("h", [s.h for s in usable])):
        varies = (len(ms) > 1) if name == "dt" else (len(ns) > 1)
        if not varies:
            continue
        errs = [s.truncated_expectation for s in usable]
        fits[f"squared_error_vs_{name}"] = fit_rates(param, errs)
        fits[f"norm_error_vs_{name}"] = fit_rates(param, np.sqrt(errs))
        means = [s.mean_error for s in usable]
        fits[f"mean_squared_error_vs_{name}"] = fit_rates(param, means)
    return fits


# ---------------------------------------------------------------------------
# persistence: flat config text, result tables, replay
# ---------------------------------------------------------------------------

_LIST_KEYS = ("levels",)
_PAIR_KEYS = ("reference",)


def config_to_text(config: ExperimentConfig) -> str:
    lines = ["# sns2d experiment configuration"]
    for key, value in asdict(config).items():
        if key in _LIST_KEYS:
            value = ",".join(f"{n}:{m}" for n, m in value)
        elif key in _PAIR_KEYS:
            value = f"{value[0]}:{value[1]}"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ExperimentConfig:
    raw = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed config line: {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        raw[key] = value
    kwargs = {}
    defaults = ExperimentConfig(levels=((4, 2),), reference=(4, 2))
    for key, default in asdict(defaults).items():
        if key not in raw:
            continue
        value = raw[key]
        if key in _LIST_KEYS:
            kwargs[key] = tuple(tuple(int(p) for p in item.split(":"))
                                for item in value.split(",") if item)
        elif key in _PAIR_KEYS:
            n, m = value.split(":")
            kwargs[key] = (int(n), int(m))
        elif isinstance(default, bool):
            kwargs[key] = value in ("True", "true", "1")
        elif isinstance(default, int):
            kwargs[key] = int(value)
        elif isinstance(default, float):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    unknown = set(raw) - set(asdict(defaults))
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**kwargs)


_ROW_FIELDS = ("level", "n", "M", "h", "dt", "path", "error", "flag_time",
               "flag_space", "max_energy", "grad_time_integral",
               "increment_sum", "max_grad", "pressure_det_diag",
               "pressure_stoch_diag")

_SUMMARY_FIELDS = ("level", "n", "M", "h", "dt", "truncated_expectation",
                   "truncated_stderr", "mean_error", "acceptance_fraction",
                   "num_failed")


def emit_outputs(report: ExperimentReport, directory: str) -> dict:
    """Write result tables, rate plot data, and the replayable config echo.

    Returns the mapping of logical name to written path.
    """
    os.makedirs(directory, exist_ok=True)
    written = {}

    path = os.path.join(directory, "results.csv")
    with open(path, "w", newline="", encoding="ascii") as f:
        writer = csv.writer(f)
        writer.writerow(_ROW_FIELDS)
        for row in report.rows:
            writer.writerow([repr(row[k]) if isinstance(row[k], float)
                             else row[k] for k in _ROW_FIELDS])
    written["results"] = path

    path = os.path.join(directory, "summary.csv")
    with open(path, "w", newline="", encoding="ascii") as f:
        writer = csv.writer(f)
        writer.writerow(_SUMMARY_FIELDS)
        for idx, s in enumerate(report.levels):
            row = {"level": idx, "n": s.n, "M": s.num_steps, "h": repr(s.h),
                   "dt": repr(s.dt),
                   "truncated_expectation": repr(s.truncated_expectation),
                   "truncated_stderr": repr(s.truncated_stderr),
                   "mean_error": repr(s.mean_error),
                   "acceptance_fraction": repr(s.acceptance_fraction),
                   "num_failed": s.num_failed}
            writer.writerow([row[k] for k in _SUMMARY_FIELDS])
    written["summary"] = path

    for name in ("dt", "h"):
        key = f"squared_error_vs_{name}"
        if key not in report.fits:
            continue
        usable = [s for s in report.levels if s.truncated_expectation > 0.0]
        path = os.path.join(directory, f"rate_{name}.txt")
        with open(path, "w", encoding="ascii") as f:
            fit = report.fits[key]
            f.write(f"# log2({name})  log2(truncated squared error); "
                    f"slope={fit.slope!r} intercept={fit.intercept!r} "
                    f"r_squared={fit.r_squared!r}\n")
            for s in usable:
                param = s.dt if name == "dt" else s.h
                f.write(f"{np.log2(param)!r} "
                        f"{np.log2(s.truncated_expectation)!r}\n")
        written[f"rate_{name}"] = path

    path = os.path.join(directory, "echo.cfg")
    with open(path, "w", encoding="ascii") as f:
        f.write(config_to_text(report.config))
        f.write(f"# kernel_backend = {report.kernel_backend}\n")
        for w in report.warnings:
            f.write(f"# warning: {w}\n")
    written["echo"] = path
    return written


def replay(echo_path: str, directory: str) -> ExperimentReport:
    """Re-run the experiment recorded in an echo file and emit outputs."""
    with open(echo_path, "r", encoding="ascii") as f:
        text = f.read()
    for line in text.splitlines():
        if line.startswith("# kernel_backend = "):
            recorded = line.rsplit("=", 1)[1].strip()
            if recorded != kernels.backend():
                raise RuntimeError(
                    f"echo file was produced with the {recorded!r} kernel "
                    f"backend but {kernels.backend()!r} is active; bitwise "
                    "replay needs the same backend")
    config = config_from_text(text)
    report = run_convergence_experiment(config)
    emit_outputs(report, directory)
    return report


# ---------------------------------------------------------------------------
# projection rate study
# ---------------------------------------------------------------------------


def projection_rate_study(mesh_sizes=(8, 16, 32, 64), velocity_degree: int = 2,
                          pressure_degree: int = 1) -> dict:
    """Convergence of both discrete projections on a smooth vortex/pressure.

    Projects v = curl(sin x sin y) and p = cos x on each mesh, measures the
    L2 and H1 errors, and fits log-log slopes.
    """
    fn, grad_fn = taylor_green(1.0)
    p_fn = lambda x, y: np.cos(x)
    rows = []
    for n in mesh_sizes:
        space = FeSpace(build_uniform_mesh(n), velocity_degree,
                        pressure_degree)
        ops = OperatorSet(space)
        proj = Projector(ops)
        vel = proj.velocity(fn)
        l2_sq, h1_sq = velocity_error_norms(vel, fn, grad_fn)
        from .assemble import pressure_error_norm

        pres = proj.pressure(p_fn)
        p_sq = pressure_error_norm(pres, p_fn)
        rows.append({"n": n, "h": space.mesh.h,
                     "velocity_l2": float(np.sqrt(l2_sq)),
                     "velocity_h1": float(np.sqrt(h1_sq)),
                     "pressure_l2": float(np.sqrt(p_sq))})
    hs = [r["h"] for r in rows]
    fits = {key: fit_rates(hs, [r[key] for r in rows])
            for key in ("velocity_l2", "velocity_h1", "pressure_l2")}
    return {"rows": rows, "fits": fits}


def write_projection_study(study: dict, directory: str) -> str:
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, "projection_rates.csv")
    with open(path, "w", newline="", encoding="ascii") as f:
        writer = csv.writer(f)
        writer.writerow(["n", "h", "velocity_l2", "velocity_h1",
                         "pressure_l2"])
        for r in study["rows"]:
            writer.writerow([r["n"], repr(r["h"]), repr(r["velocity_l2"]),
                             repr(r["velocity_h1"]), repr(r["pressure_l2"])])
        for key, fit in study["fits"].items():
            f.write(f"# slope_{key} = {fit.slope!r} "
                    f"(r_squared = {fit.r_squared!r})\n")
    return path
