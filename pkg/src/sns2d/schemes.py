"""Implicit Euler time stepping for the stochastic Navier-Stokes system.

Two discretizations are provided:

  * the fully practical space-time scheme: one linear saddle solve per
    step, transport frozen at the previous iterate;
  * the time-only scheme with fully implicit transport, realized on a fine
    finite element space and solved per step by Picard sweeps.

Both advance discretely divergence-free iterates and evaluate the noise at
the previous iterate, so iterate m depends only on increments 1..m.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assemble import OperatorSet, assemble_convection
from .noise import NoiseApplier, NoiseModel, WienerPath
from .saddle import PreconditionedStepSolver, Projector, SaddleSolveError
from .spaces import FeField, FeSpace


class StepError(RuntimeError):
    """A time step failed; carries the step index."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class PicardError(RuntimeError):
    """Picard iteration missed its tolerance within the sweep budget."""

    def __init__(self, residual: float, sweeps: int):
        super().__init__(
            f"Picard iteration stalled at update norm {residual:.3e} "
            f"after {sweeps} sweeps")
        self.residual = residual
        self.sweeps = sweeps


@dataclass(frozen=True)
class SchemeConfig:
    """Time-stepping parameters; dt = horizon / num_steps."""

    mu: float
    horizon: float
    num_steps: int
    convection_form: str = "skew"
    include_convection: bool = True
    picard_tol: float = 1e-10
    picard_max_sweeps: int = 50

    def __post_init__(self):
        if self.mu <= 0.0:
            raise ValueError("viscosity must be positive")
        if self.num_steps < 1:
            raise ValueError("need at least one step")
        if self.convection_form not in ("skew", "paper_literal"):
            raise ValueError(f"unknown convection form "
                             f"{self.convection_form!r}")

    @property
    def dt(self) -> float:
        return self.horizon / self.num_steps


@dataclass
class Trajectory:
    """Iterates and per-step diagnostics of one solved path."""

    space: FeSpace
    config: SchemeConfig
    times: np.ndarray            # (M + 1,)
    iterates: np.ndarray         # (M + 1, nvel)
    pressures: np.ndarray        # (M, npres)
    energy: np.ndarray           # (M,) |u_m|_L2^2 for m = 1..M
    grad_sq: np.ndarray          # (M,) |grad u_m|_L2^2
    incr_w12_sq: np.ndarray      # (M,) |u_m - u_{m-1}|_W12^2
    div_residual: np.ndarray     # (M,) max pairing of div u_m with pressures
    energy0: float = 0.0
    grad_sq0: float = 0.0

    @property
    def num_steps(self) -> int:
        return len(self.energy)

    @property
    def dt(self) -> float:
        return self.config.dt

    def field(self, m: int) -> FeField:
        return FeField(self.space, "velocity", self.iterates[m])

    def save_checkpoint(self, path: str, step: int | None = None) -> None:
        """Binary coefficient dump with a one-line text header."""
        m = self.num_steps if step is None else step
        coeffs = self.iterates[m]
        header = (f"sns2d-checkpoint step={m} dt={self.dt!r} "
                  f"space={self.space.signature()} ndof={len(coeffs)}\n")
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            f.write(coeffs.tobytes())


def load_checkpoint(path: str) -> tuple[dict, np.ndarray]:
    """Read back a checkpoint; returns (header fields, coefficients)."""
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").strip().split()
        if header[0] != "sns2d-checkpoint":
            raise ValueError(f"{path} is not a checkpoint file")
        meta = dict(item.split("=", 1) for item in header[1:])
        coeffs = np.frombuffer(f.read(), dtype=np.float64)
    if len(coeffs) != int(meta["ndof"]):
        raise ValueError("checkpoint payload length disagrees with header")
    return meta, coeffs


class Stepper:
    """Bound solver state for advancing one scheme on one space."""

    def __init__(self, space: FeSpace, ops: OperatorSet, config: SchemeConfig,
                 noise_model: NoiseModel | None = None):
        self.space = space
        self.ops = ops
        self.config = config
        dt = config.dt
        self.frozen = (ops.mass_v.mat + config.mu * dt * ops.stiff_v.mat).tocsr()
        self.solver = PreconditionedStepSolver(self.frozen, ops.div,
                                               ops.pressure_means)
        self.applier = (NoiseApplier(noise_model, space)
                        if noise_model is not None else None)

    def _system(self, transport: FeField):
        if not self.config.include_convection:
            return self.frozen
        conv = assemble_convection(self.space, transport,
                                   self.config.convection_form)
        return self.frozen + self.config.dt * conv.mat

    def _rhs(self, u_prev: FeField, dbeta: np.ndarray | None) -> np.ndarray:
        f = self.ops.mass_v.mat @ u_prev.coeffs
        if dbeta is not None and self.applier is not None:
            f = f + self.applier.load(u_prev, dbeta)
        return f

    def step_fully_discrete(self, u_prev: FeField,
                            dbeta: np.ndarray | None) -> tuple[FeField, FeField]:
        """One linear semi-implicit step; returns iterate and pressure."""
        s_mat = self._system(u_prev)
        u, p_sys = self.solver.solve(s_mat, self._rhs(u_prev, dbeta))
        pressure = -p_sys / self.config.dt
        return (FeField(self.space, "velocity", u),
                FeField(self.space, "pressure", pressure))

    def step_time_discrete(self, u_prev: FeField,
                           dbeta: np.ndarray | None) -> tuple[FeField, FeField]:
        """One fully implicit step solved by Picard sweeps.

        Transport is frozen at the previous sweep; convergence is measured
        by the W12 norm of the update.
        """
        f = self._rhs(u_prev, dbeta)
        if not self.config.include_convection:
            u, p_sys = self.solver.solve(self.frozen, f)
            return (FeField(self.space, "velocity", u),
                    FeField(self.space, "pressure", -p_sys / self.config.dt))
        h1_mat = self.ops.mass_v.mat + self.ops.stiff_v.mat
        guess = u_prev
        update = np.inf
        for _ in range(self.config.picard_max_sweeps):
            u, p_sys = self.solver.solve(self._system(guess), f)
            d = u - guess.coeffs
            update = float(np.sqrt(d @ (h1_mat @ d)))
            guess = FeField(self.space, "velocity", u)
            if update <= self.config.picard_tol:
                return guess, FeField(self.space, "pressure",
                                      -p_sys / self.config.dt)
        raise PicardError(update, self.config.picard_max_sweeps)


def run_scheme(u0: FeField, path: WienerPath | None, config: SchemeConfig,
               noise_model: NoiseModel | None = None,
               which: str = "txdiscr", ops: OperatorSet | None = None,
               stepper: Stepper | None = None) -> Trajectory:
    """Advance M steps from u0 along one Wiener path.

    path may be None for the unforced problem; otherwise its step count and
    spacing must agree with the scheme configuration.
    """
    if which not in ("txdiscr", "tdiscr"):
        raise ValueError(f"unknown scheme {which!r}")
    space = u0.space
    if path is not None:
        if path.num_steps != config.num_steps:
            raise ValueError("path and scheme disagree on the step count")
        if not np.isclose(path.dt, config.dt, rtol=1e-12):
            raise ValueError("path and scheme disagree on the step size")
    if stepper is None:
        if ops is None:
            ops = OperatorSet(space)
        stepper = Stepper(space, ops, config, noise_model)
    ops = stepper.ops
    step = (stepper.step_fully_discrete if which == "txdiscr"
            else stepper.step_time_discrete)

    m_steps = config.num_steps
    traj = Trajectory(
        space=space, config=config,
        times=np.arange(m_steps + 1) * config.horizon / m_steps,
        iterates=np.empty((m_steps + 1, space.num_velocity_dofs)),
        pressures=np.empty((m_steps, space.num_pressure_dofs)),
        energy=np.empty(m_steps), grad_sq=np.empty(m_steps),
        incr_w12_sq=np.empty(m_steps), div_residual=np.empty(m_steps),
        energy0=ops.velocity_l2_sq(u0.coeffs),
        grad_sq0=ops.velocity_h1_semi_sq(u0.coeffs),
    )
    traj.iterates[0] = u0.coeffs
    current = u0
    for m in range(1, m_steps + 1):
        dbeta = path.increments[m - 1] if path is not None else None
        try:
            new, pressure = step(current, dbeta)
        except (SaddleSolveError, PicardError) as exc:
            raise StepError(m, str(exc)) from exc
        traj.iterates[m] = new.coeffs
        traj.pressures[m - 1] = pressure.coeffs
        d = new.coeffs - current.coeffs
        traj.energy[m - 1] = ops.velocity_l2_sq(new.coeffs)
        traj.grad_sq[m - 1] = ops.velocity_h1_semi_sq(new.coeffs)
        traj.incr_w12_sq[m - 1] = float(d @ (ops.mass_v.mat @ d)
                                        + d @ (ops.stiff_v.mat @ d))
        traj.div_residual[m - 1] = float(np.max(np.abs(ops.div.mat
                                                       @ new.coeffs)))
        current = new
    return traj


def energy_report(traj: Trajectory) -> tuple[float, float, float, float]:
    """Pathwise stability statistics over iterates m = 1..M.

    Returns (max |u_m|_L2^2, dt * sum |grad u_m|_L2^2,
             sum |u_m - u_{m-1}|_W12^2, max |grad u_m|_L2^2).
    """
    return (float(np.max(traj.energy)),
            float(traj.dt * np.sum(traj.grad_sq)),
            float(np.sum(traj.incr_w12_sq)),
            float(np.max(traj.grad_sq)))


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------


def taylor_green(amplitude: float = 1.0):
    """Stream-function vortex field a * curl(sin x sin y) and its Jacobian."""

    def fn(x, y):
        return np.stack([-amplitude * np.sin(x) * np.cos(y),
                         amplitude * np.cos(x) * np.sin(y)])

    def grad_fn(x, y):
        return np.stack([-amplitude * np.cos(x) * np.cos(y),
                         amplitude * np.sin(x) * np.sin(y),
                         -amplitude * np.sin(x) * np.sin(y),
                         amplitude * np.cos(x) * np.cos(y)])

    return fn, grad_fn


def taylor_green_exact(amplitude: float, mu: float, t: float):
    """Decayed vortex at time t; solves the unforced system exactly."""
    decay = np.exp(-2.0 * mu * t)
    return taylor_green(amplitude * decay)


def random_divfree(amplitude: float = 1.0, kmax: int = 3,
                   spectrum_slope: float = 2.0, seed: int = 0):
    """Band-limited divergence-free field with a power-law spectrum.

    Built directly from curl potentials of trigonometric modes, so it is
    pointwise divergence-free before any projection.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    modes = []
    for a in range(0, kmax + 1):
        for b in range(-kmax, kmax + 1):
            if (a, b) == (0, 0) or a < 0 or (a == 0 and b <= 0):
                continue
            k2 = a * a + b * b
            if k2 > kmax * kmax:
                continue
            weight = k2 ** (-spectrum_slope / 2.0)
            c_cos, c_sin = rng.standard_normal(2) * weight
            modes.append((a, b, c_cos, c_sin))
    if not modes:
        raise ValueError("no admissible modes below kmax")

    arr = np.array(modes)
    ka, kb, c_cos, c_sin = arr.T
    norm = amplitude / np.sqrt(np.sum(c_cos ** 2 + c_sin ** 2))
    c_cos, c_sin = c_cos * norm, c_sin * norm

    def fn(x, y):
        phase = ka[:, None] * x[None, :] + kb[:, None] * y[None, :]
        # stream function psi = sum c_cos cos + c_sin sin; u = curl psi
        dpsi = (-c_cos[:, None] * np.sin(phase)
                + c_sin[:, None] * np.cos(phase))
        ux = -np.sum(kb[:, None] * dpsi, axis=0)
        uy = np.sum(ka[:, None] * dpsi, axis=0)
        return np.stack([ux, uy])

    return fn


def project_initial(space: FeSpace, ops: OperatorSet, fn) -> FeField:
    """Discretely divergence-free projection of a callable initial field."""
    return Projector(ops).velocity(fn)
