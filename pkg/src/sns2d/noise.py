"""Truncated cylindrical Wiener noise acting on the velocity field.

The default mode family pairs real trigonometric functions on the torus,
ordered by wavenumber, with alternating velocity components:

    g_k(x, xi) = scale * k^(-s) * rho_k(x) * psi(xi_c) * e_c,

where rho_k runs through cos/sin of kappa . x for wavevectors kappa sorted
by |kappa|^2, c alternates between the two components, and psi is 1
(additive), the identity (linear multiplicative) or sqrt(1 + s^2) per
component (nonlinear multiplicative with bounded derivative).

Wiener increments are sampled with a counter-based Philox generator keyed
by (master seed, path id) so that coarse and fine discretizations can be
coupled to the same Brownian path by summing increments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .spaces import FeField, FeSpace

_PSI_MODES = {"additive": 0, "linear_mult": 1, "nonlinear_mult": 2}


def _wavevectors(count: int) -> np.ndarray:
    """First `count` representative wavevectors, one per +/- pair,
    sorted by |kappa|^2 with a deterministic tie break."""
    reach = int(np.ceil(np.sqrt(count / 2.0))) + 2
    kappas = []
    for a in range(-reach, reach + 1):
        for b in range(-reach, reach + 1):
            if (a, b) == (0, 0):
                continue
            if a > 0 or (a == 0 and b > 0):
                kappas.append((a, b))
    kappas.sort(key=lambda ab: (ab[0] ** 2 + ab[1] ** 2, abs(ab[1]), -ab[1]))
    assert len(kappas) >= count
    return np.array(kappas[:count], dtype=np.int64)


@dataclass(frozen=True)
class NoiseModel:
    """Immutable description of a truncated noise family."""

    num_modes: int
    decay: float
    scale: float
    mode: str
    amp: np.ndarray          # (K,) amplitudes scale * k^(-s)
    kappa_x: np.ndarray      # (K,) integer wavevector components
    kappa_y: np.ndarray
    trig: np.ndarray         # (K,) 0 for cos, 1 for sin
    comp: np.ndarray         # (K,) velocity component acted on
    psi_mode: int = 0

    @property
    def is_additive(self) -> bool:
        return self.psi_mode == 0

    def psi(self, s: np.ndarray) -> np.ndarray:
        if self.psi_mode == 0:
            return np.ones_like(s)
        if self.psi_mode == 1:
            return s
        return np.sqrt(1.0 + s * s)

    def psi_prime(self, s: np.ndarray) -> np.ndarray:
        if self.psi_mode == 0:
            return np.zeros_like(s)
        if self.psi_mode == 1:
            return np.ones_like(s)
        return s / np.sqrt(1.0 + s * s)

    def psi_second(self, s: np.ndarray) -> np.ndarray:
        if self.psi_mode in (0, 1):
            return np.zeros_like(s)
        return (1.0 + s * s) ** -1.5

    def rho(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Spatial mode functions at points, (K, npts)."""
        phase = (self.kappa_x[:, None] * x[None, :]
                 + self.kappa_y[:, None] * y[None, :])
        return np.where(self.trig[:, None] == 0, np.cos(phase), np.sin(phase))

    def rho_prime_factor(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """d(rho)/d(phase) at points, (K, npts)."""
        phase = (self.kappa_x[:, None] * x[None, :]
                 + self.kappa_y[:, None] * y[None, :])
        return np.where(self.trig[:, None] == 0, -np.sin(phase), np.cos(phase))

    def g_values(self, x: np.ndarray, y: np.ndarray,
                 xi: np.ndarray | None = None) -> np.ndarray:
        """Evaluate all modes at points, (K, 2, npts).

        xi is the state argument, shape (2, npts); omit it for the additive
        family.
        """
        npts = len(x)
        rho = self.amp[:, None] * self.rho(x, y)
        out = np.zeros((self.num_modes, 2, npts))
        if xi is None:
            xi = np.zeros((2, npts))
        for c in (0, 1):
            sel = self.comp == c
            out[sel, c, :] = rho[sel] * self.psi(xi[c])[None, :]
        return out


def make_default_family(s: float = 2.0, scale: float = 1.0,
                        mode: str = "additive", num_modes: int = 16,
                        _allow_unstable: bool = False) -> NoiseModel:
    """Construct the default trigonometric mode family.

    Rejects decay exponents below 2, for which the gradient-sum growth
    condition fails for wavenumber-ordered trigonometric modes. Negative
    controls can bypass the check explicitly.
    """
    if mode not in _PSI_MODES:
        raise ValueError(f"unknown noise mode {mode!r}")
    if s < 2.0 and not _allow_unstable:
        raise ValueError(f"decay exponent s={s} < 2 violates the gradient "
                         "growth condition for trigonometric modes")
    if num_modes < 1:
        raise ValueError("need at least one mode")
    # scalar functions run cos(kap_0 . x), sin(kap_0 . x), cos(kap_1 . x), ...
    # and scalar function t feeds mode 2t (component 0) and 2t+1 (component 1)
    nscalar = (num_modes + 1) // 2
    kap = _wavevectors((nscalar + 1) // 2)
    k = np.arange(num_modes, dtype=np.int64)
    t = k // 2
    kx = kap[t // 2, 0]
    ky = kap[t // 2, 1]
    trig = t % 2
    comp = k % 2
    amp = scale * (k + 1.0) ** (-s)
    return NoiseModel(num_modes=num_modes, decay=s, scale=scale, mode=mode,
                      amp=amp, kappa_x=kx, kappa_y=ky,
                      trig=trig.astype(np.int64), comp=comp,
                      psi_mode=_PSI_MODES[mode])


# ---------------------------------------------------------------------------
# growth-condition validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    """Numeric suprema of the normalized growth-condition sums."""

    constants: dict
    doubling_change: dict
    passed: bool
    include_second_order: bool

    def __str__(self):  # pragma: no cover - cosmetic
        lines = [f"noise validation: {'PASS' if self.passed else 'FAIL'}"]
        for name, c in self.constants.items():
            lines.append(f"  {name}: c = {c:.6g}  "
                         f"(change on doubling K: "
                         f"{100 * self.doubling_change[name]:.2f}%)")
        return "\n".join(lines)


def _condition_terms(model: NoiseModel, x: np.ndarray, y: np.ndarray,
                     xi_mag: np.ndarray, include_second_order: bool) -> dict:
    """Per-mode normalized summands over the sample grid, (K, ns, nx)."""
    rho2 = model.rho(x, y) ** 2               # (K, nx)
    drho2 = model.rho_prime_factor(x, y) ** 2
    kap_sq = (model.kappa_x ** 2 + model.kappa_y ** 2).astype(float)
    a2 = model.amp ** 2
    # the state enters through a single component, so scanning scalar
    # magnitudes covers the worst case
    psi2 = model.psi(xi_mag) ** 2             # (ns,)
    dpsi2 = model.psi_prime(xi_mag) ** 2
    inv_one_plus = 1.0 / (1.0 + xi_mag ** 2)

    def outer(kx_part, xi_part):
        return kx_part[:, None, :] * xi_part[None, :, None]

    terms = {
        # sum |g_k|^2 <= c (1 + |xi|^2)
        "growth": outer(a2[:, None] * rho2, psi2 * inv_one_plus),
        # sum |grad_xi g_k|^2 <= c
        "state_gradient": outer(a2[:, None] * rho2, dpsi2),
        # sum |grad_x g_k|^2 <= c (1 + |xi|^2)
        "space_gradient": outer((a2 * kap_sq)[:, None] * drho2,
                                psi2 * inv_one_plus),
    }
    if include_second_order:
        d2psi2 = model.psi_second(xi_mag) ** 2
        terms.update({
            # sum |grad_x^2 g_k|^2 <= c (1 + |xi|^2)
            "space_hessian": outer((a2 * kap_sq ** 2)[:, None] * rho2,
                                   psi2 * inv_one_plus),
            # sum |grad_xi^2 g_k|^2 <= c / (1 + |xi|^2)
            "state_hessian": outer(a2[:, None] * rho2,
                                   d2psi2 / inv_one_plus),
            # sum |grad_x grad_xi g_k|^2 <= c
            "mixed_hessian": outer((a2 * kap_sq)[:, None] * drho2, dpsi2),
        })
    return terms


def validate_conditions(model: NoiseModel, include_second_order: bool = False,
                        x_resolution: int = 24,
                        xi_magnitudes: np.ndarray | None = None,
                        doubling_tolerance: float = 0.05) -> ValidationReport:
    """Check the linear-growth and gradient-sum conditions numerically.

    Reports the supremum of each normalized sum over a sample grid of
    (x, xi). A condition passes iff its supremum is finite and the modes
    added by doubling the truncation contribute at most
    `doubling_tolerance` of it (their per-mode suprema bound the change of
    the supremum from above, so slow divergence cannot hide behind
    misaligned maxima).
    """
    if xi_magnitudes is None:
        xi_magnitudes = np.array([0.0, 0.3, 1.0, 3.0, 10.0, 100.0, 1000.0])
    grid = np.linspace(-np.pi, np.pi, x_resolution, endpoint=False)
    xx, yy = np.meshgrid(grid, grid, indexing="ij")
    x, y = xx.ravel(), yy.ravel()

    doubled = make_default_family(model.decay, model.scale, model.mode,
                                  2 * model.num_modes, _allow_unstable=True)
    terms = _condition_terms(doubled, x, y, xi_magnitudes,
                             include_second_order)
    k = model.num_modes
    constants = {}
    change = {}
    passed = True
    for name, t in terms.items():
        total = float(np.max(np.sum(t[:k], axis=0)))
        tail = float(np.sum(np.max(t[k:], axis=(1, 2))))
        constants[name] = total
        if not np.isfinite(total):
            passed = False
            change[name] = np.inf
            continue
        change[name] = tail / max(total, 1e-300) if total > 0.0 else 0.0
        if change[name] > doubling_tolerance:
            passed = False
    return ValidationReport(constants=constants, doubling_change=change,
                            passed=passed,
                            include_second_order=include_second_order)


# ---------------------------------------------------------------------------
# Wiener paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WienerPath:
    """Matrix of Brownian increments for a truncated cylindrical process."""

    num_steps: int
    num_modes: int
    dt: float
    increments: np.ndarray     # (M, K), independent N(0, dt) entries
    master_seed: int
    path_id: int

    def brownian_values(self) -> np.ndarray:
        """Cumulative sums beta_k(t_m), (M + 1, K), starting at zero."""
        out = np.zeros((self.num_steps + 1, self.num_modes))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


def sample_path(num_steps: int, num_modes: int, master_seed: int,
                path_id: int, horizon: float = 1.0) -> WienerPath:
    """Draw a reproducible increment matrix keyed by (seed, path id).

    Uses the counter-based Philox generator, so identical keys reproduce
    identical paths with no dependence on draw history.
    """
    if num_steps < 1 or num_modes < 1:
        raise ValueError("need at least one step and one mode")
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(path_id,))
    rng = np.random.Generator(np.random.Philox(seq))
    dt = horizon / num_steps
    increments = np.sqrt(dt) * rng.standard_normal((num_steps, num_modes))
    return WienerPath(num_steps=num_steps, num_modes=num_modes, dt=dt,
                      increments=increments, master_seed=master_seed,
                      path_id=path_id)


def coarsen_path(path: WienerPath, factor: int) -> WienerPath:
    """Merge groups of `factor` consecutive increments of the same path."""
    if factor < 1:
        raise ValueError("coarsening factor must be >= 1")
    if path.num_steps % factor != 0:
        raise ValueError(
            f"coarsening factor {factor} does not divide {path.num_steps}")
    if factor == 1:
        return path
    coarse = path.increments.reshape(
        path.num_steps // factor, factor, path.num_modes).sum(axis=1)
    return WienerPath(num_steps=path.num_steps // factor,
                      num_modes=path.num_modes, dt=path.dt * factor,
                      increments=coarse, master_seed=path.master_seed,
                      path_id=path.path_id)


# ---------------------------------------------------------------------------
# forcing loads against velocity test functions
# ---------------------------------------------------------------------------


class NoiseApplier:
    """Binds a noise model to a space; additive families precompute the
    per-mode load vectors so each step reduces to one small matvec."""

    def __init__(self, model: NoiseModel, space: FeSpace):
        self.model = model
        self.space = space
        self._mode_loads = (_additive_mode_loads(model, space)
                            if model.is_additive else None)

    def load(self, u_prev: FeField, dbeta: np.ndarray) -> np.ndarray:
        if self._mode_loads is not None:
            return dbeta @ self._mode_loads
        return _noise_load_raw(self.model, self.space, u_prev, dbeta)


def _additive_mode_loads(model: NoiseModel, space: FeSpace) -> np.ndarray:
    """Per-mode load vectors int g_k . phi_i dx, (K, nvel); additive only."""
    from .assemble import quadrature_points

    tab = space.tab("velocity")
    pts = quadrature_points(space)
    rho = model.amp[:, None] * model.rho(pts[..., 0].ravel(),
                                         pts[..., 1].ravel())
    rho = rho.reshape(model.num_modes, space.mesh.num_triangles, -1)
    contrib = np.einsum("q,keq,qi->kei", space.wdet, rho, tab["val"])
    loads = np.zeros((model.num_modes, 2, tab["nscalar"]))
    for k in range(model.num_modes):
        np.add.at(loads[k, model.comp[k]], tab["dofmap"], contrib[k])
    return loads.reshape(model.num_modes, -1)


def _noise_load_raw(model: NoiseModel, space: FeSpace, u_prev: FeField,
                    dbeta: np.ndarray) -> np.ndarray:
    tab = space.tab("velocity")
    dm = tab["dofmap"]
    ux, uy = u_prev.components()
    out = kernels.noise_load(
        space.corner0[:, 0], space.corner0[:, 1], dm,
        np.ascontiguousarray(ux[dm]), np.ascontiguousarray(uy[dm]),
        tab["val"], space.qp, space.wdet, space.mesh.cell_width,
        model.amp, model.kappa_x.astype(float), model.kappa_y.astype(float),
        model.trig, model.comp, model.psi_mode, dbeta, tab["nscalar"])
    return out.ravel()


def apply_noise(model: NoiseModel, space: FeSpace, u_prev: FeField,
                dbeta: np.ndarray) -> np.ndarray:
    """Velocity load of the forcing increment sum_k g_k(., u) dbeta_k."""
    return _noise_load_raw(model, space, u_prev, dbeta)
