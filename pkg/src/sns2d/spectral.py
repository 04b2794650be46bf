"""Periodic spectral calculus on the torus: inverse Laplacian, solenoidal
projection, and the split of the pressure into its convective part and the
gradient part carried by the stochastic forcing.

Fields live on a uniform N x N grid indexed [ix, iy] with
x = -pi + 2 pi ix / N; scalar fields have shape (N, N), vector fields
(2, N, N). All operators act mode by mode through the FFT and fix the mean
mode of inverted quantities to zero.
"""

from __future__ import annotations

import numpy as np

from .noise import NoiseModel
from .spaces import FeField, velocity_values


class SpectralGrid:
    """FFT workspace for one resolution."""

    def __init__(self, resolution: int):
        if resolution < 4 or resolution % 2 != 0:
            raise ValueError("spectral resolution must be even and >= 4")
        self.n = resolution
        axis = -np.pi + 2.0 * np.pi * np.arange(resolution) / resolution
        self.x, self.y = np.meshgrid(axis, axis, indexing="ij")
        k = np.fft.fftfreq(resolution, d=1.0 / resolution)
        self.kx, self.ky = np.meshgrid(k, k, indexing="ij")
        self.k_sq = self.kx ** 2 + self.ky ** 2
        self.k_sq_safe = self.k_sq.copy()
        self.k_sq_safe[0, 0] = 1.0
        self.cell_area = (2.0 * np.pi / resolution) ** 2

    def points(self) -> np.ndarray:
        return np.column_stack([self.x.ravel(), self.y.ravel()])

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(f) * self.cell_area)

    def l2_sq(self, f: np.ndarray) -> float:
        """Squared L2 norm of a scalar or vector grid field."""
        return float(np.sum(f * f) * self.cell_area)

    def gradient(self, f: np.ndarray) -> np.ndarray:
        fh = np.fft.fft2(f)
        dx = np.real(np.fft.ifft2(1j * self.kx * fh))
        dy = np.real(np.fft.ifft2(1j * self.ky * fh))
        return np.stack([dx, dy])

    def divergence(self, v: np.ndarray) -> np.ndarray:
        vh0 = np.fft.fft2(v[0])
        vh1 = np.fft.fft2(v[1])
        return np.real(np.fft.ifft2(1j * self.kx * vh0 + 1j * self.ky * vh1))

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return np.real(np.fft.ifft2(-self.k_sq * np.fft.fft2(f)))


def inv_laplacian(grid: SpectralGrid, f: np.ndarray) -> np.ndarray:
    """Solve laplace(u) = f for the zero-mean u; rejects nonzero-mean data."""
    mean = float(np.mean(f))
    scale = max(1.0, float(np.max(np.abs(f))))
    if abs(mean) > 1e-10 * scale:
        raise ValueError(f"inverse Laplacian needs zero-mean data, "
                         f"got mean {mean:.3e}")
    fh = np.fft.fft2(f)
    uh = -fh / grid.k_sq_safe
    uh[0, 0] = 0.0
    return np.real(np.fft.ifft2(uh))


def leray_project(grid: SpectralGrid, v: np.ndarray) -> np.ndarray:
    """Remove the gradient part: v - grad invlap div v, mode by mode."""
    vh0 = np.fft.fft2(v[0])
    vh1 = np.fft.fft2(v[1])
    dot = (grid.kx * vh0 + grid.ky * vh1) / grid.k_sq_safe
    out0 = vh0 - grid.kx * dot
    out1 = vh1 - grid.ky * dot
    # the mean mode carries no gradient content and passes through
    return np.stack([np.real(np.fft.ifft2(out0)),
                     np.real(np.fft.ifft2(out1))])


def pressure_det(grid: SpectralGrid, u: np.ndarray) -> np.ndarray:
    """Convective pressure component: -invlap div div (u tensor u)."""
    t00 = np.fft.fft2(u[0] * u[0])
    t01 = np.fft.fft2(u[0] * u[1])
    t11 = np.fft.fft2(u[1] * u[1])
    divdiv = -(grid.kx ** 2 * t00 + 2.0 * grid.kx * grid.ky * t01
               + grid.ky ** 2 * t11)
    ph = divdiv / grid.k_sq_safe
    ph[0, 0] = 0.0
    return np.real(np.fft.ifft2(ph))


def pressure_stoch(grid: SpectralGrid, g: np.ndarray) -> np.ndarray:
    """Gradient correction -grad invlap div g of one forcing mode."""
    gh0 = np.fft.fft2(g[0])
    gh1 = np.fft.fft2(g[1])
    dot = (grid.kx * gh0 + grid.ky * gh1) / grid.k_sq_safe
    out0 = -grid.kx * dot
    out1 = -grid.ky * dot
    return np.stack([np.real(np.fft.ifft2(out0)),
                     np.real(np.fft.ifft2(out1))])


def velocity_on_grid(field: FeField, grid: SpectralGrid) -> np.ndarray:
    """Sample a finite element velocity on the spectral grid, (2, N, N)."""
    vals = velocity_values(field, grid.points())
    n = grid.n
    return np.stack([vals[:, 0].reshape(n, n), vals[:, 1].reshape(n, n)])


def _w12_sq(grid: SpectralGrid, v: np.ndarray) -> float:
    total = grid.l2_sq(v)
    for comp in v:
        total += grid.l2_sq(grid.gradient(comp))
    return total


def monitor_pressure_norms(iterates, dt: float, model: NoiseModel,
                           grid: SpectralGrid) -> tuple[float, float]:
    """Pathwise pressure diagnostics of a sequence of velocity iterates.

    Returns
        dt * sum_m |grad pi_m|_L2^2            (convective part)
        dt * sum_m sum_k |Phi_m e_k|_W12^2     (stochastic part, truncated)

    For state-independent forcing the stochastic summand is constant in m
    and is computed once.
    """
    det_total = 0.0
    stoch_total = 0.0
    stoch_constant = None
    for field in iterates:
        u = velocity_on_grid(field, grid) if isinstance(field, FeField) else field
        pi = pressure_det(grid, u)
        det_total += grid.l2_sq(grid.gradient(pi))
        if model.is_additive:
            if stoch_constant is None:
                stoch_constant = _stoch_w12_sum(grid, model, u)
            stoch_total += stoch_constant
        else:
            stoch_total += _stoch_w12_sum(grid, model, u)
    return dt * det_total, dt * stoch_total


def _stoch_w12_sum(grid: SpectralGrid, model: NoiseModel,
                   u: np.ndarray) -> float:
    x = grid.x.ravel()
    y = grid.y.ravel()
    xi = u.reshape(2, -1)
    g_all = model.g_values(x, y, xi)
    total = 0.0
    for k in range(model.num_modes):
        gk = g_all[k].reshape(2, grid.n, grid.n)
        total += _w12_sq(grid, pressure_stoch(grid, gk))
    return total
