"""Periodic Lagrange finite element spaces on the structured torus mesh.

Velocity components use continuous piecewise polynomials of degree i, the
pressure continuous piecewise polynomials of degree j (default Taylor-Hood
pair (2, 1)). All degree-d scalar unknowns live on the uniform (d n) x (d n)
lattice obtained by refining the mesh grid, so periodic dof identification
is modular arithmetic on lattice indices.

Velocity coefficient vectors are component-blocked: the first half holds the
x component, the second half the y component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import elements, kernels
from .mesh import TorusMesh


def _dof_map(mesh: TorusMesh, degree: int) -> np.ndarray:
    """(ntri, nloc) global scalar dof indices on the refined lattice."""
    g = mesh.corner_grid
    if degree == 1:
        nodes = g
    elif degree == 2:
        mids = g[:, [0, 1, 2]] + g[:, [1, 2, 0]]
        nodes = np.concatenate([2 * g, mids], axis=1)
    else:
        raise ValueError(f"unsupported polynomial degree {degree}")
    dn = degree * mesh.n
    return ((nodes[..., 1] % dn) * dn + (nodes[..., 0] % dn)).astype(np.int64)


def _lattice_coords(mesh: TorusMesh, degree: int) -> np.ndarray:
    """Physical coordinates of the degree-d scalar dof lattice, (ndof, 2)."""
    dn = degree * mesh.n
    spacing = mesh.cell_width / degree
    ids = np.arange(dn * dn)
    ix = ids % dn
    iy = ids // dn
    return np.column_stack([-np.pi + ix * spacing, -np.pi + iy * spacing])


class FeSpace:
    """Velocity/pressure pair with quadrature and geometry tables."""

    def __init__(self, mesh: TorusMesh, velocity_degree: int = 2,
                 pressure_degree: int = 1):
        if velocity_degree < 1 or pressure_degree < 1:
            raise ValueError("element degrees must be >= 1")
        self.mesh = mesh
        self.velocity_degree = velocity_degree
        self.pressure_degree = pressure_degree

        self.qp, self.qw = elements.quadrature_degree5()
        width = mesh.cell_width
        self.detj = width * width
        # rule weights sum to 1 over the reference triangle of area 1/2
        self.wdet = 0.5 * self.qw * self.detj

        # affine maps of the two congruence classes (lower, upper)
        self.jac = np.array([
            [[width, width], [0.0, width]],
            [[width, 0.0], [width, width]],
        ])
        self.jac_inv = np.array([np.linalg.inv(self.jac[0]),
                                 np.linalg.inv(self.jac[1])])

        self._tables = {}
        for deg in {velocity_degree, pressure_degree}:
            val = elements.basis_values(deg, self.qp)
            ref_grad = elements.basis_gradients(deg, self.qp)
            # physical gradient rows: ref_grad @ inv(J)
            gphys = np.stack([ref_grad @ self.jac_inv[0],
                              ref_grad @ self.jac_inv[1]])
            self._tables[deg] = {
                "val": val,
                "gx": np.ascontiguousarray(gphys[..., 0]),
                "gy": np.ascontiguousarray(gphys[..., 1]),
                "dofmap": _dof_map(mesh, deg),
                "nscalar": (deg * mesh.n) ** 2,
            }

        self.corner0 = np.ascontiguousarray(
            -np.pi + mesh.corner_grid[:, 0, :].astype(float) * width)

    # table accessors -------------------------------------------------------
    def tab(self, role: str) -> dict:
        deg = self.velocity_degree if role == "velocity" else self.pressure_degree
        return self._tables[deg]

    @property
    def num_velocity_scalar(self) -> int:
        return self._tables[self.velocity_degree]["nscalar"]

    @property
    def num_velocity_dofs(self) -> int:
        return 2 * self.num_velocity_scalar

    @property
    def num_pressure_dofs(self) -> int:
        return self._tables[self.pressure_degree]["nscalar"]

    def velocity_node_coords(self) -> np.ndarray:
        return _lattice_coords(self.mesh, self.velocity_degree)

    def pressure_node_coords(self) -> np.ndarray:
        return _lattice_coords(self.mesh, self.pressure_degree)

    def signature(self) -> str:
        return (f"torus-n{self.mesh.n}-P{self.velocity_degree}"
                f"P{self.pressure_degree}")

    def zero_velocity(self) -> "FeField":
        return FeField(self, "velocity", np.zeros(self.num_velocity_dofs))

    def zero_pressure(self) -> "FeField":
        return FeField(self, "pressure", np.zeros(self.num_pressure_dofs))


@dataclass
class FeField:
    """Coefficient vector of a velocity or pressure finite element function."""

    space: FeSpace
    kind: str
    coeffs: np.ndarray

    def __post_init__(self):
        expected = (self.space.num_velocity_dofs if self.kind == "velocity"
                    else self.space.num_pressure_dofs)
        if self.kind not in ("velocity", "pressure"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.coeffs.shape != (expected,):
            raise ValueError(
                f"{self.kind} field expects {expected} coefficients, "
                f"got shape {self.coeffs.shape}")

    def components(self) -> np.ndarray:
        """Velocity coefficients as a (2, nscalar) view."""
        if self.kind != "velocity":
            raise ValueError("components() is only defined for velocity fields")
        return self.coeffs.reshape(2, -1)

    def copy(self) -> "FeField":
        return FeField(self.space, self.kind, self.coeffs.copy())


# ---------------------------------------------------------------------------
# interpolation and point evaluation
# ---------------------------------------------------------------------------


def interpolate_velocity(space: FeSpace, fn) -> FeField:
    """Nodal interpolant of a callable fn(x, y) -> (2, npts) array."""
    coords = space.velocity_node_coords()
    vals = np.asarray(fn(coords[:, 0], coords[:, 1]))
    return FeField(space, "velocity", np.concatenate([vals[0], vals[1]]))


def interpolate_pressure(space: FeSpace, fn) -> FeField:
    coords = space.pressure_node_coords()
    return FeField(space, "pressure", np.asarray(fn(coords[:, 0], coords[:, 1])))


def velocity_values(field: FeField, pts: np.ndarray) -> np.ndarray:
    """Evaluate a velocity field at physical points, (npts, 2)."""
    space = field.space
    tab = space.tab("velocity")
    cx, cy = field.components()
    vx = kernels.eval_scalar(pts, cx, tab["dofmap"], space.mesh.n,
                             space.mesh.cell_width, space.velocity_degree)
    vy = kernels.eval_scalar(pts, cy, tab["dofmap"], space.mesh.n,
                             space.mesh.cell_width, space.velocity_degree)
    return np.column_stack([vx, vy])


def pressure_values(field: FeField, pts: np.ndarray) -> np.ndarray:
    space = field.space
    tab = space.tab("pressure")
    return kernels.eval_scalar(pts, field.coeffs, tab["dofmap"], space.mesh.n,
                               space.mesh.cell_width, space.pressure_degree)


def lift_velocity(field: FeField, fine: FeSpace) -> FeField:
    """Re-express a velocity field on a finer space of the same family.

    For nested meshes (fine n a multiple of coarse n, same element degree or
    higher) nodal evaluation reproduces the coarse function exactly.
    """
    if fine.mesh.n % field.space.mesh.n != 0:
        raise ValueError("target mesh is not a refinement of the source mesh")
    coords = fine.velocity_node_coords()
    vals = velocity_values(field, coords)
    return FeField(fine, "velocity", np.concatenate([vals[:, 0], vals[:, 1]]))
