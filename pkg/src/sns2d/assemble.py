"""Sparse operator assembly and quadrature-level field evaluation.

Mass, stiffness and divergence matrices are geometry-periodic, so their
element matrices only depend on the congruence class (lower or upper
triangle) and assembly reduces to two dense local matrices scattered over
all elements. The convection operator depends on the transport field and
is rebuilt per time step through the kernels module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import elements, kernels
from .spaces import FeField, FeSpace


@dataclass
class SparseOperator:
    """Thin wrapper pairing a scipy CSR matrix with a symmetry flag."""

    mat: sp.csr_matrix
    symmetric: bool = False

    @property
    def shape(self):
        return self.mat.shape

    def dump_coo(self, path: str) -> None:
        """Write (row, col, value) triplets as plain text."""
        coo = self.mat.tocoo()
        with open(path, "w", encoding="ascii") as f:
            f.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                f.write(f"{r} {c} {v!r}\n")


def _scatter(local: np.ndarray, rows_map: np.ndarray, cols_map: np.ndarray,
             shape) -> sp.csr_matrix:
    """Sum (nelem, nr, nc) element blocks into a global sparse matrix."""
    nelem, nr, nc = local.shape
    rows = np.repeat(rows_map[:, :, None], nc, axis=2).ravel()
    cols = np.repeat(cols_map[:, None, :], nr, axis=1).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape)
    return mat.tocsr()


def _two_class_scatter(space: FeSpace, loc0: np.ndarray, loc1: np.ndarray,
                       rows_map: np.ndarray, cols_map: np.ndarray,
                       shape) -> sp.csr_matrix:
    nelem = space.mesh.num_triangles
    local = np.empty((nelem,) + loc0.shape)
    local[0::2] = loc0
    local[1::2] = loc1
    return _scatter(local, rows_map, cols_map, shape)


def scalar_mass_matrix(space: FeSpace, role: str) -> sp.csr_matrix:
    tab = space.tab(role)
    val = tab["val"]
    loc = np.einsum("q,qi,qj->ij", space.wdet, val, val)
    dm = tab["dofmap"]
    return _two_class_scatter(space, loc, loc, dm, dm,
                              (tab["nscalar"], tab["nscalar"]))


def scalar_stiffness_matrix(space: FeSpace, role: str) -> sp.csr_matrix:
    tab = space.tab(role)
    dm = tab["dofmap"]
    locs = []
    for c in (0, 1):
        gx, gy = tab["gx"][c], tab["gy"][c]
        locs.append(np.einsum("q,qi,qj->ij", space.wdet, gx, gx)
                    + np.einsum("q,qi,qj->ij", space.wdet, gy, gy))
    return _two_class_scatter(space, locs[0], locs[1], dm, dm,
                              (tab["nscalar"], tab["nscalar"]))


def assemble_mass(space: FeSpace, kind: str) -> SparseOperator:
    """L2 mass matrix; velocity masses act blockwise on both components."""
    ms = scalar_mass_matrix(space, kind)
    if kind == "velocity":
        return SparseOperator(sp.block_diag([ms, ms], format="csr"),
                              symmetric=True)
    return SparseOperator(ms, symmetric=True)


def assemble_stiffness(space: FeSpace) -> SparseOperator:
    """Velocity gradient-gradient matrix, kernel spanned by constants."""
    ks = scalar_stiffness_matrix(space, "velocity")
    return SparseOperator(sp.block_diag([ks, ks], format="csr"),
                          symmetric=True)


def assemble_divergence(space: FeSpace) -> SparseOperator:
    """B with B[q, v] = int div(v) q dx, shape (npressure, nvelocity)."""
    vt = space.tab("velocity")
    pt = space.tab("pressure")
    blocks = []
    for comp, key in enumerate(("gx", "gy")):
        locs = [np.einsum("q,qi,qj->ij", space.wdet, pt["val"], vt[key][c])
                for c in (0, 1)]
        blocks.append(_two_class_scatter(
            space, locs[0], locs[1], pt["dofmap"], vt["dofmap"],
            (pt["nscalar"], vt["nscalar"])))
    return SparseOperator(sp.hstack(blocks, format="csr"), symmetric=False)


def assemble_convection(space: FeSpace, transport: FeField,
                        form: str = "skew") -> SparseOperator:
    """Advection operator with transport field b.

    paper_literal: C[v, w] = int ((grad v) b + (div b) v) . w dx
    skew:          C[v, w] = int ((grad v) b + (div b) v / 2) . w dx,
    which satisfies C[v, v] = 0 exactly under exact quadrature.
    """
    if form not in ("skew", "paper_literal"):
        raise ValueError(f"unknown convection form {form!r}")
    theta = 0.5 if form == "skew" else 1.0
    tab = space.tab("velocity")
    dm = tab["dofmap"]
    bx, by = transport.components()
    local = kernels.convection_element_matrices(
        np.ascontiguousarray(bx[dm]), np.ascontiguousarray(by[dm]),
        tab["val"], tab["gx"], tab["gy"], space.wdet, theta)
    # kernel blocks are [e, trial, test]; assembled rows are test dofs
    cs = _scatter(np.ascontiguousarray(np.swapaxes(local, 1, 2)), dm, dm,
                  (tab["nscalar"], tab["nscalar"]))
    return SparseOperator(sp.block_diag([cs, cs], format="csr"),
                          symmetric=False)


# ---------------------------------------------------------------------------
# quadrature-level evaluation and load functionals
# ---------------------------------------------------------------------------


def quadrature_points(space: FeSpace, qp: np.ndarray | None = None) -> np.ndarray:
    """Physical coordinates of quadrature points, (nelem, nq, 2)."""
    if qp is None:
        qp = space.qp
    pts = np.empty((space.mesh.num_triangles, len(qp), 2))
    for c in (0, 1):
        mapped = qp @ space.jac[c].T
        pts[c::2] = space.corner0[c::2, None, :] + mapped[None]
    return pts


def velocity_load(space: FeSpace, fn) -> np.ndarray:
    """Load vector l[i] = int fn(x) . phi_i dx for a vector callable."""
    tab = space.tab("velocity")
    pts = quadrature_points(space)
    vals = np.asarray(fn(pts[..., 0].ravel(), pts[..., 1].ravel()))
    vals = vals.reshape(2, space.mesh.num_triangles, -1)
    load = np.zeros((2, tab["nscalar"]))
    contrib = np.einsum("q,ceq,qi->cei", space.wdet, vals, tab["val"])
    for c in (0, 1):
        np.add.at(load[c], tab["dofmap"], contrib[c])
    return load.ravel()


def pressure_load(space: FeSpace, fn) -> np.ndarray:
    tab = space.tab("pressure")
    pts = quadrature_points(space)
    vals = np.asarray(fn(pts[..., 0].ravel(), pts[..., 1].ravel()))
    vals = vals.reshape(space.mesh.num_triangles, -1)
    load = np.zeros(tab["nscalar"])
    contrib = np.einsum("q,eq,qi->ei", space.wdet, vals, tab["val"])
    np.add.at(load, tab["dofmap"], contrib)
    return load


def velocity_error_norms(field: FeField, fn, grad_fn,
                         splits: int = 3) -> tuple[float, float]:
    """Squared L2 and H1-seminorm errors against a smooth vector field.

    Uses a composite quadrature rule on subdivided elements so that the
    measurement error sits well below the quantity being measured. grad_fn
    returns the Jacobian entries (dxu1, dyu1, dxu2, dyu2) stacked first.
    """
    space = field.space
    deg = space.velocity_degree
    qp, qw = elements.quadrature_refined(splits)
    wdet = 0.5 * qw * space.detj
    val = elements.basis_values(deg, qp)
    ref_grad = elements.basis_gradients(deg, qp)
    tab = space.tab("velocity")
    dm = tab["dofmap"]
    cx, cy = field.components()
    locx, locy = cx[dm], cy[dm]

    pts = quadrature_points(space, qp)
    x, y = pts[..., 0].ravel(), pts[..., 1].ravel()
    exact = np.asarray(fn(x, y)).reshape(2, space.mesh.num_triangles, -1)
    gexact = np.asarray(grad_fn(x, y)).reshape(4, space.mesh.num_triangles, -1)

    uh = np.stack([locx @ val.T, locy @ val.T])
    l2_sq = float(np.einsum("q,ceq->", wdet, (uh - exact) ** 2))

    h1_sq = 0.0
    for c in (0, 1):
        gphys = ref_grad @ space.jac_inv[c]
        gx, gy = gphys[..., 0], gphys[..., 1]
        dxu = np.stack([locx[c::2] @ gx.T, locy[c::2] @ gx.T])
        dyu = np.stack([locx[c::2] @ gy.T, locy[c::2] @ gy.T])
        ge = gexact[:, c::2]
        h1_sq += float(np.einsum("q,ceq->", wdet,
                                 (dxu - ge[[0, 2]]) ** 2
                                 + (dyu - ge[[1, 3]]) ** 2))
    return l2_sq, h1_sq


def pressure_error_norm(field: FeField, fn, splits: int = 3) -> float:
    """Squared L2 error of a pressure field against a smooth callable."""
    space = field.space
    deg = space.pressure_degree
    qp, qw = elements.quadrature_refined(splits)
    wdet = 0.5 * qw * space.detj
    val = elements.basis_values(deg, qp)
    tab = space.tab("pressure")
    loc = field.coeffs[tab["dofmap"]]
    pts = quadrature_points(space, qp)
    exact = np.asarray(fn(pts[..., 0].ravel(), pts[..., 1].ravel()))
    exact = exact.reshape(space.mesh.num_triangles, -1)
    ph = loc @ val.T
    return float(np.einsum("q,eq->", wdet, (ph - exact) ** 2))


# ---------------------------------------------------------------------------
# operator bundle shared by the schemes and the harness
# ---------------------------------------------------------------------------


class OperatorSet:
    """Immutable assembled operators for one space, built once and shared."""

    def __init__(self, space: FeSpace):
        self.space = space
        self.mass_v = assemble_mass(space, "velocity")
        self.mass_p = assemble_mass(space, "pressure")
        self.stiff_v = assemble_stiffness(space)
        self.div = assemble_divergence(space)
        # integrals of the pressure basis functions (zero-mean gauge vector)
        self.pressure_means = np.asarray(
            self.mass_p.mat @ np.ones(space.num_pressure_dofs))
        self.area = float(self.pressure_means.sum())

    def velocity_l2_sq(self, coeffs: np.ndarray) -> float:
        return float(coeffs @ (self.mass_v.mat @ coeffs))

    def velocity_h1_semi_sq(self, coeffs: np.ndarray) -> float:
        return float(coeffs @ (self.stiff_v.mat @ coeffs))

    def pressure_l2_sq(self, coeffs: np.ndarray) -> float:
        return float(coeffs @ (self.mass_p.mat @ coeffs))

    def pressure_mean(self, coeffs: np.ndarray) -> float:
        return float(self.pressure_means @ coeffs) / self.area
