"""Saddle-point solves, discrete projections, and inf-sup verification.

The velocity-pressure systems solved here have the block form

    [ A   B^T  0 ] [u]   [f]
    [ B   0    m ] [p] = [g]
    [ 0   m^T  0 ] [c]   [0]

where m holds the integrals of the pressure basis functions. The scalar
multiplier c pins the zero-mean pressure gauge and absorbs any component of
g along the constant-pressure kernel; for compatible data it vanishes.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assemble import OperatorSet, SparseOperator, velocity_load
from .spaces import FeField, FeSpace


class SaddleSolveError(RuntimeError):
    """Raised when a saddle solve misses its residual contract."""


def _matrix(op) -> sp.csr_matrix:
    return op.mat if isinstance(op, SparseOperator) else op


class SaddleSolver:
    """Direct factorization of one gauged saddle-point matrix, reusable."""

    def __init__(self, a_block, b_block, gauge: np.ndarray,
                 rel_tol: float = 1e-10):
        a = _matrix(a_block).tocsr()
        b = _matrix(b_block).tocsr()
        self.a = a
        self.b = b
        self.nu = a.shape[0]
        self.np = b.shape[0]
        self.rel_tol = rel_tol
        gauge_col = sp.csr_matrix(gauge.reshape(-1, 1))
        self.system = sp.bmat([
            [a, b.T, None],
            [b, None, gauge_col],
            [None, gauge_col.T, None],
        ], format="csc")
        # The saddle pattern is structurally symmetric, so this ordering cuts
        # the fill of the default COLAMD by an order of magnitude. Relaxed
        # pivoting keeps the ordering's fill estimate valid for the
        # mass-dominated matrices of small time steps; accuracy is guarded by
        # the residual check with a full-pivoting retry.
        self.lu = self._factorize(0.1)
        self._fully_pivoted = False

    def _factorize(self, pivot_threshold: float):
        try:
            return spla.splu(self.system, permc_spec="MMD_AT_PLUS_A",
                             options=dict(DiagPivotThresh=pivot_threshold))
        except RuntimeError as exc:  # singular factorization
            raise SaddleSolveError(
                f"saddle matrix factorization failed: {exc}") from exc

    def _residuals(self, sol, f, g):
        u = sol[:self.nu]
        p = sol[self.nu:self.nu + self.np]
        r1 = np.linalg.norm(self.a @ u + self.b.T @ p - f)
        r2 = np.linalg.norm(self.b @ u - g)
        return u, p, max(r1, r2)

    def solve(self, f: np.ndarray, g: np.ndarray | None = None
              ) -> tuple[np.ndarray, np.ndarray]:
        if g is None:
            g = np.zeros(self.np)
        rhs = np.concatenate([f, g, [0.0]])
        u, p, res = self._residuals(self.lu.solve(rhs), f, g)
        scale = max(float(np.linalg.norm(f)), float(np.linalg.norm(g)), 1e-300)
        if res > self.rel_tol * scale and not self._fully_pivoted:
            self.lu = self._factorize(1.0)
            self._fully_pivoted = True
            u, p, res = self._residuals(self.lu.solve(rhs), f, g)
        if res > self.rel_tol * scale:
            raise SaddleSolveError(
                f"saddle residual {res:.3e} exceeds {self.rel_tol:.1e} "
                f"relative to data norm {scale:.3e}")
        return u, p


class PreconditionedStepSolver:
    """Iterative saddle solver with a frozen direct preconditioner.

    Factorizes the transport-free part of the step matrix once; each step
    then solves the perturbed system (transport term scaled by dt) with
    preconditioned GMRES. Falls back to a direct factorization of the full
    step matrix whenever the iteration misses the residual contract.
    """

    def __init__(self, frozen_block, b_block, gauge: np.ndarray,
                 rel_tol: float = 1e-10):
        self.b = _matrix(b_block).tocsr()
        self.bt = self.b.T.tocsr()
        self.gauge = gauge
        self.nu = self.b.shape[1]
        self.np = self.b.shape[0]
        self.rel_tol = rel_tol
        self._frozen = SaddleSolver(frozen_block, b_block, gauge,
                                    rel_tol=np.inf)
        ndof = self.nu + self.np + 1
        self._pre_op = spla.LinearOperator(
            (ndof, ndof), matvec=self._frozen.lu.solve, dtype=np.float64)
        self.direct_fallbacks = 0

    def _matvec(self, s_mat, x):
        u = x[:self.nu]
        p = x[self.nu:self.nu + self.np]
        c = x[-1]
        return np.concatenate([
            s_mat @ u + self.bt @ p,
            self.b @ u + c * self.gauge,
            [self.gauge @ p],
        ])

    def solve(self, s_mat, f: np.ndarray, g: np.ndarray | None = None
              ) -> tuple[np.ndarray, np.ndarray]:
        if g is None:
            g = np.zeros(self.np)
        rhs = np.concatenate([f, g, [0.0]])
        ndof = len(rhs)
        op = spla.LinearOperator((ndof, ndof),
                                 matvec=lambda x: self._matvec(s_mat, x),
                                 dtype=np.float64)
        sol, info = spla.gmres(op, rhs, M=self._pre_op, rtol=1e-12, atol=0.0,
                               restart=80, maxiter=400)
        scale = max(float(np.linalg.norm(f)), float(np.linalg.norm(g)), 1e-300)
        u = sol[:self.nu]
        p = sol[self.nu:self.nu + self.np]
        r1 = np.linalg.norm(s_mat @ u + self.bt @ p - f)
        r2 = np.linalg.norm(self.b @ u - g)
        if info != 0 or max(r1, r2) > self.rel_tol * scale:
            self.direct_fallbacks += 1
            direct = SaddleSolver(s_mat, self.b, self.gauge,
                                  rel_tol=self.rel_tol)
            return direct.solve(f, g)
        return u, p


def solve_saddle(space: FeSpace, a_block, b_block, f: np.ndarray,
                 g: np.ndarray | None = None, gauge: np.ndarray | None = None
                 ) -> tuple[FeField, FeField]:
    """One-shot constrained solve returning (velocity, zero-mean pressure)."""
    if gauge is None:
        gauge = OperatorSet(space).pressure_means
    solver = SaddleSolver(a_block, b_block, gauge)
    u, p = solver.solve(f, g)
    return FeField(space, "velocity", u), FeField(space, "pressure", p)


class Projector:
    """Discrete L2 projections onto the divergence-constrained velocity
    space and onto the pressure space, with cached factorizations."""

    def __init__(self, ops: OperatorSet):
        self.ops = ops
        self.space = ops.space
        self._vel = SaddleSolver(ops.mass_v, ops.div, ops.pressure_means)
        self._pres = spla.factorized(ops.mass_p.mat.tocsc())

    def velocity(self, v) -> FeField:
        """Project onto discretely divergence-free velocity fields.

        v may be an FeField on the same space or a callable
        fn(x, y) -> (2, npts).
        """
        if isinstance(v, FeField):
            if v.space is not self.space:
                raise ValueError("field belongs to a different space")
            f = self.ops.mass_v.mat @ v.coeffs
        else:
            f = velocity_load(self.space, v)
        u, _ = self._vel.solve(f)
        return FeField(self.space, "velocity", u)

    def pressure(self, p) -> FeField:
        """L2-orthogonal projection onto the pressure space."""
        if isinstance(p, FeField):
            if p.space is not self.space:
                raise ValueError("field belongs to a different space")
            rhs = self.ops.mass_p.mat @ p.coeffs
        else:
            from .assemble import pressure_load

            rhs = pressure_load(self.space, p)
        return FeField(self.space, "pressure", self._pres(rhs))


def project_velocity(space: FeSpace, ops: OperatorSet, v) -> FeField:
    return Projector(ops).velocity(v)


def project_pressure(space: FeSpace, ops: OperatorSet, p) -> FeField:
    return Projector(ops).pressure(p)


def divergence_residual(ops: OperatorSet, field: FeField) -> float:
    """Largest pairing of div(field) against the pressure basis."""
    return float(np.max(np.abs(ops.div.mat @ field.coeffs)))


def infsup_constant(space: FeSpace, ops: OperatorSet | None = None) -> float:
    """Discrete inf-sup constant of the velocity/pressure pair.

    Computed as the square root of the second-smallest eigenvalue of the
    pressure Schur complement B A^+ B^T relative to the pressure mass
    matrix, where A is the velocity gradient matrix. The smallest
    eigenvalue is the constant-pressure gauge mode and is discarded.
    Dense linear algebra; intended for modest mesh sizes.
    """
    if ops is None:
        ops = OperatorSet(space)
    a = ops.stiff_v.mat.toarray()
    bt = ops.div.mat.toarray().T
    # rows of B^T are orthogonal to the constant-velocity kernel of A, so
    # the least-squares solve realizes the pseudo-inverse on the range
    y, *_ = np.linalg.lstsq(a, bt, rcond=None)
    schur = ops.div.mat.toarray() @ y
    schur = 0.5 * (schur + schur.T)
    mp = ops.mass_p.mat.toarray()
    import scipy.linalg as sla

    eigvals = sla.eigh(schur, mp, eigvals_only=True)
    if len(eigvals) < 2:
        raise RuntimeError("pressure space too small for an inf-sup estimate")
    lam = float(eigvals[1])
    return float(np.sqrt(max(lam, 0.0)))
