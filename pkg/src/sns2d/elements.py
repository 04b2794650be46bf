"""Reference triangle elements and quadrature rules.

Reference triangle: vertices (0,0), (1,0), (0,1), barycentrics
lam0 = 1 - xi - eta, lam1 = xi, lam2 = eta.

Lagrange local node ordering:
    degree 1: the three vertices.
    degree 2: vertices 0,1,2 then midpoints of edges (0,1), (1,2), (2,0).
"""

from __future__ import annotations

import numpy as np


def basis_values(degree: int, pts: np.ndarray) -> np.ndarray:
    """Shape function values, (npts, ndof_local), at reference points."""
    xi, eta = pts[:, 0], pts[:, 1]
    lam0 = 1.0 - xi - eta
    lam1 = xi
    lam2 = eta
    if degree == 1:
        return np.column_stack([lam0, lam1, lam2])
    if degree == 2:
        return np.column_stack([
            lam0 * (2.0 * lam0 - 1.0),
            lam1 * (2.0 * lam1 - 1.0),
            lam2 * (2.0 * lam2 - 1.0),
            4.0 * lam0 * lam1,
            4.0 * lam1 * lam2,
            4.0 * lam2 * lam0,
        ])
    raise ValueError(f"unsupported polynomial degree {degree}")


def basis_gradients(degree: int, pts: np.ndarray) -> np.ndarray:
    """Reference gradients, (npts, ndof_local, 2)."""
    xi, eta = pts[:, 0], pts[:, 1]
    lam0 = 1.0 - xi - eta
    lam1 = xi
    lam2 = eta
    npts = len(pts)
    # gradients of barycentrics are constant
    g0 = np.array([-1.0, -1.0])
    g1 = np.array([1.0, 0.0])
    g2 = np.array([0.0, 1.0])
    if degree == 1:
        out = np.empty((npts, 3, 2))
        out[:, 0] = g0
        out[:, 1] = g1
        out[:, 2] = g2
        return out
    if degree == 2:
        out = np.empty((npts, 6, 2))
        out[:, 0] = (4.0 * lam0 - 1.0)[:, None] * g0
        out[:, 1] = (4.0 * lam1 - 1.0)[:, None] * g1
        out[:, 2] = (4.0 * lam2 - 1.0)[:, None] * g2
        out[:, 3] = 4.0 * (lam1[:, None] * g0 + lam0[:, None] * g1)
        out[:, 4] = 4.0 * (lam2[:, None] * g1 + lam1[:, None] * g2)
        out[:, 5] = 4.0 * (lam0[:, None] * g2 + lam2[:, None] * g0)
        return out
    raise ValueError(f"unsupported polynomial degree {degree}")


def local_dofs(degree: int) -> int:
    return {1: 3, 2: 6}[degree]


def quadrature_degree5() -> tuple[np.ndarray, np.ndarray]:
    """Symmetric 7-point rule, exact for polynomials of degree <= 5.

    Weights sum to 1 and multiply the triangle area; all weights positive.
    """
    sqrt15 = np.sqrt(15.0)
    a1 = (6.0 - sqrt15) / 21.0
    a2 = (6.0 + sqrt15) / 21.0
    w1 = (155.0 - sqrt15) / 1200.0
    w2 = (155.0 + sqrt15) / 1200.0
    pts = np.array([
        [1.0 / 3.0, 1.0 / 3.0],
        [a1, a1],
        [1.0 - 2.0 * a1, a1],
        [a1, 1.0 - 2.0 * a1],
        [a2, a2],
        [1.0 - 2.0 * a2, a2],
        [a2, 1.0 - 2.0 * a2],
    ])
    wts = np.array([9.0 / 40.0, w1, w1, w1, w2, w2, w2])
    return pts, wts


def quadrature_refined(splits: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite degree-5 rule on a uniform splits^2 subdivision.

    Used for measuring errors against smooth non-polynomial fields, where
    the plain degree-5 rule would contribute at the same order as the
    quantity being measured.
    """
    base_pts, base_wts = quadrature_degree5()
    pts = []
    wts = []
    s = splits
    for j in range(s):
        for i in range(s):
            if i + j < s:
                # upright subtriangle
                origin = np.array([i, j]) / s
                pts.append(origin + base_pts / s)
                wts.append(base_wts / (s * s))
            if i + j < s - 1:
                # inverted subtriangle
                origin = np.array([i + 1, j + 1]) / s
                pts.append(origin - base_pts / s)
                wts.append(base_wts / (s * s))
    return np.vstack(pts), np.concatenate(wts)
