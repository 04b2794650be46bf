"""Uniform periodic triangulations of the flat 2-torus [-pi, pi)^2.

The torus is subdivided into an n x n grid of squares, each split along the
same diagonal into two right triangles. Opposite edges of the square domain
are identified, so vertex and edge bookkeeping is pure modular index
arithmetic and never relies on floating-point coordinate matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusMesh:
    """Structured periodic triangle mesh.

    Attributes:
        n: subdivisions per axis.
        vertices: (n*n, 2) array of vertex coordinates in [-pi, pi).
        triangles: (2*n*n, 3) vertex index triples, positively oriented.
        corner_grid: (2*n*n, 3, 2) unwrapped integer grid coordinates of the
            three corners of each triangle (used to recover geometry across
            the periodic seam).
        h: mesh size, the longest edge (the square diagonal).
    """

    n: int
    vertices: np.ndarray
    triangles: np.ndarray
    corner_grid: np.ndarray
    h: float

    @property
    def num_vertices(self) -> int:
        return self.n * self.n

    @property
    def num_triangles(self) -> int:
        return 2 * self.n * self.n

    @property
    def num_edges(self) -> int:
        # horizontal + vertical + diagonal, one family each per grid square
        return 3 * self.n * self.n

    @property
    def cell_width(self) -> float:
        return TWO_PI / self.n

    def vertex_index(self, i: int, j: int) -> int:
        """Global index of grid vertex (i, j), wrapping periodically."""
        n = self.n
        return (j % n) * n + (i % n)

    def triangle_corners(self, t: int) -> np.ndarray:
        """Unwrapped physical coordinates of triangle t's corners, (3, 2)."""
        return -np.pi + self.corner_grid[t] * self.cell_width


def build_uniform_mesh(n: int) -> TorusMesh:
    """Build the standard right-triangle split of the periodic n x n grid.

    Each grid square (i, j) with corners a=(i,j), b=(i+1,j), c=(i+1,j+1),
    d=(i,j+1) is split along the a-c diagonal into triangles (a, b, c) and
    (a, c, d), both counterclockwise.
    """
    if n < 1:
        raise ValueError(f"mesh subdivisions must be >= 1, got {n}")

    width = TWO_PI / n
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    vertices = np.column_stack(
        [-np.pi + ii.ravel() * width, -np.pi + jj.ravel() * width]
    )

    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    corner_grid = np.empty((2 * n * n, 3, 2), dtype=np.int64)
    t = 0
    for j in range(n):
        for i in range(n):
            a = (j % n) * n + (i % n)
            b = (j % n) * n + ((i + 1) % n)
            c = ((j + 1) % n) * n + ((i + 1) % n)
            d = ((j + 1) % n) * n + (i % n)
            triangles[t] = (a, b, c)
            corner_grid[t] = ((i, j), (i + 1, j), (i + 1, j + 1))
            triangles[t + 1] = (a, c, d)
            corner_grid[t + 1] = ((i, j), (i + 1, j + 1), (i, j + 1))
            t += 2

    h = np.sqrt(2.0) * width
    return TorusMesh(n=n, vertices=vertices, triangles=triangles,
                     corner_grid=corner_grid, h=h)


def triangle_areas(mesh: TorusMesh) -> np.ndarray:
    """Signed areas of all triangles from unwrapped corner coordinates."""
    corners = -np.pi + mesh.corner_grid * mesh.cell_width
    d1 = corners[:, 1] - corners[:, 0]
    d2 = corners[:, 2] - corners[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def mesh_statistics(mesh: TorusMesh) -> tuple[float, float, float]:
    """Return (h, total area, quasi-uniformity ratio).

    The quasi-uniformity ratio is max edge length over min inscribed-circle
    diameter; it is identical for every n because all triangles are similar.
    """
    areas = triangle_areas(mesh)
    total = float(np.sum(areas))
    width = mesh.cell_width
    # right triangle with legs `width`: perimeter p, inradius r = 2*area/p
    perimeter = (2.0 + np.sqrt(2.0)) * width
    inradius = 2.0 * (0.5 * width * width) / perimeter
    ratio = mesh.h / (2.0 * inradius)
    return mesh.h, total, float(ratio)


def write_debug_dump(mesh: TorusMesh, path: str) -> None:
    """Write a plain-text node/element listing for offline inspection."""
    with open(path, "w", encoding="ascii") as f:
        f.write(f"# torus mesh n={mesh.n} h={mesh.h!r}\n")
        f.write(f"# vertices {mesh.num_vertices}\n")
        for k, (x, y) in enumerate(mesh.vertices):
            f.write(f"v {k} {x!r} {y!r}\n")
        f.write(f"# triangles {mesh.num_triangles}\n")
        for k, (a, b, c) in enumerate(mesh.triangles):
            f.write(f"t {k} {a} {b} {c}\n")
