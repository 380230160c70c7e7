"""
Structured triangular meshes of rectangles with rectangular holes
Globally oriented edges, boundary flags and element incidences
"""
import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

Rect = Tuple[float, float, float, float]  # (x0, y0, x1, y1)

UNIT_SQUARE: Rect = (0.0, 0.0, 1.0, 1.0)

# Local edge p of a triangle joins local vertices LOCAL_EDGES[p]
LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])

ALIGN_TOL = 1e-9


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Conforming triangulation of a rectangle minus grid-aligned holes

    Triangles are counterclockwise; edges are stored (low, high) by vertex
    index and that order is the global orientation. triangle_signs[t, p] is
    +1 iff triangle t traverses its local edge p from low to high.
    """
    vertices: np.ndarray          # (V, 2)
    triangles: np.ndarray         # (T, 3)
    edges: np.ndarray             # (E, 2), low < high
    triangle_edges: np.ndarray    # (T, 3) global edge of each local edge
    triangle_signs: np.ndarray    # (T, 3) in {-1, +1}
    boundary_edges: np.ndarray    # (E,) bool, includes hole perimeters
    region_of_triangle: np.ndarray  # (T,) int material tag
    triangle_cells: np.ndarray    # (T, 2) grid cell (ci, cj) of each triangle
    holes: Tuple[Rect, ...] = ()
    nx: int = 0
    ny: int = 0
    rect: Rect = UNIT_SQUARE

    def __post_init__(self):
        for name in ("vertices", "triangles", "edges", "triangle_edges", "triangle_signs",
                     "boundary_edges", "region_of_triangle", "triangle_cells"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def cell_size(self) -> Tuple[float, float]:
        x0, y0, x1, y1 = self.rect
        return (x1 - x0) / self.nx, (y1 - y0) / self.ny

    @cached_property
    def triangle_vertex(self) -> sp.csr_matrix:
        """Unsigned T x V incidence"""
        t = self.n_triangles
        rows = np.repeat(np.arange(t), 3)
        data = np.ones(3 * t)
        return sp.csr_matrix((data, (rows, self.triangles.ravel())), shape=(t, self.n_vertices))

    @cached_property
    def triangle_edge(self) -> sp.csr_matrix:
        """Unsigned T x E incidence"""
        t = self.n_triangles
        rows = np.repeat(np.arange(t), 3)
        data = np.ones(3 * t)
        return sp.csr_matrix((data, (rows, self.triangle_edges.ravel())), shape=(t, self.n_edges))

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return _readonly(0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]))

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return _readonly(np.hypot(d[:, 0], d[:, 1]))

    @cached_property
    def centroids(self) -> np.ndarray:
        return _readonly(self.vertices[self.triangles].mean(axis=1))

    @cached_property
    def outer_boundary_edges(self) -> np.ndarray:
        """Boundary edges lying on the bounding rectangle"""
        x0, y0, x1, y1 = self.rect
        dx, dy = self.cell_size
        tol = ALIGN_TOL * min(dx, dy)
        p = self.vertices[self.edges]
        on_side = np.zeros(self.n_edges, dtype=bool)
        for axis, value in ((0, x0), (0, x1), (1, y0), (1, y1)):
            on_side |= np.all(np.abs(p[:, :, axis] - value) < tol, axis=1)
        return _readonly(self.boundary_edges & on_side)

    @cached_property
    def hole_boundary_edges(self) -> np.ndarray:
        return _readonly(self.boundary_edges & ~self.outer_boundary_edges)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[self.edges[self.boundary_edges].ravel()] = True
        return _readonly(flags)

    @property
    def enclosed_hole_count(self) -> int:
        """Holes that do not touch the bounding rectangle"""
        x0, y0, x1, y1 = self.rect
        dx, dy = self.cell_size
        tol = ALIGN_TOL * min(dx, dy)
        return sum(
            1 for hx0, hy0, hx1, hy1 in self.holes
            if hx0 > x0 + tol and hy0 > y0 + tol and hx1 < x1 - tol and hy1 < y1 - tol
        )

    def with_regions(self, region_of_triangle: np.ndarray) -> "Mesh":
        """Copy of the mesh with new material tags"""
        regions = np.asarray(region_of_triangle, dtype=np.int64)
        if regions.shape != (self.n_triangles,):
            raise ValueError(
                f"region_of_triangle has shape {regions.shape}, expected ({self.n_triangles},)"
            )
        return replace(self, region_of_triangle=regions)


def _hole_cell_ranges(nx: int, ny: int, rect: Rect, holes: Sequence[Rect]) -> list:
    x0, y0, x1, y1 = rect
    dx = (x1 - x0) / nx
    dy = (y1 - y0) / ny
    ranges = []
    for hole in holes:
        hx0, hy0, hx1, hy1 = hole
        coords = np.array([(hx0 - x0) / dx, (hy0 - y0) / dy, (hx1 - x0) / dx, (hy1 - y0) / dy])
        rounded = np.round(coords)
        if np.any(np.abs(coords - rounded) > ALIGN_TOL * np.maximum(1.0, np.abs(coords))):
            raise ValueError(f"Hole {hole} is not aligned with the {nx}x{ny} grid of {rect}")
        i0, j0, i1, j1 = (int(c) for c in rounded)
        if i1 <= i0 or j1 <= j0:
            raise ValueError(f"Hole {hole} is empty or inverted")
        if i0 < 0 or j0 < 0 or i1 > nx or j1 > ny:
            raise ValueError(f"Hole {hole} extends outside {rect}")
        if (i0 == 0 and i1 == nx) or (j0 == 0 and j1 == ny):
            raise ValueError(f"Hole {hole} spans the full domain and disconnects it")
        ranges.append((i0, j0, i1, j1))

    for a in range(len(ranges)):
        for b in range(a + 1, len(ranges)):
            ai0, aj0, ai1, aj1 = ranges[a]
            bi0, bj0, bi1, bj1 = ranges[b]
            # at least one full cell between any two holes
            separated = ai1 < bi0 or bi1 < ai0 or aj1 < bj0 or bj1 < aj0
            if not separated:
                raise ValueError(f"Holes {holes[a]} and {holes[b]} overlap or touch")
    return ranges


def build_structured_mesh(
    nx: int,
    ny: int,
    rect: Rect = UNIT_SQUARE,
    holes: Sequence[Rect] = (),
    region_of_triangle: Optional[np.ndarray] = None,
) -> Mesh:
    """
    Split every grid cell outside the holes along its lower-left to
    upper-right diagonal.

    Args:
        nx, ny: Cell counts along x and y
        rect: Bounding box (x0, y0, x1, y1)
        holes: Grid-aligned rectangles removed from the domain

    Raises:
        ValueError: Zero cells, degenerate rect, misaligned or overlapping holes
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"Mesh needs at least one cell per direction, got nx={nx}, ny={ny}")
    x0, y0, x1, y1 = (float(c) for c in rect)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"Degenerate rectangle {rect}")
    rect = (x0, y0, x1, y1)
    holes = tuple(tuple(float(c) for c in h) for h in holes)
    hole_ranges = _hole_cell_ranges(nx, ny, rect, holes)

    keep = np.ones((ny, nx), dtype=bool)
    for i0, j0, i1, j1 in hole_ranges:
        keep[j0:j1, i0:i1] = False
    cj, ci = np.nonzero(keep)  # row-major: cells ordered by (cj, ci)

    v00 = cj * (nx + 1) + ci
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    grid_tris = np.stack([lower, upper], axis=1).reshape(-1, 3)
    cells = np.repeat(np.stack([ci, cj], axis=1), 2, axis=0)

    # compact to referenced vertices; grid numbering is already (y, x) lexicographic
    used, triangles = np.unique(grid_tris, return_inverse=True)
    triangles = triangles.reshape(-1, 3)
    gi = used % (nx + 1)
    gj = used // (nx + 1)
    vertices = np.stack([x0 + (x1 - x0) * gi / nx, y0 + (y1 - y0) * gj / ny], axis=1)

    local = triangles[:, LOCAL_EDGES]  # (T, 3, 2)
    pairs = np.sort(local, axis=2).reshape(-1, 2)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    triangle_edges = inverse.reshape(-1, 3)
    triangle_signs = np.where(local[:, :, 0] < local[:, :, 1], 1, -1)
    boundary_edges = np.bincount(triangle_edges.ravel(), minlength=len(edges)) == 1

    if region_of_triangle is None:
        region_of_triangle = np.zeros(len(triangles), dtype=np.int64)

    mesh = Mesh(
        vertices=vertices,
        triangles=triangles,
        edges=edges,
        triangle_edges=triangle_edges,
        triangle_signs=triangle_signs,
        boundary_edges=boundary_edges,
        region_of_triangle=np.asarray(region_of_triangle, dtype=np.int64),
        triangle_cells=cells,
        holes=holes,
        nx=nx,
        ny=ny,
        rect=rect,
    )
    logger.debug(
        f"✓ Mesh {nx}x{ny} with {len(holes)} holes: "
        f"V={mesh.n_vertices} E={mesh.n_edges} T={mesh.n_triangles}"
    )
    return mesh


def mesh_size(mesh: Mesh) -> float:
    """h = max over triangles of the diameter (longest edge)"""
    if mesh.n_triangles == 0:
        raise ValueError("mesh_size of an empty mesh")
    return float(mesh.edge_lengths.max())


def hole_perimeter_edges(mesh: Mesh) -> list:
    """Edge indices on the perimeter of each hole, in mesh.holes order"""
    dx, dy = mesh.cell_size
    tol = ALIGN_TOL * min(dx, dy)
    candidates = np.flatnonzero(mesh.hole_boundary_edges)
    mid = mesh.vertices[mesh.edges[candidates]].mean(axis=1)
    out = []
    for hx0, hy0, hx1, hy1 in mesh.holes:
        inside = (
            (mid[:, 0] > hx0 - tol) & (mid[:, 0] < hx1 + tol)
            & (mid[:, 1] > hy0 - tol) & (mid[:, 1] < hy1 + tol)
        )
        out.append(candidates[inside])
    return out
