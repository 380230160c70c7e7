"""
Overlapping grid decompositions with oversampling
Subdomain DOF sets, hop-distance partition of unity and coloring constants
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from curlgfem.assembly import DofMap, pou_scaling
from curlgfem.config import DEFAULT_TOLERANCES, Tolerances
from curlgfem.mesh import Mesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Subdomain:
    """
    One subdomain omega_i and its oversampling domain omega_i*

    All DOF arrays are sorted indices into the free-DOF numbering.
    """
    index: int
    block: Tuple[int, int]
    triangles: np.ndarray        # omega_i
    star_triangles: np.ndarray   # omega_i*
    dofs: np.ndarray             # free edges of omega_i (restriction R_i)
    zero_dofs: np.ndarray        # dofs without the internal boundary of omega_i
    star_dofs: np.ndarray        # free edges of omega_i*
    star_interior: np.ndarray    # star_dofs without the internal boundary of omega_i*
    star_interface: np.ndarray   # internal boundary edges of omega_i*
    boundary_vertices: np.ndarray  # vertices on the internal boundary of omega_i

    @property
    def has_interface(self) -> bool:
        return self.star_interface.size > 0


def grow_layers(mesh: Mesh, mask: np.ndarray, layers: int) -> np.ndarray:
    """Add `layers` rings of triangles sharing a vertex with the current set"""
    mask = np.asarray(mask, dtype=bool).copy()
    TV = mesh.triangle_vertex
    for _ in range(layers):
        touched = (TV.T @ mask.astype(float)) > 0
        mask = (TV @ touched.astype(float)) > 0
    return mask


def _edge_counts(mesh: Mesh, mask: np.ndarray) -> np.ndarray:
    return np.asarray(mesh.triangle_edge.T @ mask.astype(float)).round().astype(np.int64)


def _dof_sets(mesh: Mesh, dofmap: DofMap, mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(all free dofs, dofs off the internal boundary, internal boundary dofs)"""
    counts = _edge_counts(mesh, mask)
    internal = (counts == 1) & ~mesh.boundary_edges
    lookup = dofmap.edge_to_dof
    present = (counts > 0) & (lookup >= 0)
    all_dofs = lookup[present]
    interior = lookup[present & ~internal]
    interface = lookup[present & internal]
    return np.sort(all_dofs), np.sort(interior), np.sort(interface)


def block_of_triangles(mesh: Mesh, m: int) -> np.ndarray:
    """(T, 2) block coordinates (bi, bj) of the m x m grid partition"""
    ci, cj = mesh.triangle_cells[:, 0], mesh.triangle_cells[:, 1]
    return np.stack([ci * m // mesh.nx, cj * m // mesh.ny], axis=1)


@dataclass(frozen=True, eq=False)
class Decomposition:
    mesh: Mesh
    dofmap: DofMap
    m: int
    overlap: int
    ovsp: int
    subdomains: Tuple[Subdomain, ...]
    k0: int
    k0_star: int
    tolerances: Tolerances = DEFAULT_TOLERANCES

    def __len__(self) -> int:
        return len(self.subdomains)

    def __getitem__(self, i: int) -> Subdomain:
        if not 0 <= i < len(self.subdomains):
            raise IndexError(f"Subdomain {i} out of range (0..{len(self.subdomains) - 1})")
        return self.subdomains[i]

    @cached_property
    def chi(self) -> np.ndarray:
        """(M, V) partition-of-unity vertex values"""
        return build_pou(self)

    @cached_property
    def _scales(self) -> List[np.ndarray]:
        free = self.dofmap.free_edges
        out = []
        for sub in self.subdomains:
            s = pou_scaling(self.mesh, self.chi[sub.index], self.tolerances)
            out.append(s[free[sub.dofs]])
        return out

    def pou_diagonal(self, i: int) -> np.ndarray:
        """Diagonal of Xi_i on the dofs of omega_i"""
        return self._scales[self[i].index]

    def restrict(self, i: int, v: np.ndarray) -> np.ndarray:
        """R_i v"""
        return np.asarray(v)[self[i].dofs]

    def extend(self, i: int, local: np.ndarray) -> np.ndarray:
        """R_i^T local (zero extension)"""
        sub = self[i]
        local = np.asarray(local)
        if local.shape[0] != sub.dofs.size:
            raise ValueError(f"Local vector has {local.shape[0]} entries, subdomain {i} has {sub.dofs.size}")
        out = np.zeros((self.dofmap.n_free,) + local.shape[1:])
        out[sub.dofs] = local
        return out

    def restrict_star(self, i: int, v: np.ndarray) -> np.ndarray:
        """R~_i v on the free interior DOFs of omega_i*"""
        return np.asarray(v)[self[i].star_interior]

    def apply_pou(self, i: int, local: np.ndarray) -> np.ndarray:
        """Xi_i acting on a vector over the dofs of omega_i"""
        d = self.pou_diagonal(i)
        return d[:, None] * local if np.ndim(local) == 2 else d * local

    def most_interior(self) -> int:
        """Subdomain whose block is farthest from the outer boundary, ties to the center"""
        m = self.m
        center = (m - 1) / 2

        def key(sub: Subdomain):
            bi, bj = sub.block
            depth = min(bi, bj, m - 1 - bi, m - 1 - bj)
            return (-depth, abs(bi - center) + abs(bj - center), sub.index)

        return min(self.subdomains, key=key).index

    def owners_of_triangles(self, star: bool = False) -> List[List[int]]:
        """For every triangle, the subdomains (or oversampling domains) containing it"""
        owners: List[List[int]] = [[] for _ in range(self.mesh.n_triangles)]
        for sub in self.subdomains:
            for t in (sub.star_triangles if star else sub.triangles).tolist():
                owners[t].append(sub.index)
        return owners


def build_decomposition(
    mesh: Mesh,
    m: int,
    overlap_layers: int,
    ovsp_layers: int,
    dofmap: Optional[DofMap] = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> Decomposition:
    """
    m x m block partition of the cell grid, each block grown by
    overlap_layers element layers (omega_i) and then by ovsp_layers more
    (omega_i*)

    Raises:
        ValueError: m < 1, m larger than the grid, or negative layer counts
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if m > mesh.nx or m > mesh.ny:
        raise ValueError(f"m={m} exceeds the {mesh.nx}x{mesh.ny} cell grid")
    if overlap_layers < 0 or ovsp_layers < 0:
        raise ValueError("Layer counts must be >= 0")
    if dofmap is None:
        dofmap = DofMap(mesh.boundary_edges.copy())

    blocks = block_of_triangles(mesh, m)
    subdomains = []
    cover = np.zeros(mesh.n_triangles, dtype=np.int64)
    cover_star = np.zeros(mesh.n_triangles, dtype=np.int64)
    for bj in range(m):
        for bi in range(m):
            seed = (blocks[:, 0] == bi) & (blocks[:, 1] == bj)
            if not seed.any():
                logger.warning(f"Block ({bi}, {bj}) contains no triangles, skipped")
                continue
            omega = grow_layers(mesh, seed, overlap_layers)
            star = grow_layers(mesh, omega, ovsp_layers)
            cover += omega
            cover_star += star

            dofs, zero_dofs, _ = _dof_sets(mesh, dofmap, omega)
            star_dofs, star_interior, star_interface = _dof_sets(mesh, dofmap, star)
            counts = _edge_counts(mesh, omega)
            internal_edges = (counts == 1) & ~mesh.boundary_edges
            boundary_vertices = np.unique(mesh.edges[internal_edges].ravel())

            subdomains.append(Subdomain(
                index=len(subdomains),
                block=(bi, bj),
                triangles=np.flatnonzero(omega),
                star_triangles=np.flatnonzero(star),
                dofs=dofs,
                zero_dofs=zero_dofs,
                star_dofs=star_dofs,
                star_interior=star_interior,
                star_interface=star_interface,
                boundary_vertices=boundary_vertices,
            ))

    if np.any(cover == 0):
        raise ValueError("Decomposition leaves triangles uncovered")
    decomposition = Decomposition(
        mesh=mesh,
        dofmap=dofmap,
        m=m,
        overlap=overlap_layers,
        ovsp=ovsp_layers,
        subdomains=tuple(subdomains),
        k0=int(cover.max()),
        k0_star=int(cover_star.max()),
        tolerances=tolerances,
    )
    logger.info(
        f"✓ Decomposition m={m} overlap={overlap_layers} ovsp={ovsp_layers}: "
        f"{len(subdomains)} subdomains, k0={decomposition.k0}, k0*={decomposition.k0_star}"
    )
    return decomposition


def _vertex_graph(mesh: Mesh, edge_mask: np.ndarray) -> sp.csr_matrix:
    e = mesh.edges[edge_mask]
    n = mesh.n_vertices
    data = np.ones(len(e))
    g = sp.coo_matrix((data, (e[:, 0], e[:, 1])), shape=(n, n))
    return (g + g.T).tocsr()


def build_pou(decomposition: Decomposition) -> np.ndarray:
    """
    chi_i = d_i / sum_j d_j with d_i the vertex hop distance, inside omega_i,
    to the internal boundary of omega_i (zero outside omega_i)

    Raises:
        ValueError: A vertex where every distance vanishes
    """
    mesh = decomposition.mesh
    n_sub = len(decomposition.subdomains)
    dist = np.zeros((n_sub, mesh.n_vertices))
    for sub in decomposition.subdomains:
        mask = np.zeros(mesh.n_triangles, dtype=bool)
        mask[sub.triangles] = True
        counts = _edge_counts(mesh, mask)
        in_vertices = np.unique(mesh.triangles[sub.triangles].ravel())
        if sub.boundary_vertices.size == 0:
            dist[sub.index, in_vertices] = 1.0
            continue
        graph = _vertex_graph(mesh, counts > 0)
        d = dijkstra(graph, directed=False, unweighted=True,
                     indices=sub.boundary_vertices, min_only=True)
        d_in = d[in_vertices]
        finite = np.isfinite(d_in)
        if not finite.all():
            # components of omega_i without internal boundary
            d_in[~finite] = (d_in[finite].max() if finite.any() else 0.0) + 1.0
        dist[sub.index, in_vertices] = d_in

    total = dist.sum(axis=0)
    if np.any(total <= 0):
        v = int(np.flatnonzero(total <= 0)[0])
        raise ValueError(
            f"Vertex {v} at {mesh.vertices[v].tolist()} is not interior to any subdomain "
            f"(overlap must be >= 1 where subdomains abut)"
        )
    return dist / total
