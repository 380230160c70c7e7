"""
Lowest-order Nedelec edge-element assembly
Curl-curl plus mass operators, loads, tangential lifting and the PoU edge scaling
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.io
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss

from curlgfem.config import DEFAULT_TOLERANCES, Tolerances
from curlgfem.mesh import LOCAL_EDGES, Mesh

logger = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]
ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]
SourceTerm = Union[None, np.ndarray, Tuple[float, float], VectorField]
TangentialData = Union[None, float, np.ndarray, VectorField]

# Degree-5 seven-point triangle rule: (barycentric coordinates, weight)
_A1, _B1, _W1 = 0.059715871789770, 0.470142064105115, 0.132394152788506
_A2, _B2, _W2 = 0.797426985353087, 0.101286507323456, 0.125939180544827
TRIANGLE_RULE_POINTS = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
TRIANGLE_RULE_WEIGHTS = np.array([0.225, _W1, _W1, _W1, _W2, _W2, _W2])

# integral of lambda_i lambda_j over K, divided by |K|
_BARY_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Piecewise constant reluctivity nu and conductivity kappa"""
    nu: np.ndarray
    kappa: np.ndarray

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float)
        kappa = np.asarray(self.kappa, dtype=float)
        if nu.shape != kappa.shape or nu.ndim != 1:
            raise ValueError(f"nu {nu.shape} and kappa {kappa.shape} must be matching vectors")
        for name, values in (("nu", nu), ("kappa", kappa)):
            if not np.all(np.isfinite(values)) or np.any(values <= 0):
                raise ValueError(f"Coefficient {name} must be finite and strictly positive")
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "kappa", kappa)

    @classmethod
    def constant(cls, mesh: Mesh, nu: float = 1.0, kappa: float = 1.0) -> "CoefficientField":
        t = mesh.n_triangles
        return cls(np.full(t, float(nu)), np.full(t, float(kappa)))

    @classmethod
    def from_regions(cls, mesh: Mesh, table: dict) -> "CoefficientField":
        """table maps region tag -> (nu, kappa)"""
        missing = set(np.unique(mesh.region_of_triangle).tolist()) - set(table)
        if missing:
            raise ValueError(f"No coefficients for regions {sorted(missing)}")
        nu = np.empty(mesh.n_triangles)
        kappa = np.empty(mesh.n_triangles)
        for region, (n, k) in table.items():
            mask = mesh.region_of_triangle == region
            nu[mask] = n
            kappa[mask] = k
        return cls(nu, kappa)


@dataclass(frozen=True, eq=False)
class DofMap:
    """Free/constrained split of the edge set"""
    constrained: np.ndarray  # (E,) bool

    @cached_property
    def free_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.constrained)

    @cached_property
    def constrained_edges(self) -> np.ndarray:
        return np.flatnonzero(self.constrained)

    @cached_property
    def edge_to_dof(self) -> np.ndarray:
        """Free DOF index of each edge, -1 on constrained edges"""
        lookup = np.full(len(self.constrained), -1, dtype=np.int64)
        lookup[self.free_edges] = np.arange(len(self.free_edges))
        return lookup

    @property
    def n_free(self) -> int:
        return len(self.free_edges)


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    """A u = f on free DOFs, with A_full and the tangential data kept for lifting"""
    mesh: Mesh
    coeff: CoefficientField
    dofmap: DofMap
    element_matrices: np.ndarray  # (T, 3, 3), edge signs applied
    A_full: sp.csr_matrix
    A: sp.csr_matrix
    load: np.ndarray   # (E,) source integrals
    g: np.ndarray      # (E,) prescribed DOFs, zero on free edges
    f: np.ndarray      # (n_free,) load minus lifting

    @cached_property
    def curl_incidence(self) -> sp.csr_matrix:
        return curl_incidence(self.mesh)

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_free

    def full_vector(self, u: np.ndarray) -> np.ndarray:
        """Edge vector with free values u and the prescribed values elsewhere"""
        full = self.g.copy()
        full[self.dofmap.free_edges] = u
        return full

    def with_load(self, source: SourceTerm = None, tangential: TangentialData = None) -> "AssembledSystem":
        load, g, f = assemble_load(self.mesh, self.A_full, self.dofmap, source, tangential)
        return AssembledSystem(self.mesh, self.coeff, self.dofmap, self.element_matrices,
                               self.A_full, self.A, load, g, f)


def barycentric_gradients(mesh: Mesh) -> np.ndarray:
    """(T, 3, 2) gradients of the barycentric coordinates"""
    p = mesh.vertices[mesh.triangles]
    opposite = p[:, [2, 0, 1]] - p[:, [1, 2, 0]]
    rotated = np.stack([-opposite[..., 1], opposite[..., 0]], axis=-1)
    return rotated / (2.0 * mesh.areas[:, None, None])


def _element_curls(grads: np.ndarray) -> np.ndarray:
    """(T, 3) curl of each local Whitney function, before signs"""
    a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    ga, gb = grads[:, a], grads[:, b]
    return 2.0 * (ga[..., 0] * gb[..., 1] - ga[..., 1] * gb[..., 0])


def element_matrices(mesh: Mesh, coeff: CoefficientField) -> np.ndarray:
    """Signed local matrices nu |K| curl_p curl_q + kappa M_pq"""
    if coeff.nu.shape != (mesh.n_triangles,):
        raise ValueError(
            f"Coefficient field has {coeff.nu.shape[0]} entries, mesh has {mesh.n_triangles} triangles"
        )
    grads = barycentric_gradients(mesh)
    area = mesh.areas
    G = np.einsum("tid,tjd->tij", grads, grads)
    a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    lam = _BARY_MASS
    mass = (
        lam[a][:, a] * G[:, b][:, :, b]
        - lam[a][:, b] * G[:, b][:, :, a]
        - lam[b][:, a] * G[:, a][:, :, b]
        + lam[b][:, b] * G[:, a][:, :, a]
    ) * area[:, None, None]
    mass = 0.5 * (mass + mass.transpose(0, 2, 1))

    curls = _element_curls(grads)
    stiff = (coeff.nu * area)[:, None, None] * (curls[:, :, None] * curls[:, None, :])
    signs = mesh.triangle_signs.astype(float)
    sign_outer = signs[:, :, None] * signs[:, None, :]
    return sign_outer * (stiff + coeff.kappa[:, None, None] * mass)


def _compress(rows: np.ndarray, cols: np.ndarray, vals: np.ndarray, shape: Tuple[int, int]) -> sp.csr_matrix:
    """Sum duplicate triples in a fixed order so A and A^T match bit for bit"""
    if rows.size == 0:
        return sp.csr_matrix(shape)
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    new = np.ones(rows.size, dtype=bool)
    new[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    starts = np.flatnonzero(new)
    data = np.add.reduceat(vals, starts)
    indices = cols[starts]
    indptr = np.zeros(shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, rows[starts] + 1, 1)
    return sp.csr_matrix((data, indices, np.cumsum(indptr)), shape=shape)


def _assemble_edges(mesh: Mesh, local: np.ndarray, triangles: np.ndarray, edge_to_local: np.ndarray,
                    size: int) -> sp.csr_matrix:
    te = edge_to_local[mesh.triangle_edges[triangles]]  # (t, 3)
    K = local[triangles]
    rows = np.repeat(te, 3, axis=1).ravel()
    cols = np.tile(te, (1, 3)).ravel()
    vals = K.reshape(-1)
    keep = (rows >= 0) & (cols >= 0)
    return _compress(rows[keep], cols[keep], vals[keep], (size, size))


def assemble(
    mesh: Mesh,
    coeff: CoefficientField,
    source: SourceTerm = None,
    tangential: TangentialData = None,
    constrained: Optional[np.ndarray] = None,
) -> AssembledSystem:
    """
    Assemble the edge-element system of curl(nu curl u) + kappa u = f

    Args:
        mesh: Triangulation
        coeff: Per-triangle nu and kappa
        source: None, a constant vector, a (T, 2) array or a callable (x, y) -> (fx, fy)
        tangential: Data of the tangential trace on constrained edges (see assemble_load)
        constrained: (E,) mask of edges carrying the essential condition,
            defaults to every boundary edge

    Raises:
        ValueError: Coefficient or mask sizes inconsistent with the mesh
    """
    if constrained is None:
        constrained = mesh.boundary_edges.copy()
    constrained = np.asarray(constrained, dtype=bool)
    if constrained.shape != (mesh.n_edges,):
        raise ValueError(f"constrained mask has shape {constrained.shape}, expected ({mesh.n_edges},)")
    if np.any(constrained & ~mesh.boundary_edges):
        raise ValueError("Only boundary edges can carry an essential condition")

    local = element_matrices(mesh, coeff)
    identity = np.arange(mesh.n_edges)
    A_full = _assemble_edges(mesh, local, np.arange(mesh.n_triangles), identity, mesh.n_edges)
    dofmap = DofMap(constrained)
    free = dofmap.free_edges
    A = A_full[free][:, free].tocsr()
    A.sort_indices()

    load, g, f = assemble_load(mesh, A_full, dofmap, source, tangential)
    logger.debug(f"✓ Assembled {dofmap.n_free} free DOFs ({A.nnz} nonzeros)")
    return AssembledSystem(mesh, coeff, dofmap, local, A_full, A, load, g, f)


def _source_at(source: SourceTerm, mesh: Mesh) -> Tuple[Optional[np.ndarray], Optional[VectorField]]:
    if source is None:
        return np.zeros((mesh.n_triangles, 2)), None
    if callable(source):
        return None, source
    values = np.asarray(source, dtype=float)
    if values.shape == (2,):
        return np.broadcast_to(values, (mesh.n_triangles, 2)), None
    if values.shape == (mesh.n_triangles, 2):
        return values, None
    raise ValueError(f"Source of shape {values.shape} does not match the mesh")


def quadrature_points(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """(T, Q, 2) points and (T, Q) weights (areas included) of the seven-point rule"""
    p = mesh.vertices[mesh.triangles]
    pts = np.einsum("qi,tid->tqd", TRIANGLE_RULE_POINTS, p)
    return pts, mesh.areas[:, None] * TRIANGLE_RULE_WEIGHTS[None, :]


def _whitney_at(grads: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """(T, Q, 3, 2) unsigned local Whitney functions at barycentric points (Q, 3)"""
    a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    la = bary[:, a][None, :, :, None]
    lb = bary[:, b][None, :, :, None]
    return la * grads[:, None, b] - lb * grads[:, None, a]


def assemble_load(
    mesh: Mesh,
    A_full: sp.csr_matrix,
    dofmap: DofMap,
    source: SourceTerm = None,
    tangential: TangentialData = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Load vector and lifting of the tangential boundary data

    Tangential data may be a scalar g (n x u = g on every constrained edge,
    giving DOF g * |e| signed by the boundary orientation), a vector field
    whose tangential trace is interpolated, or an explicit (E,) DOF vector.

    Returns:
        (load on all edges, prescribed DOFs g, free right-hand side f)

    Raises:
        ValueError: Prescribed data on an edge that is not constrained
    """
    grads = barycentric_gradients(mesh)
    signs = mesh.triangle_signs.astype(float)
    const, field = _source_at(source, mesh)
    if field is None:
        a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
        diff = grads[:, b] - grads[:, a]  # (T, 3, 2)
        local = (mesh.areas / 3.0)[:, None] * np.einsum("tpd,td->tp", diff, const)
    else:
        pts, weights = quadrature_points(mesh)
        fx, fy = field(pts[..., 0], pts[..., 1])
        fvals = np.stack(np.broadcast_arrays(fx, fy), axis=-1)  # (T, Q, 2)
        phi = _whitney_at(grads, TRIANGLE_RULE_POINTS)
        local = np.einsum("tq,tqpd,tqd->tp", weights, phi, fvals)
    load = np.zeros(mesh.n_edges)
    np.add.at(load, mesh.triangle_edges.ravel(), (signs * local).ravel())

    g = boundary_dofs(mesh, dofmap.constrained, tangential)
    free = dofmap.free_edges
    cons = dofmap.constrained_edges
    f = load[free].copy()
    if cons.size and np.any(g[cons]):
        f -= A_full[free][:, cons] @ g[cons]
    return load, g, f


def boundary_dofs(mesh: Mesh, constrained: np.ndarray, tangential: TangentialData) -> np.ndarray:
    """(E,) prescribed edge DOFs, zero off the constrained set"""
    g = np.zeros(mesh.n_edges)
    cons = np.flatnonzero(constrained)
    if tangential is None:
        return g
    if callable(tangential):
        g[cons] = interpolate_edges(mesh, tangential, cons)
        return g
    values = np.asarray(tangential, dtype=float)
    if values.ndim == 0:
        # boundary tangent with the domain on its left = traversal of the unique triangle
        owner_sign = np.zeros(mesh.n_edges)
        np.add.at(owner_sign, mesh.triangle_edges.ravel(), mesh.triangle_signs.ravel().astype(float))
        g[cons] = float(values) * mesh.edge_lengths[cons] * owner_sign[cons]
        return g
    if values.shape != (mesh.n_edges,):
        raise ValueError(f"Tangential DOF vector has shape {values.shape}, expected ({mesh.n_edges},)")
    stray = np.flatnonzero((values != 0) & ~np.asarray(constrained, dtype=bool))
    if stray.size:
        raise ValueError(f"Tangential data given on non-constrained edge {int(stray[0])}")
    g[cons] = values[cons]
    return g


def interpolate_edges(mesh: Mesh, field: VectorField, edges: Optional[np.ndarray] = None,
                      n_points: int = 5) -> np.ndarray:
    """Edge DOFs: integral of u . (p_high - p_low) dt along each edge"""
    if edges is None:
        edges = np.arange(mesh.n_edges)
    nodes, weights = leggauss(n_points)
    t = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    p0 = mesh.vertices[mesh.edges[edges, 0]]
    p1 = mesh.vertices[mesh.edges[edges, 1]]
    d = p1 - p0
    pts = p0[:, None, :] + t[None, :, None] * d[:, None, :]
    ux, uy = field(pts[..., 0], pts[..., 1])
    ux, uy = np.broadcast_arrays(ux, uy)
    tangential = ux * d[:, 0, None] + uy * d[:, 1, None]
    return tangential @ w


def energy_error(
    system: AssembledSystem,
    u: np.ndarray,
    exact: VectorField,
    exact_curl: ScalarField,
) -> float:
    """||u_h - u||_a by the seven-point rule; u holds the free DOFs"""
    mesh = system.mesh
    full = system.full_vector(u)
    coef = full[mesh.triangle_edges] * mesh.triangle_signs  # (T, 3)
    grads = barycentric_gradients(mesh)
    curls_h = np.einsum("tp,tp->t", coef, _element_curls(grads))
    phi = _whitney_at(grads, TRIANGLE_RULE_POINTS)
    uh = np.einsum("tp,tqpd->tqd", coef, phi)
    pts, weights = quadrature_points(mesh)
    ux, uy = exact(pts[..., 0], pts[..., 1])
    ue = np.stack(np.broadcast_arrays(ux, uy), axis=-1)
    ce = np.broadcast_to(exact_curl(pts[..., 0], pts[..., 1]), weights.shape)
    curl_part = system.coeff.nu[:, None] * (curls_h[:, None] - ce) ** 2
    mass_part = system.coeff.kappa[:, None] * np.sum((uh - ue) ** 2, axis=-1)
    return float(np.sqrt(np.sum(weights * (curl_part + mass_part))))


def curl_incidence(mesh: Mesh) -> sp.csr_matrix:
    """Signed T x E matrix: (C u)_K is the circulation of u around K"""
    t = mesh.n_triangles
    rows = np.repeat(np.arange(t), 3)
    return sp.csr_matrix(
        (mesh.triangle_signs.ravel().astype(np.int64), (rows, mesh.triangle_edges.ravel())),
        shape=(t, mesh.n_edges),
    )


def grad_incidence(mesh: Mesh) -> sp.csr_matrix:
    """Signed E x V matrix: -1 at the low vertex, +1 at the high vertex"""
    e = mesh.n_edges
    rows = np.repeat(np.arange(e), 2)
    data = np.tile(np.array([-1, 1], dtype=np.int64), e)
    return sp.csr_matrix((data, (rows, mesh.edges.ravel())), shape=(e, mesh.n_vertices))


def pou_scaling(mesh: Mesh, chi: np.ndarray, tolerances: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """
    Per-edge factor of the interpolated product chi * v_h

    v_h . t is constant on an edge and chi is linear there, so the edge DOF
    of Pi_h(chi v_h) is the mean of chi on the edge times the DOF of v_h.

    Raises:
        ValueError: chi leaves [0, 1] by more than the tolerance
    """
    chi = np.asarray(chi, dtype=float)
    if chi.shape != (mesh.n_vertices,):
        raise ValueError(f"chi has shape {chi.shape}, expected ({mesh.n_vertices},)")
    tol = tolerances.pou_range
    if np.any(chi < -tol) or np.any(chi > 1 + tol):
        raise ValueError(f"chi values outside [0, 1]: range [{chi.min():.3e}, {chi.max():.3e}]")
    return 0.5 * (chi[mesh.edges[:, 0]] + chi[mesh.edges[:, 1]])


def assemble_local(system: AssembledSystem, triangles: np.ndarray, dofs: np.ndarray) -> sp.csr_matrix:
    """
    Neumann matrix of the bilinear form restricted to a triangle subset

    Args:
        triangles: Triangles of the subdomain
        dofs: Free DOF indices defining the local numbering

    Returns:
        len(dofs) x len(dofs) matrix of a_D(w_i, w_j)
    """
    mesh = system.mesh
    dofs = np.asarray(dofs, dtype=np.int64)
    edge_to_local = np.full(mesh.n_edges, -1, dtype=np.int64)
    edge_to_local[system.dofmap.free_edges[dofs]] = np.arange(dofs.size)
    return _assemble_edges(mesh, system.element_matrices, np.asarray(triangles, dtype=np.int64),
                           edge_to_local, dofs.size)


def export_matrix_market(path: Union[str, Path], A: sp.spmatrix, comment: str = "") -> Path:
    """Write A in MatrixMarket coordinate format"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment, symmetry="symmetric")
    logger.info(f"✓ Wrote {A.shape[0]}x{A.shape[1]} matrix to {path}")
    return path
