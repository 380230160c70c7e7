"""
Multiscale spectral GFEM
Local particular solves, a-harmonic extensions, local eigenproblems,
the spectral coarse space and its error bound
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from curlgfem.assembly import AssembledSystem, assemble_local, curl_incidence
from curlgfem.batch import SubdomainBatchProcessor
from curlgfem.config import DEFAULT_TOLERANCES, Tolerances
from curlgfem.decomp import Decomposition, Subdomain
from curlgfem.la import CholeskyFactor, chol_factor, energy_norm, gen_sym_eig, integer_rank
from curlgfem.mesh import Mesh

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class HarmonicExtension:
    """
    E maps interface values g to the a-harmonic function on omega_i*
    (rows follow star_dofs); S is the interface Schur complement
    """
    E: np.ndarray
    S: np.ndarray
    interior_pos: np.ndarray   # rows of E belonging to star_interior
    interface_pos: np.ndarray  # rows of E belonging to star_interface


@dataclass(eq=False)
class LocalReduction:
    """Per-subdomain output of the offline stage"""
    index: int
    eigenvalues: np.ndarray    # descending, >= 0
    psi: np.ndarray            # (len(star_dofs), k), a_{omega*}-orthonormal
    interface_size: int
    harmonic_residual: float = 0.0
    n_selected: int = 0

    @property
    def n_computed(self) -> int:
        return len(self.eigenvalues)

    def lambda_next(self, n: Optional[int] = None) -> float:
        """lambda_{n+1}; zero once the whole harmonic space is used"""
        n = self.n_selected if n is None else n
        if n < self.n_computed:
            return float(self.eigenvalues[n])
        if self.n_computed < self.interface_size:
            raise ValueError(
                f"Subdomain {self.index}: lambda_{n + 1} not computed "
                f"({self.n_computed} of {self.interface_size} eigenpairs)"
            )
        return 0.0


@dataclass(eq=False)
class CoarseSpace:
    basis: sp.csc_matrix        # R_H^T, one column per kept coarse function
    A_H: np.ndarray
    factor: Optional[tuple]     # scipy.linalg.cho_factor output, None if empty
    n_selected: List[int]
    dropped: int = 0
    owners: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.dim == 0:
            return np.zeros(0)
        return sla.cho_solve(self.factor, rhs)

    def correction(self, residual: np.ndarray) -> np.ndarray:
        """R_H^T A_H^-1 R_H residual"""
        if self.dim == 0:
            return np.zeros_like(residual)
        return self.basis @ self.solve(self.basis.T @ residual)


@dataclass
class ApproximationReport:
    error_energy: float
    norm_energy: float
    relative_error: float
    Lambda: float
    coarse_dim: int

    @property
    def within_bound(self) -> bool:
        return self.relative_error <= self.Lambda * (1 + 1e-10) + 1e-14


def _positions(star_dofs: np.ndarray, subset: np.ndarray) -> np.ndarray:
    return np.searchsorted(star_dofs, subset)


def factor_local(system: AssembledSystem, sub: Subdomain, ordering: str = "mmd",
                 tolerances: Tolerances = DEFAULT_TOLERANCES) -> CholeskyFactor:
    """Factor A~_i, the block of A on the free interior DOFs of omega_i*"""
    I = sub.star_interior
    return chol_factor(system.A[I][:, I], ordering=ordering, tolerances=tolerances)


def local_particular(
    system: AssembledSystem,
    decomposition: Decomposition,
    i: int,
    factor: CholeskyFactor,
    f: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Solve A~_i phi = R~_i f with zero trace on the internal boundary of omega_i*

    Returns:
        (u_i^p on the dofs of omega_i, phi on star_dofs)
    """
    sub = decomposition[i]
    f = system.f if f is None else f
    phi = np.zeros(sub.star_dofs.size)
    phi[_positions(sub.star_dofs, sub.star_interior)] = factor.solve(f[sub.star_interior])
    return phi[_positions(sub.star_dofs, sub.dofs)], phi


def harmonic_schur(system: AssembledSystem, decomposition: Decomposition, i: int,
                   factor: CholeskyFactor) -> HarmonicExtension:
    """
    Parameterize the a-harmonic functions on omega_i* by their interface values

    E g = g on the interface and -A_II^-1 A_IG g inside; S = A_GG - A_GI A_II^-1 A_IG.
    """
    sub = decomposition[i]
    n_star = sub.star_dofs.size
    pos_I = _positions(sub.star_dofs, sub.star_interior)
    pos_G = _positions(sub.star_dofs, sub.star_interface)
    n_G = pos_G.size
    if n_G == 0:
        return HarmonicExtension(np.zeros((n_star, 0)), np.zeros((0, 0)), pos_I, pos_G)

    A_star = assemble_local(system, sub.star_triangles, sub.star_dofs)
    A_IG = A_star[pos_I][:, pos_G].toarray()
    A_GG = A_star[pos_G][:, pos_G].toarray()
    X = factor.solve(A_IG) if pos_I.size else np.zeros((0, n_G))
    S = A_GG - A_IG.T @ X
    S = 0.5 * (S + S.T)
    E = np.zeros((n_star, n_G))
    E[pos_I] = -X
    E[pos_G] = np.eye(n_G)
    return HarmonicExtension(E, S, pos_I, pos_G)


def local_eigenproblem(
    system: AssembledSystem,
    decomposition: Decomposition,
    i: int,
    factor: CholeskyFactor,
    k: int,
) -> LocalReduction:
    """
    Largest k eigenpairs of a_{omega_i}(Xi psi, Xi v) = lambda a_{omega_i*}(psi, v)
    over a-harmonic psi, v

    Xi psi vanishes on the internal boundary of omega_i, so its energy on
    omega_i is the global form on the zero-trace DOFs of omega_i.
    """
    sub = decomposition[i]
    ext = harmonic_schur(system, decomposition, i, factor)
    n_G = ext.S.shape[0]
    if n_G == 0:
        logger.warning(f"Subdomain {i}: empty interface, harmonic space is trivial")
        return LocalReduction(i, np.zeros(0), np.zeros((sub.star_dofs.size, 0)), 0)

    scale = decomposition.pou_diagonal(i)
    zero_in_dofs = np.searchsorted(sub.dofs, sub.zero_dofs)
    Z = scale[zero_in_dofs, None] * ext.E[_positions(sub.star_dofs, sub.zero_dofs)]
    A_zz = system.A[sub.zero_dofs][:, sub.zero_dofs]
    B = Z.T @ (A_zz @ Z)
    B = 0.5 * (B + B.T)

    lam, G = gen_sym_eig(B, ext.S, min(k, n_G))
    lam = np.clip(lam, 0.0, None)
    psi = ext.E @ G

    residual = 0.0
    if psi.shape[1] and ext.interior_pos.size:
        I = sub.star_interior
        A_I_star = system.A[I][:, sub.star_dofs]
        num = np.linalg.norm(A_I_star @ psi, axis=0)
        den = np.linalg.norm(abs(A_I_star) @ np.abs(psi), axis=0) + np.finfo(float).tiny
        residual = float(np.max(num / den))
    return LocalReduction(i, lam, psi, n_G, harmonic_residual=residual)


def select_counts(
    reductions: Sequence[LocalReduction],
    n_loc: Optional[int] = None,
    eig_tol: Optional[float] = None,
) -> List[int]:
    """
    Number of eigenfunctions kept per subdomain: a fixed n_loc, or the
    smallest n with sqrt(lambda_{n+1}) <= eig_tol
    """
    if (n_loc is None) == (eig_tol is None):
        raise ValueError("Give exactly one of n_loc and eig_tol")
    counts = []
    for red in reductions:
        available = red.n_computed if red.n_computed == red.interface_size else red.n_computed - 1
        available = max(available, 0)
        if n_loc is not None:
            n = min(n_loc, available)
            if n < n_loc and red.n_computed < red.interface_size:
                logger.warning(f"Subdomain {red.index}: only {n} eigenfunctions usable for n_loc={n_loc}")
        else:
            above = np.flatnonzero(np.sqrt(red.eigenvalues) > eig_tol)
            n = int(above[-1]) + 1 if above.size else 0
            if n > available:
                logger.warning(
                    f"Subdomain {red.index}: no computed eigenvalue below tol={eig_tol:g}, using {available}"
                )
                n = available
        counts.append(int(n))
    return counts


def lambda_bound(reductions: Sequence[LocalReduction], k0: int, k0_star: int,
                 counts: Optional[Sequence[int]] = None) -> float:
    """Lambda = sqrt(k0 k0* max_i lambda_{n_i+1})"""
    if not reductions:
        return 0.0
    if counts is None:
        counts = [r.n_selected for r in reductions]
    worst = max(r.lambda_next(n) for r, n in zip(reductions, counts))
    value = float(np.sqrt(k0 * k0_star * max(worst, 0.0)))
    if value >= 1.0:
        logger.warning(f"Lambda = {value:.4g} >= 1: the iterative convergence guarantee does not apply")
    return value


def coarse_columns(decomposition: Decomposition, reductions: Sequence[LocalReduction],
                   counts: Sequence[int]) -> Tuple[sp.csc_matrix, np.ndarray]:
    """Column-stacked R_i^T Xi_i (psi_j restricted to omega_i), j < n_i"""
    rows, cols, vals, owners = [], [], [], []
    col = 0
    for red, n in zip(reductions, counts):
        if n == 0:
            continue
        sub = decomposition[red.index]
        local = decomposition.apply_pou(red.index, red.psi[_positions(sub.star_dofs, sub.dofs), :n])
        for j in range(n):
            nz = np.flatnonzero(local[:, j])
            rows.append(sub.dofs[nz])
            cols.append(np.full(nz.size, col, dtype=np.int64))
            vals.append(local[nz, j])
            owners.append(red.index)
            col += 1
    shape = (decomposition.dofmap.n_free, col)
    if col == 0:
        return sp.csc_matrix(shape), np.zeros(0, dtype=np.int64)
    basis = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    )
    return basis, np.asarray(owners, dtype=np.int64)


def build_coarse_space(
    system: AssembledSystem,
    decomposition: Decomposition,
    reductions: Sequence[LocalReduction],
    counts: Sequence[int],
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> CoarseSpace:
    """
    Assemble A_H = R_H A R_H^T and factor it, dropping linearly dependent
    columns found by pivoted QR on the diagonally scaled Gram matrix
    """
    basis, owners = coarse_columns(decomposition, reductions, counts)
    if basis.shape[1] == 0:
        logger.info("✓ Empty coarse space")
        return CoarseSpace(basis, np.zeros((0, 0)), None, list(counts), 0, owners)

    G = np.asarray((basis.T @ (system.A @ basis)).todense())
    G = 0.5 * (G + G.T)
    diag = np.diag(G).copy()
    nonzero = np.flatnonzero(diag > 0)
    keep = nonzero
    if nonzero.size:
        d = 1.0 / np.sqrt(diag[nonzero])
        Gn = d[:, None] * G[np.ix_(nonzero, nonzero)] * d[None, :]
        R, piv = sla.qr(Gn, mode="r", pivoting=True)
        r = np.abs(np.diag(R))
        rank = int(np.sum(r > tolerances.coarse_drop_rel * r[0]))
        keep = np.sort(nonzero[piv[:rank]])
    dropped = basis.shape[1] - keep.size
    if dropped:
        logger.warning(f"Dropped {dropped} linearly dependent coarse functions")
    basis = basis[:, keep].tocsc()
    A_H = G[np.ix_(keep, keep)]
    factor = sla.cho_factor(A_H, lower=True) if keep.size else None
    logger.info(f"✓ Coarse space dimension {keep.size} (selected {sum(counts)})")
    return CoarseSpace(basis, A_H, factor, list(counts), dropped, owners[keep])


def msgfem_approximate(
    system: AssembledSystem,
    coarse: CoarseSpace,
    particular: np.ndarray,
    f: Optional[np.ndarray] = None,
) -> np.ndarray:
    """u^G = u^p + u^s, u^s the Galerkin solution on the coarse space with right side f - A u^p"""
    f = system.f if f is None else f
    return particular + coarse.correction(f - system.A @ particular)


def harmonic_forms_dim(
    mesh: Mesh,
    triangles: np.ndarray,
    gamma_edges: Optional[np.ndarray] = None,
) -> int:
    """
    Dimension of the discrete harmonic 1-forms on the union D of `triangles`

    dim = (E_free - rank C_D) - (V_free - c0), with C_D the signed
    triangle-edge incidence of D without the Gamma edges, V_free the vertices
    of D off Gamma and c0 the components of D without Gamma contact.

    Args:
        gamma_edges: (E,) mask of edges carrying the essential condition
    """
    triangles = np.asarray(triangles, dtype=np.int64)
    if triangles.size == 0:
        return 0
    if gamma_edges is None:
        gamma_edges = np.zeros(mesh.n_edges, dtype=bool)
    gamma_edges = np.asarray(gamma_edges, dtype=bool)

    d_edges = np.unique(mesh.triangle_edges[triangles].ravel())
    d_vertices = np.unique(mesh.triangles[triangles].ravel())
    gamma_in_d = d_edges[gamma_edges[d_edges]]
    gamma_vertices = np.unique(mesh.edges[gamma_in_d].ravel())
    free_edges = d_edges[~gamma_edges[d_edges]]

    C = curl_incidence(mesh)[triangles][:, free_edges]
    rank = integer_rank(C)

    n = mesh.n_vertices
    e = mesh.edges[d_edges]
    graph = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    _, labels = connected_components(graph, directed=False)
    components = np.unique(labels[d_vertices])
    touched = np.unique(labels[gamma_vertices]) if gamma_vertices.size else np.zeros(0, dtype=int)
    c0 = int(np.setdiff1d(components, touched).size)

    v_free = d_vertices.size - gamma_vertices.size
    return int((free_edges.size - rank) - (v_free - c0))


def flat_prefix_length(eigenvalues: np.ndarray, gap: float = 3.0, window: int = 8) -> int:
    """Smallest k <= window with lambda_k / lambda_{k+1} >= gap, 0 if none"""
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size < 2 or lam[0] <= 0:
        return 0
    for k in range(1, min(window, lam.size - 1) + 1):
        if lam[k] <= 0 or lam[k - 1] / lam[k] >= gap:
            return k
    return 0


def decay_slope(eigenvalues: np.ndarray, k_range: Tuple[int, int] = (5, 40),
                floor_rel: float = DEFAULT_TOLERANCES.eigen_floor_rel) -> float:
    """Least-squares slope of log sqrt(lambda_k) against k over k_range (1-based, inclusive)"""
    lam = np.asarray(eigenvalues, dtype=float)
    if lam.size == 0 or lam[0] <= 0:
        return float("nan")
    k = np.arange(1, lam.size + 1)
    use = (k >= k_range[0]) & (k <= k_range[1]) & (lam > floor_rel * lam[0])
    if use.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(k[use], 0.5 * np.log(lam[use]), 1)
    return float(slope)


@dataclass
class LocalApproximation:
    index: int
    error: float
    norm_star: float
    sqrt_lambda_next: float

    @property
    def within_bound(self) -> bool:
        return self.error <= self.sqrt_lambda_next * self.norm_star * (1 + 1e-8) + 1e-13


class MSGFEM:
    """
    Offline/online driver for one assembled system and decomposition

    setup() factors every A~_i and solves every local eigenproblem; the
    factors are kept for the preconditioner.

    Example:
        method = MSGFEM(system, decomposition, n_eigs=21).setup()
        coarse = method.coarse_space(n_loc=10)
        u_G = method.approximate(coarse)
    """

    def __init__(
        self,
        system: AssembledSystem,
        decomposition: Decomposition,
        n_eigs: int = 41,
        ordering: str = "mmd",
        batch: Optional[SubdomainBatchProcessor] = None,
        tolerances: Tolerances = DEFAULT_TOLERANCES,
    ):
        self.system = system
        self.decomposition = decomposition
        self.n_eigs = n_eigs
        self.ordering = ordering
        self.batch = batch or SubdomainBatchProcessor()
        self.tolerances = tolerances
        self.factors: List[CholeskyFactor] = []
        self.reductions: List[LocalReduction] = []

    @property
    def indices(self) -> List[int]:
        return [sub.index for sub in self.decomposition.subdomains]

    def factor(self) -> "MSGFEM":
        if not self.factors:
            self.factors = self.batch.map_ordered(
                self.decomposition.subdomains,
                lambda sub: factor_local(self.system, sub, self.ordering, self.tolerances),
            )
            logger.info(f"✓ Factored {len(self.factors)} local matrices")
        return self

    def setup(self) -> "MSGFEM":
        self.factor()
        self.reductions = self.batch.map_ordered(
            self.indices,
            lambda i: local_eigenproblem(self.system, self.decomposition, i, self.factors[i], self.n_eigs),
        )
        worst = max((r.harmonic_residual for r in self.reductions), default=0.0)
        logger.info(f"✓ Solved {len(self.reductions)} local eigenproblems (harmonic residual {worst:.2e})")
        return self

    def particular(self, f: Optional[np.ndarray] = None) -> np.ndarray:
        """u^p = sum_i R_i^T Xi_i u_i^p"""
        self.factor()
        locals_ = self.batch.map_ordered(
            self.indices,
            lambda i: local_particular(self.system, self.decomposition, i, self.factors[i], f)[0],
        )
        u = np.zeros(self.system.n_dofs)
        for i, up in zip(self.indices, locals_):
            u[self.decomposition[i].dofs] += self.decomposition.apply_pou(i, up)
        return u

    def select(self, n_loc: Optional[int] = None, eig_tol: Optional[float] = None) -> List[int]:
        counts = select_counts(self.reductions, n_loc, eig_tol)
        for red, n in zip(self.reductions, counts):
            red.n_selected = n
        return counts

    def coarse_space(self, n_loc: Optional[int] = None, eig_tol: Optional[float] = None) -> CoarseSpace:
        counts = self.select(n_loc, eig_tol)
        return build_coarse_space(self.system, self.decomposition, self.reductions, counts, self.tolerances)

    def lambda_bound(self, counts: Optional[Sequence[int]] = None) -> float:
        return lambda_bound(self.reductions, self.decomposition.k0, self.decomposition.k0_star, counts)

    def approximate(self, coarse: CoarseSpace, f: Optional[np.ndarray] = None) -> np.ndarray:
        return msgfem_approximate(self.system, coarse, self.particular(f), f)

    def report(self, coarse: CoarseSpace, u_G: np.ndarray, u_h: np.ndarray) -> ApproximationReport:
        A = self.system.A
        err = energy_norm(A, u_h - u_G)
        norm = energy_norm(A, u_h)
        Lam = self.lambda_bound(coarse.n_selected)
        return ApproximationReport(err, norm, err / norm if norm > 0 else 0.0, Lam, coarse.dim)

    def local_approximation_errors(self, u_h: np.ndarray, f: Optional[np.ndarray] = None,
                                   counts: Optional[Sequence[int]] = None) -> List[LocalApproximation]:
        """
        Per subdomain: min over v in u_i^p + S_{n_i} of ||Xi_i(u_h - v)||_{a, omega_i},
        ||u_h||_{a, omega_i*} and sqrt(lambda_{n_i+1})
        """
        self.factor()
        if counts is None:
            counts = [r.n_selected for r in self.reductions]
        out = []
        for red, n in zip(self.reductions, counts):
            i = red.index
            sub = self.decomposition[i]
            up, _ = local_particular(self.system, self.decomposition, i, self.factors[i], f)
            scale = self.decomposition.pou_diagonal(i)
            zero_in_dofs = np.searchsorted(sub.dofs, sub.zero_dofs)
            target = (scale * (u_h[sub.dofs] - up))[zero_in_dofs]
            Z = (scale[:, None] * red.psi[_positions(sub.star_dofs, sub.dofs), :n])[zero_in_dofs]
            A_zz = self.system.A[sub.zero_dofs][:, sub.zero_dofs]
            if n:
                AZ = A_zz @ Z
                c, *_ = np.linalg.lstsq(Z.T @ AZ, AZ.T @ target, rcond=None)
                resid = target - Z @ c
            else:
                resid = target
            A_star = assemble_local(self.system, sub.star_triangles, sub.star_dofs)
            out.append(LocalApproximation(
                index=i,
                error=energy_norm(A_zz, resid),
                norm_star=energy_norm(A_star, u_h[sub.star_dofs]),
                sqrt_lambda_next=float(np.sqrt(red.lambda_next(n))),
            ))
        return out
