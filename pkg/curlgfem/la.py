"""
Linear algebra kernels
Sparse SPD factorization, dense generalized eigensolves and exact integer rank
"""
import logging
import threading
from typing import Literal, Optional, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu
from sympy import QQ
from sympy.polys.matrices import DomainMatrix

from curlgfem.config import DEFAULT_TOLERANCES, Tolerances
from curlgfem.errors import NotSPDError

logger = logging.getLogger(__name__)

Ordering = Literal["rcm", "mmd"]


def check_symmetric(A: sp.spmatrix, rel_tol: float = 1e-12) -> sp.csr_matrix:
    """Return A as sorted CSR, raising ValueError if it is not symmetric"""
    A = sp.csr_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"Matrix must be square, got shape {A.shape}")
    A.sum_duplicates()
    A.sort_indices()
    if A.nnz:
        scale = np.abs(A.data).max()
        diff = A - A.T
        if diff.nnz and np.abs(diff.data).max() > rel_tol * scale:
            raise ValueError("Matrix is not symmetric")
    return A


class CholeskyFactor:
    """
    P A P^T = L D L^T computed by SuperLU with diagonal pivoting only

    The factor is immutable; solve() may be called from several threads.
    """

    def __init__(self, n: int, perm: np.ndarray, lu, ordering: Ordering,
                 outer: Optional[np.ndarray] = None):
        self.n = n
        self.perm = perm  # pivot position -> original index
        self.ordering = ordering
        self._outer = outer  # explicit RCM permutation applied before SuperLU
        self._lu = lu
        self._lock = threading.Lock()

    @property
    def pivots(self) -> np.ndarray:
        if self._lu is None:
            return np.zeros(0)
        return self._lu.U.diagonal()

    @property
    def lower(self) -> sp.csc_matrix:
        """L D^(1/2), so that A[perm][:, perm] = lower @ lower.T"""
        if self._lu is None:
            return sp.csc_matrix((0, 0))
        return (self._lu.L @ sp.diags(np.sqrt(self.pivots))).tocsc()

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"Right-hand side has {b.shape[0]} rows, factor has {self.n}")
        if self.n == 0:
            return np.zeros_like(b)
        with self._lock:
            if self._outer is not None:
                x = np.empty_like(b)
                x[self._outer] = self._lu.solve(np.ascontiguousarray(b[self._outer]))
                return x
            return self._lu.solve(b)


def chol_factor(
    A: sp.spmatrix,
    ordering: Ordering = "mmd",
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> CholeskyFactor:
    """
    Factor a sparse SPD matrix

    Args:
        A: Symmetric positive definite matrix
        ordering: "rcm" applies reverse Cuthill-McKee before a natural-order
            factorization; "mmd" lets SuperLU pick a symmetric minimum degree order

    Raises:
        NotSPDError: A pivot is nonpositive (pivot_index is the original index)
        ValueError: A is not square or not symmetric
    """
    A = check_symmetric(A)
    n = A.shape[0]
    if n == 0:
        return CholeskyFactor(0, np.zeros(0, dtype=np.int64), None, ordering)

    if ordering == "rcm":
        outer = np.asarray(reverse_cuthill_mckee(A, symmetric_mode=True), dtype=np.int64)
        target, permc_spec = A[outer][:, outer].tocsc(), "NATURAL"
    elif ordering == "mmd":
        outer = np.arange(n)
        target, permc_spec = A.tocsc(), "MMD_AT_PLUS_A"
    else:
        raise ValueError(f"Unknown ordering '{ordering}'")

    try:
        lu = splu(target, permc_spec=permc_spec, diag_pivot_thresh=0.0,
                  options=dict(SymmetricMode=True))
    except RuntimeError as e:
        # SuperLU reports exactly singular matrices this way
        raise NotSPDError(f"Matrix is not SPD: {e}", -1) from e

    # SuperLU postorders the column order, so compare row and column permutations
    perm = outer[np.argsort(lu.perm_c)]
    if not np.array_equal(lu.perm_r, lu.perm_c):
        k = int(np.flatnonzero(lu.perm_r != lu.perm_c)[0])
        raise NotSPDError("Matrix is not SPD: off-diagonal pivot required", int(outer[k]))

    factor = CholeskyFactor(n, perm, lu, ordering, outer if ordering == "rcm" else None)
    d = factor.pivots
    bad = np.flatnonzero(~(d > tolerances.chol_pivot_rel * np.abs(d).max()))
    if bad.size:
        k = int(bad[0])
        raise NotSPDError(
            f"Matrix is not SPD: pivot {d[k]:.3e} at index {int(perm[k])}", int(perm[k])
        )
    return factor


def chol_solve(factor: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    return factor.solve(b)


def gen_sym_eig(
    B: np.ndarray,
    S: np.ndarray,
    k: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Largest k eigenpairs of B x = lambda S x, eigenvalues descending

    S = L L^T reduces the pencil to the standard problem
    L^-1 B L^-T y = lambda y; eigenvectors x = L^-T y are S-orthonormal.

    Raises:
        NotSPDError: S is not positive definite
        ValueError: Shapes do not match
    """
    B = np.asarray(B, dtype=float)
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if B.shape != (n, n) or S.shape != (n, n):
        raise ValueError(f"Shape mismatch: B {B.shape}, S {S.shape}")
    if k > n:
        logger.warning(f"Requested {k} eigenpairs of a {n}-dimensional pencil, using {n}")
        k = n
    if k <= 0 or n == 0:
        return np.zeros(0), np.zeros((n, 0))

    try:
        L = sla.cholesky(S, lower=True)
    except sla.LinAlgError as e:
        raise NotSPDError(f"S is not positive definite: {e}", -1) from e

    C = sla.solve_triangular(L, B, lower=True)
    C = sla.solve_triangular(L, C.T, lower=True).T
    C = 0.5 * (C + C.T)
    w, Y = sla.eigh(C, subset_by_index=[n - k, n - 1])
    order = np.argsort(w)[::-1]
    w = w[order]
    X = sla.solve_triangular(L.T, Y[:, order], lower=False)
    return w, X


def integer_rank(M) -> int:
    """
    Exact rank of an integer matrix by elimination over the rationals

    Raises:
        ValueError: Entries that are not integers
    """
    M = sp.coo_matrix(M)
    data = np.asarray(M.data)
    if data.size and not np.all(np.equal(np.mod(data, 1), 0)):
        raise ValueError("integer_rank requires integer entries")
    rows: dict = {}
    for i, j, v in zip(M.row.tolist(), M.col.tolist(), data.tolist()):
        if v:
            rows.setdefault(i, {})
            rows[i][j] = rows[i].get(j, QQ(0)) + QQ(int(v))
    if not rows:
        return 0
    dm = DomainMatrix(rows, M.shape, QQ)
    return int(dm.rank())


def energy_inner(A: sp.spmatrix, u: np.ndarray, v: np.ndarray) -> float:
    return float(u @ (A @ v))


def energy_norm(A: sp.spmatrix, u: np.ndarray) -> float:
    """||u||_A, clipped at zero against rounding"""
    return float(np.sqrt(max(energy_inner(A, u, u), 0.0)))


def mgs(
    basis: np.ndarray,
    v: np.ndarray,
    inner=None,
    passes: int = 2,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Orthogonalize v against the orthonormal columns of basis by modified
    Gram-Schmidt, repeated `passes` times.

    Returns:
        (w, h) with w the orthogonalized vector and h the accumulated coefficients
    """
    inner = inner or (lambda x, y: float(x @ y))
    h = np.zeros(basis.shape[1])
    w = v.copy()
    for _ in range(passes):
        for j in range(basis.shape[1]):
            c = inner(basis[:, j], w)
            w -= c * basis[:, j]
            h[j] += c
    return w, h


def dense(A: Optional[sp.spmatrix]) -> np.ndarray:
    if A is None:
        return np.zeros((0, 0))
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
