"""
Schwarz preconditioners and Krylov/Richardson iterations
One-level RAS, the two-level A-DEF2 combination with the spectral coarse space
"""
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Literal, Optional, Sequence, Tuple

import numpy as np

from curlgfem.assembly import AssembledSystem
from curlgfem.batch import SubdomainBatchProcessor
from curlgfem.config import DEFAULT_TOLERANCES, Tolerances
from curlgfem.decomp import Decomposition
from curlgfem.errors import DivergenceError
from curlgfem.la import CholeskyFactor, chol_factor, energy_norm
from curlgfem.msgfem import CoarseSpace, local_particular

logger = logging.getLogger(__name__)

InnerProduct = Literal["energy", "l2"]

HESSENBERG_CHUNK = 32


@dataclass
class IterationLog:
    """Residual (and optionally error) history, entry 0 is the initial guess"""
    method: str
    inner: str = "energy"
    residuals: List[float] = field(default_factory=list)
    errors: List[Optional[float]] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return max(len(self.residuals) - 1, 0)

    def record(self, residual: float, error: Optional[float], started: float) -> None:
        self.residuals.append(float(residual))
        self.errors.append(None if error is None else float(error))
        self.seconds.append(time.perf_counter() - started)

    def to_dict(self) -> dict:
        return asdict(self)


class Preconditioner:
    def apply(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError("This method should be implemented by subclasses.")

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.apply(r)


class OneLevelRAS(Preconditioner):
    """z = sum_j R_j^T Xi_j (A~_j^-1 R~_j r) restricted to omega_j"""

    def __init__(
        self,
        system: AssembledSystem,
        decomposition: Decomposition,
        factors: Sequence[CholeskyFactor],
        batch: Optional[SubdomainBatchProcessor] = None,
    ):
        if len(factors) != len(decomposition):
            raise ValueError(f"{len(factors)} local factors for {len(decomposition)} subdomains")
        self.system = system
        self.decomposition = decomposition
        self.factors = list(factors)
        self.batch = batch or SubdomainBatchProcessor()

    def apply(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.shape != (self.system.n_dofs,):
            raise ValueError(f"Residual has shape {r.shape}, expected ({self.system.n_dofs},)")
        d = self.decomposition
        pieces = self.batch.map_ordered(
            range(len(d)),
            lambda i: local_particular(self.system, d, i, self.factors[i], r)[0],
        )
        z = np.zeros_like(r)
        for i, piece in enumerate(pieces):  # fixed summation order
            z[d[i].dofs] += d.apply_pou(i, piece)
        return z


class TwoLevelADEF2(OneLevelRAS):
    """z = z1 + R_H^T A_H^-1 R_H (r - A z1), z1 the RAS correction"""

    def __init__(
        self,
        system: AssembledSystem,
        decomposition: Decomposition,
        factors: Sequence[CholeskyFactor],
        coarse: CoarseSpace,
        batch: Optional[SubdomainBatchProcessor] = None,
    ):
        super().__init__(system, decomposition, factors, batch)
        self.coarse = coarse

    def apply(self, r: np.ndarray) -> np.ndarray:
        z1 = super().apply(r)
        return z1 + self.coarse.correction(r - self.system.A @ z1)


def apply_B(preconditioner: Preconditioner, r: np.ndarray) -> np.ndarray:
    return preconditioner.apply(r)


def direct_solve(system: AssembledSystem, ordering: str = "mmd",
                 tolerances: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """u_h = A^-1 f by sparse Cholesky"""
    factor = chol_factor(system.A, ordering=ordering, tolerances=tolerances)
    return factor.solve(system.f)


def richardson_msgfem(
    system: AssembledSystem,
    B: Preconditioner,
    f: Optional[np.ndarray] = None,
    u0: Optional[np.ndarray] = None,
    tol: float = 1e-6,
    max_iter: int = 200,
    reference: Optional[np.ndarray] = None,
    Lambda: Optional[float] = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> Tuple[np.ndarray, IterationLog]:
    """
    u^{j+1} = u^j + B (f - A u^j)

    Stops when ||B r_j||_A <= tol ||B r_0||_A. Raises DivergenceError after
    `divergence_window` consecutive growth steps of the error (or of the
    residual when no reference is given) above roundoff_rel times its first value.
    """
    A = system.A
    f = system.f if f is None else f
    u = np.zeros(system.n_dofs) if u0 is None else np.array(u0, dtype=float)
    if Lambda is not None and Lambda >= 1:
        logger.warning(f"Richardson with Lambda = {Lambda:.4g} >= 1 may not converge")

    log = IterationLog(method="richardson", inner="energy")
    started = time.perf_counter()
    z = B.apply(f - A @ u)
    scale = energy_norm(A, z)
    growth = 0
    previous = None
    floor = None
    for it in range(max_iter + 1):
        res = energy_norm(A, z)
        err = energy_norm(A, u - reference) if reference is not None else None
        log.record(res, err, started)
        logger.debug(f"richardson {it}: ||Br||_A = {res:.3e}" + (f", error {err:.3e}" if err is not None else ""))

        if res <= tol * scale or scale == 0.0:
            log.converged = True
            break
        monitored = err if err is not None else res
        if floor is None:
            floor = tolerances.roundoff_rel * monitored
        if previous is not None and monitored > previous and monitored > floor:
            growth += 1
            if growth >= tolerances.divergence_window:
                raise DivergenceError(
                    f"Richardson diverging: {growth} consecutive growth steps at iteration {it}", log
                )
        else:
            growth = 0
        previous = monitored
        if it == max_iter:
            break
        u = u + z
        z = B.apply(f - A @ u)

    if log.converged:
        logger.info(f"✓ Richardson converged in {log.iterations} iterations")
    else:
        logger.warning(f"Richardson stopped at max_iter={max_iter} without reaching tol={tol:g}")
    return u, log


def gmres(
    system: AssembledSystem,
    B: Optional[Preconditioner] = None,
    f: Optional[np.ndarray] = None,
    u0: Optional[np.ndarray] = None,
    inner: InnerProduct = "energy",
    tol: float = DEFAULT_TOLERANCES.gmres_tol,
    max_iter: int = 200,
    reference: Optional[np.ndarray] = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> Tuple[np.ndarray, IterationLog]:
    """
    Full GMRES on B A u = B f

    Arnoldi uses modified Gram-Schmidt with one reorthogonalization pass in
    the chosen inner product; A v is cached per basis vector so the energy
    inner product costs one extra matvec per step.

    Stops when ||B(f - A u_j)|| <= tol ||B(f - A u_0)||.
    """
    A = system.A
    f = system.f if f is None else f
    precond: Callable[[np.ndarray], np.ndarray] = (B.apply if B is not None else (lambda r: r))
    if inner not in ("energy", "l2"):
        raise ValueError(f"Unknown inner product '{inner}'")
    energy = inner == "energy"

    n = system.n_dofs
    x0 = np.zeros(n) if u0 is None else np.array(u0, dtype=float)
    log = IterationLog(method="gmres", inner=inner)
    started = time.perf_counter()

    def error_of(x: np.ndarray) -> Optional[float]:
        return energy_norm(A, x - reference) if reference is not None else None

    r0 = precond(f - A @ x0)
    Ar0 = A @ r0 if energy else r0
    beta = float(np.sqrt(max(r0 @ Ar0, 0.0)))
    log.record(beta, error_of(x0), started)
    if beta == 0.0:
        log.converged = True
        return x0, log

    # basis grows by one column per step, H by HESSENBERG_CHUNK columns
    V: List[np.ndarray] = [r0 / beta]
    AV: List[np.ndarray] = [Ar0 / beta] if energy else V
    H = np.zeros((0, 0))

    def combine(y: np.ndarray) -> np.ndarray:
        x = x0.copy()
        for c, v in zip(y, V):
            x += c * v
        return x

    y = np.zeros(0)
    for j in range(max_iter):
        if j + 1 > H.shape[1]:
            cols = min(H.shape[1] + HESSENBERG_CHUNK, max_iter)
            grown = np.zeros((cols + 1, cols))
            grown[: H.shape[0], : H.shape[1]] = H
            H = grown
        w = precond(A @ V[j])
        for _ in range(2):
            for i in range(j + 1):
                c = float(AV[i] @ w)
                w -= c * V[i]
                H[i, j] += c
        Aw = A @ w if energy else w
        h = float(np.sqrt(max(w @ Aw, 0.0)))
        H[j + 1, j] = h
        breakdown = h <= tolerances.breakdown_rel * beta
        if not breakdown:
            V.append(w / h)
            if energy:
                AV.append(Aw / h)

        rhs = np.zeros(j + 2)
        rhs[0] = beta
        y, *_ = np.linalg.lstsq(H[: j + 2, : j + 1], rhs, rcond=None)
        res = float(np.linalg.norm(rhs - H[: j + 2, : j + 1] @ y))
        err = error_of(combine(y)) if reference is not None else None
        log.record(res, err, started)
        logger.debug(f"gmres {j + 1}: ||Br|| = {res:.3e}")

        if res <= tol * beta or breakdown:
            log.converged = True
            break

    u = combine(y)
    if log.converged:
        logger.info(f"✓ GMRES ({inner}) converged in {log.iterations} iterations")
    else:
        logger.warning(f"GMRES reached max_iter={max_iter}, relative residual {log.residuals[-1] / beta:.3e}")
    return u, log


def contraction_violations(log: IterationLog, Lambda: float, slack: float = 1e-8,
                           tolerances: Tolerances = DEFAULT_TOLERANCES) -> List[int]:
    """
    Iterations j where e_{j+1} > Lambda e_j (needs recorded errors)

    Steps whose new error is below roundoff_rel * e_0 carry no information
    about the contraction and are skipped.
    """
    errs = log.errors
    if not errs or errs[0] is None:
        return []
    floor = tolerances.roundoff_rel * errs[0]
    bad = []
    for j in range(len(errs) - 1):
        if errs[j] is None or errs[j + 1] is None or errs[j + 1] <= floor:
            continue
        if errs[j + 1] > Lambda * errs[j] * (1 + slack):
            bad.append(j)
    return bad


def gmres_envelope(Lambda: float, j: int) -> float:
    """Lambda^j (1 + Lambda) / (1 - Lambda)"""
    if Lambda >= 1:
        return float("inf")
    return Lambda ** j * (1 + Lambda) / (1 - Lambda)


def envelope_violations(log: IterationLog, Lambda: float, slack: float = 1e-8,
                        tolerances: Tolerances = DEFAULT_TOLERANCES) -> List[int]:
    """Iterations j where ||B r_j|| exceeds the envelope times ||B r_0|| (round-off residuals skipped)"""
    if Lambda >= 1 or not log.residuals:
        return []
    r0 = log.residuals[0]
    floor = tolerances.roundoff_rel * r0
    return [
        j for j, r in enumerate(log.residuals)
        if r > floor and r > gmres_envelope(Lambda, j) * r0 * (1 + slack)
    ]


def dense_operator(precond: Preconditioner, n: int) -> np.ndarray:
    """Columns B e_k, for small verification problems"""
    out = np.zeros((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        out[:, k] = precond.apply(e)
    return out
