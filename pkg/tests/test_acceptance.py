"""
Desk-scale trend checks (run with -m slow)
Eigenvalue decay, error bounds under contrast, mesh convergence and iteration tables
"""
import numpy as np
import pytest

from curlgfem.assembly import energy_error
from curlgfem.decomp import build_decomposition
from curlgfem.msgfem import MSGFEM, decay_slope, factor_local, local_eigenproblem
from curlgfem.problems import holed_domain, manufactured_problem, smc_problem
from curlgfem.reports import TableRow, monotone_inversions
from curlgfem.solvers import TwoLevelADEF2, contraction_violations, direct_solve, gmres, richardson_msgfem

pytestmark = pytest.mark.slow


def small_smc(sigma_air=1.0):
    return smc_problem(n_cells=2, fill=0.5, sigma_air=sigma_air, cells_per_unit=24).assemble()


def interior_eigenvalues(system, m, overlap, ovsp, k):
    d = build_decomposition(system.mesh, m, overlap, ovsp, dofmap=system.dofmap)
    i = d.most_interior()
    return local_eigenproblem(system, d, i, factor_local(system, d[i]), k).eigenvalues


def iterations(system, m, overlap, ovsp, n_loc):
    d = build_decomposition(system.mesh, m, overlap, ovsp, dofmap=system.dofmap)
    method = MSGFEM(system, d, n_eigs=n_loc + 1).setup()
    B = TwoLevelADEF2(system, d, method.factors, method.coarse_space(n_loc=n_loc))
    _, log = gmres(system, B, tol=1e-6)
    assert log.converged
    return log.iterations


# ============================================================================
# Eigenvalue decay
# ============================================================================

def test_oversampling_accelerates_decay():
    """Test more oversampling layers give strictly faster eigenvalue decay"""
    system = small_smc()
    slopes = [decay_slope(interior_eigenvalues(system, 3, 1, ovsp, 41)) for ovsp in (0, 2, 4)]
    assert slopes[2] < slopes[1] < slopes[0] < 0
    assert slopes[1] < -0.02


def test_holes_slow_eigenvalue_decay():
    """Test holes inside the oversampling domain keep leading eigenvalues large"""
    plain = holed_domain(n_holes=0, mesh_cells=24).assemble()
    holed = holed_domain(n_holes=3, mesh_cells=24).assemble()
    without = interior_eigenvalues(plain, 3, 1, 3, 8)
    with_holes = interior_eigenvalues(holed, 3, 1, 3, 8)
    assert with_holes[2] > without[2]


# ============================================================================
# Error bounds under high contrast
# ============================================================================

@pytest.mark.parametrize("sigma_air", [1.0, 1e-3])
def test_msgfem_bound_high_contrast(sigma_air):
    """Test ||u_h - u^G||_a <= Lambda ||u_h||_a on the composite"""
    system = small_smc(sigma_air)
    u_h = direct_solve(system)
    d = build_decomposition(system.mesh, 3, 1, 3, dofmap=system.dofmap)
    method = MSGFEM(system, d, n_eigs=31).setup()
    for n_loc in (5, 10, 20, 30):
        coarse = method.coarse_space(n_loc=n_loc)
        report = method.report(coarse, method.approximate(coarse), u_h)
        assert report.within_bound, (n_loc, report)


@pytest.mark.parametrize("sigma_air", [1.0, 1e-3])
def test_richardson_contraction_high_contrast(sigma_air):
    """Test every Richardson step contracts the energy error by Lambda"""
    system = small_smc(sigma_air)
    u_h = direct_solve(system)
    d = build_decomposition(system.mesh, 3, 1, 3, dofmap=system.dofmap)
    method = MSGFEM(system, d, n_eigs=31).setup()
    contracting = 0
    for n_loc in (10, 20, 30):
        coarse = method.coarse_space(n_loc=n_loc)
        Lam = method.lambda_bound(coarse.n_selected)
        if Lam >= 1:
            continue
        contracting += 1
        B = TwoLevelADEF2(system, d, method.factors, coarse)
        _, log = richardson_msgfem(system, B, tol=1e-10, max_iter=100, reference=u_h, Lambda=Lam)
        assert log.errors[-1] < log.errors[0]
        assert contraction_violations(log, Lam) == []
    assert contracting >= 1


# ============================================================================
# Iteration counts
# ============================================================================

def test_contrast_robust_iterations():
    """Test sigma_air = 1 and 0.01 need nearly the same GMRES iterations"""
    counts = [iterations(small_smc(sigma), 3, 1, 3, 15) for sigma in (1.0, 1e-2)]
    assert abs(counts[0] - counts[1]) <= 5
    assert max(counts) <= 60


def test_iteration_table_trends():
    """Test iteration counts fall with n_loc and oversampling on a 3x3 grid"""
    system = small_smc()
    table = [
        TableRow(1.0, ovsp, n_loc, iterations(system, 3, 1, ovsp, n_loc), True, float("nan"), 0)
        for ovsp in (1, 2, 3)
        for n_loc in (2, 8, 16)
    ]
    assert monotone_inversions(table) <= 1
    first = {(r.ovsp, r.n_loc): r.iterations for r in table}
    assert first[(3, 16)] < first[(1, 2)]


# ============================================================================
# Discretization
# ============================================================================

def test_manufactured_convergence_rate():
    """Test first-order energy convergence up to 128 cells"""
    errors = []
    for cells in (16, 32, 64, 128):
        spec = manufactured_problem(mesh_cells=cells)
        system = spec.assemble()
        errors.append(energy_error(system, direct_solve(system), spec.exact, spec.exact_curl))
    rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all((rates > 0.9) & (rates < 1.1))
