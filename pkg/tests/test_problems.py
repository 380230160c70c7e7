"""
Unit tests for the problem gallery
SMC geometry and resolvability, manufactured fields, hole lattices
"""
import numpy as np
import pytest

from curlgfem.assembly import energy_error
from curlgfem.config import RunConfig
from curlgfem.decomp import build_decomposition
from curlgfem.msgfem import factor_local, local_eigenproblem
from curlgfem.problems import (
    AIR,
    CONDUCTOR,
    hole_layout,
    holed_domain,
    manufactured_fields,
    manufactured_problem,
    problem_from_config,
    smc_problem,
)
from curlgfem.solvers import direct_solve


def conductor_area(mesh):
    return mesh.areas[mesh.region_of_triangle == CONDUCTOR].sum()


# ============================================================================
# SMC benchmark
# ============================================================================

def test_smc_conductor_area():
    """Test the conductors cover fill^2 of the unit square"""
    spec = smc_problem(n_cells=2, fill=0.5, cells_per_unit=24)
    mesh = spec.build_mesh()
    assert spec.nx == 36
    assert mesh.areas.sum() == pytest.approx(1.5 ** 2)
    assert conductor_area(mesh) == pytest.approx(0.25, abs=1e-12)


def test_smc_coefficients():
    """Test region coefficients follow the air/conductor table"""
    spec = smc_problem(n_cells=2, fill=0.5, sigma_air=1e-3, cells_per_unit=24, mu_smc=50.0)
    mesh = spec.build_mesh()
    coeff = spec.coefficient_field(mesh)
    inside = mesh.region_of_triangle == CONDUCTOR
    assert np.all(coeff.kappa[inside] == 100.0)
    assert np.all(coeff.nu[inside] == pytest.approx(0.02))
    assert np.all(coeff.kappa[~inside] == 1e-3)
    assert np.all(coeff.nu[~inside] == 1.0)


def test_smc_full_fill():
    """Test fill = 1 turns the whole unit square into conductor"""
    spec = smc_problem(n_cells=2, fill=1.0, sigma_air=100.0, cells_per_unit=24)
    mesh = spec.build_mesh()
    assert conductor_area(mesh) == pytest.approx(1.0)
    assert np.all(spec.coefficient_field(mesh).kappa == 100.0)


def test_smc_unresolvable_fill():
    """Test conductors must fall on grid lines"""
    with pytest.raises(ValueError, match="not resolvable"):
        smc_problem(n_cells=6, fill=0.8, cells_per_unit=192)


def test_smc_margin_resolution():
    """Test the air margin needs cells_per_unit divisible by 4"""
    with pytest.raises(ValueError, match="air margin"):
        smc_problem(n_cells=2, fill=0.5, cells_per_unit=30)
    with pytest.raises(ValueError, match="multiple of n_cells"):
        smc_problem(n_cells=5, fill=0.5, cells_per_unit=24)


def test_smc_parameter_validation():
    """Test nonsensical parameters are rejected"""
    with pytest.raises(ValueError, match="fill"):
        smc_problem(fill=0.0)
    with pytest.raises(ValueError, match="sigma_air"):
        smc_problem(sigma_air=-1.0)
    with pytest.raises(ValueError, match="n_cells"):
        smc_problem(n_cells=0)


def test_smc_tangential_data():
    """Test n x u = 1 is imposed on the whole outer boundary"""
    system = smc_problem(n_cells=2, fill=0.5, cells_per_unit=8).assemble()
    b = system.mesh.boundary_edges
    assert np.allclose(np.abs(system.g[b]), system.mesh.edge_lengths[b])
    assert np.all(system.load == 0)


@pytest.mark.parametrize("overlap,ovsp", [(1, 2), (2, 1)])
def test_uniform_smc_translation_invariant(overlap, ovsp):
    """Test equal coefficients everywhere give one spectrum for all interior subdomains"""
    system = smc_problem(n_cells=2, fill=0.5, sigma_air=100.0, cells_per_unit=24, mu_smc=1.0).assemble()
    d = build_decomposition(system.mesh, 4, overlap, ovsp, dofmap=system.dofmap)
    interior = [s.index for s in d.subdomains if min(s.block) > 0 and max(s.block) < 3]
    spectra = [
        local_eigenproblem(system, d, i, factor_local(system, d[i]), 10).eigenvalues
        for i in interior
    ]

    assert len(spectra) == 4
    ref = spectra[0]
    for lam in spectra[1:]:
        assert np.allclose(lam, ref, rtol=1e-8, atol=1e-12 * ref[0])


def test_refined_preserves_geometry():
    """Test refinement doubles the grid and keeps the conductor area"""
    spec = smc_problem(n_cells=2, fill=0.5, cells_per_unit=24)
    fine = spec.refined()
    assert fine.nx == 2 * spec.nx
    assert fine.params["cells_per_unit"] == 48
    assert conductor_area(fine.build_mesh()) == pytest.approx(0.25, abs=1e-12)


@pytest.mark.parametrize("spec", [
    smc_problem(n_cells=2, fill=0.5, cells_per_unit=24),
    manufactured_problem(mesh_cells=12, frequency=2),
    holed_domain(n_holes=2, mesh_cells=24),
])
def test_to_config_roundtrip(spec):
    """Test a problem's settings rebuild the same problem through RunConfig"""
    config = RunConfig(**spec.to_config(), m=2)
    again = problem_from_config(config)
    assert again.name == spec.name
    assert (again.nx, again.ny) == (spec.nx, spec.ny)
    assert again.holes == spec.holes


# ============================================================================
# Manufactured solution
# ============================================================================

def test_manufactured_fields_values():
    """Test curl and source of u = (sin pi y, sin pi x)"""
    u, curl, f = manufactured_fields(1)
    ux, uy = u(np.array([0.0]), np.array([0.5]))
    assert ux[0] == pytest.approx(1.0)
    assert uy[0] == pytest.approx(0.0)
    assert curl(0.0, 0.0) == pytest.approx(0.0, abs=1e-14)
    assert curl(1.0, 0.0) == pytest.approx(-2 * np.pi)
    fx, fy = f(0.0, 0.5)
    assert fx == pytest.approx(np.pi ** 2 + 1)
    assert fy == pytest.approx(0.0, abs=1e-14)


def test_manufactured_first_order_convergence():
    """Test the energy error halves when h halves"""
    errors = []
    for cells in (8, 16, 32):
        spec = manufactured_problem(mesh_cells=cells)
        system = spec.assemble()
        errors.append(energy_error(system, direct_solve(system), spec.exact, spec.exact_curl))
    for coarse, fine in zip(errors, errors[1:]):
        assert 1.7 <= coarse / fine <= 2.3


def test_manufactured_validation():
    """Test mesh size and frequency must be positive"""
    with pytest.raises(ValueError):
        manufactured_problem(mesh_cells=0)


# ============================================================================
# Holed domains
# ============================================================================

def test_hole_layout_lattice():
    """Test hole positions on the 24-cell grid"""
    h = 1 / 24
    holes = hole_layout(24, 4)
    assert len(holes) == 4
    assert holes[0] == pytest.approx((9 * h, 9 * h, 11 * h, 11 * h))
    assert holes[3] == pytest.approx((12 * h, 12 * h, 14 * h, 14 * h))
    assert hole_layout(24, 0) == ()
    assert len(hole_layout(12, 1)) == 1


def test_hole_layout_capacity():
    """Test too many holes and grids not divisible by 3 are rejected"""
    with pytest.raises(ValueError, match="do not fit"):
        hole_layout(24, 5)
    with pytest.raises(ValueError, match="divisible by 3"):
        hole_layout(25, 1)
    with pytest.raises(ValueError, match="n_holes"):
        hole_layout(24, -1)


def test_holed_domain_hole_edges_free():
    """Test hole perimeters carry the natural condition by default"""
    system = holed_domain(n_holes=2, mesh_cells=24).assemble()
    mesh = system.mesh
    assert mesh.enclosed_hole_count == 2
    assert np.all(system.dofmap.edge_to_dof[mesh.hole_boundary_edges] >= 0)
    assert np.all(system.dofmap.edge_to_dof[mesh.outer_boundary_edges] < 0)
    assert np.all(system.g == 0)


def test_holed_domain_essential_holes():
    """Test essential_holes constrains the hole perimeters too"""
    system = holed_domain(n_holes=1, mesh_cells=12, essential_holes=True).assemble()
    assert np.all(system.dofmap.edge_to_dof[system.mesh.hole_boundary_edges] < 0)


def test_problem_from_config():
    """Test the config selects and parameterizes the problem"""
    spec = problem_from_config(RunConfig(problem="holed", n_holes=3, mesh_cells=24, m=3))
    assert len(spec.holes) == 3
    spec = problem_from_config(RunConfig(problem="smc", n_cells=2, fill=0.5, cells_per_unit=24))
    assert spec.params["n_cells"] == 2
    assert spec.build_mesh().region_of_triangle.max() == CONDUCTOR
    assert spec.build_mesh().region_of_triangle.min() == AIR
