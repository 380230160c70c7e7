"""
Unit tests for structured meshes
Counts, orientation, boundary flags and hole validation
"""
import numpy as np
import pytest

from curlgfem.assembly import curl_incidence, grad_incidence
from curlgfem.mesh import (
    build_structured_mesh,
    hole_perimeter_edges,
    mesh_size,
)


# ============================================================================
# Counts and geometry
# ============================================================================

def test_unit_square_counts(unit_mesh):
    """Test 4x4 grid has the expected entity counts"""
    assert unit_mesh.n_vertices == 25
    assert unit_mesh.n_triangles == 32
    assert unit_mesh.n_edges == 56
    assert unit_mesh.boundary_edges.sum() == 16


def test_holed_counts(holed_mesh):
    """Test central hole removes one vertex and four cells"""
    assert holed_mesh.n_vertices == 24
    assert holed_mesh.n_triangles == 24
    assert holed_mesh.n_edges == 48
    assert holed_mesh.boundary_edges.sum() == 24
    assert holed_mesh.outer_boundary_edges.sum() == 16
    assert holed_mesh.hole_boundary_edges.sum() == 8
    assert holed_mesh.enclosed_hole_count == 1


def test_euler_characteristic(unit_mesh, holed_mesh):
    """Test V - E + T is 1 for the square and 0 with one hole"""
    for mesh, chi in ((unit_mesh, 1), (holed_mesh, 0)):
        assert mesh.n_vertices - mesh.n_edges + mesh.n_triangles == chi


def test_areas_positive_and_sum(unit_mesh, holed_mesh):
    """Test triangles are counterclockwise and tile the domain"""
    assert np.all(unit_mesh.areas > 0)
    assert unit_mesh.areas.sum() == pytest.approx(1.0)
    assert holed_mesh.areas.sum() == pytest.approx(0.75)


def test_rectangle_mapping():
    """Test vertices span the requested rectangle"""
    mesh = build_structured_mesh(6, 3, rect=(-0.25, 1.0, 1.25, 2.5))
    assert mesh.vertices[:, 0].min() == pytest.approx(-0.25)
    assert mesh.vertices[:, 0].max() == pytest.approx(1.25)
    assert mesh.vertices[:, 1].min() == pytest.approx(1.0)
    assert mesh.vertices[:, 1].max() == pytest.approx(2.5)
    assert mesh.cell_size == pytest.approx((0.25, 0.5))
    assert mesh.areas.sum() == pytest.approx(1.5 * 1.5)


def test_vertices_lexicographic(holed_mesh):
    """Test vertex numbering is (y, x) lexicographic"""
    v = holed_mesh.vertices
    order = np.lexsort((v[:, 0], v[:, 1]))
    assert np.array_equal(order, np.arange(holed_mesh.n_vertices))


def test_mesh_size(unit_mesh):
    """Test h is the cell diagonal"""
    assert mesh_size(unit_mesh) == pytest.approx(np.sqrt(2) / 4)


def test_arrays_read_only(unit_mesh):
    """Test mesh arrays cannot be modified in place"""
    with pytest.raises(ValueError):
        unit_mesh.vertices[0, 0] = 5.0


# ============================================================================
# Orientation
# ============================================================================

def test_edges_low_high(holed_mesh):
    """Test every edge is stored from lower to higher vertex index"""
    assert np.all(holed_mesh.edges[:, 0] < holed_mesh.edges[:, 1])


def test_signs_match_traversal(holed_mesh):
    """Test sign is +1 exactly when the triangle runs low to high"""
    mesh = holed_mesh
    for t in range(mesh.n_triangles):
        for p, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
            start, end = mesh.triangles[t, a], mesh.triangles[t, b]
            e = mesh.triangle_edges[t, p]
            assert set(mesh.edges[e]) == {start, end}
            assert mesh.triangle_signs[t, p] == (1 if start < end else -1)


def test_interior_edges_opposite_signs(holed_mesh):
    """Test the two triangles sharing an interior edge traverse it oppositely"""
    mesh = holed_mesh
    total = np.zeros(mesh.n_edges)
    np.add.at(total, mesh.triangle_edges.ravel(), mesh.triangle_signs.ravel())
    assert np.all(total[~mesh.boundary_edges] == 0)
    assert np.all(np.abs(total[mesh.boundary_edges]) == 1)


def test_curl_of_gradient_vanishes(holed_mesh):
    """Test the incidence matrices form a complex"""
    product = curl_incidence(holed_mesh) @ grad_incidence(holed_mesh)
    assert abs(product).max() == 0


# ============================================================================
# Holes and validation
# ============================================================================

def test_hole_perimeter_edges(holed_mesh):
    """Test hole perimeter has eight edges of the hole"""
    perimeters = hole_perimeter_edges(holed_mesh)
    assert len(perimeters) == 1
    assert perimeters[0].size == 8
    assert np.all(holed_mesh.hole_boundary_edges[perimeters[0]])


def test_hole_misaligned():
    """Test hole off the grid lines is rejected"""
    with pytest.raises(ValueError) as exc_info:
        build_structured_mesh(4, 4, holes=[(0.3, 0.25, 0.75, 0.75)])
    assert "not aligned" in str(exc_info.value)


def test_holes_touching():
    """Test holes need a free cell between them"""
    with pytest.raises(ValueError, match="overlap or touch"):
        build_structured_mesh(8, 8, holes=[(0.25, 0.25, 0.5, 0.5), (0.5, 0.25, 0.75, 0.5)])


def test_hole_spanning_domain():
    """Test a hole cutting the domain in two is rejected"""
    with pytest.raises(ValueError, match="spans"):
        build_structured_mesh(4, 4, holes=[(0.0, 0.25, 1.0, 0.5)])


def test_hole_outside():
    """Test a hole beyond the rectangle is rejected"""
    with pytest.raises(ValueError, match="outside"):
        build_structured_mesh(4, 4, holes=[(0.75, 0.75, 1.25, 1.0)])


def test_zero_cells():
    """Test empty grids are rejected"""
    with pytest.raises(ValueError):
        build_structured_mesh(0, 4)


def test_with_regions_shape(unit_mesh):
    """Test region tags must match the triangle count"""
    tagged = unit_mesh.with_regions(np.arange(unit_mesh.n_triangles) % 2)
    assert tagged.region_of_triangle.sum() == 16
    assert unit_mesh.region_of_triangle.sum() == 0
    with pytest.raises(ValueError):
        unit_mesh.with_regions(np.zeros(3))
