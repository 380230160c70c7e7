"""
Unit tests for CSV artifacts and summaries
Tests provenance, number formatting, empty files and mesh dumps
"""
import pytest

from curlgfem import __version__
from curlgfem.reports import (
    EigenRow,
    TableRow,
    config_hash,
    format_summary,
    monotone_inversions,
    provenance_line,
    read_csv,
    write_csv,
    write_mesh_dump,
)


def table(counts):
    return [
        TableRow(sigma_air=1.0, ovsp=o, n_loc=n, iterations=it, converged=True, Lambda=0.5, coarse_dim=4 * n)
        for (o, n), it in counts.items()
    ]


# ============================================================================
# Provenance Tests
# ============================================================================

def test_config_hash_stable():
    """Test the hash ignores key order and has 16 hex digits"""
    a = config_hash({"m": 4, "ovsp": 8})
    b = config_hash({"ovsp": 8, "m": 4})

    assert a == b
    assert len(a) == 16
    int(a, 16)
    assert config_hash({"m": 5, "ovsp": 8}) != a


def test_provenance_line():
    """Test the first line names the version and the config hash"""
    assert provenance_line() == f"# curlgfem {__version__} config=none"
    assert provenance_line({"m": 4}).endswith(config_hash({"m": 4}))


# ============================================================================
# CSV Tests
# ============================================================================

def test_write_csv_formats(tmp_path):
    """Test floats keep full precision, bools are lower case and None is empty"""
    rows = [
        {"name": "a", "value": 0.1, "ok": True, "missing": None},
        {"name": "b", "value": 0.5, "ok": False, "missing": None},
    ]
    path = write_csv(tmp_path / "sub" / "out.csv", rows, settings={"m": 2})
    lines = path.read_text().splitlines()

    assert lines[0] == provenance_line({"m": 2})
    assert lines[1] == "name,value,ok,missing"
    assert lines[2] == "a,0.10000000000000001,true,"
    assert lines[3] == "b,0.5,false,"


def test_write_csv_dataclass_rows(tmp_path):
    """Test dataclass rows round-trip through read_csv"""
    rows = [EigenRow(subdomain=0, k=k, eigenvalue=0.5 ** k, sqrt_eigenvalue=0.5 ** (k / 2),
                     ovsp=2, sigma_air=1.0) for k in range(1, 4)]
    path = write_csv(tmp_path / "eig.csv", rows)
    back = read_csv(path)

    assert len(back) == 3
    assert [int(r["k"]) for r in back] == [1, 2, 3]
    assert float(back[1]["eigenvalue"]) == 0.25
    assert back[0]["slope"] == ""


def test_write_csv_empty_with_header(tmp_path):
    """Test an empty result still gets a header"""
    path = write_csv(tmp_path / "empty.csv", [], row_type=EigenRow)
    lines = path.read_text().splitlines()

    assert len(lines) == 2
    assert lines[1].startswith("subdomain,k,eigenvalue")
    assert read_csv(path) == []


def test_write_csv_empty_without_header(tmp_path):
    """Test an empty result with no header source is an error"""
    with pytest.raises(ValueError, match="Cannot write header"):
        write_csv(tmp_path / "empty.csv", [])


def test_write_csv_deterministic(tmp_path):
    """Test identical inputs give identical bytes"""
    rows = [{"x": 1.0 / 3.0, "y": 2}]
    a = write_csv(tmp_path / "a.csv", rows, settings={"k": 1}).read_bytes()
    b = write_csv(tmp_path / "b.csv", rows, settings={"k": 1}).read_bytes()
    assert a == b


# ============================================================================
# Summary Tests
# ============================================================================

def test_format_summary():
    """Test the summary table aligns keys and formats floats"""
    text = format_summary({"iterations": 12, "relative_error": 1.234567891e-5}, title="Solve")
    lines = text.splitlines()

    assert lines[0] == "Solve"
    assert set(lines[1]) == {"="}
    assert "1.23457e-05" in lines[3]
    assert lines[2].index("12") == lines[3].index("1.23457e-05")


def test_format_summary_empty():
    """Test the empty summary is marked"""
    assert format_summary({}, title="T") == "T\n(empty)"


def test_monotone_inversions():
    """Test counting of adjacent pairs where more resources cost iterations"""
    monotone = table({(2, 4): 20, (2, 8): 12, (4, 4): 15, (4, 8): 9})
    assert monotone_inversions(monotone) == 0

    inverted = table({(2, 4): 20, (2, 8): 22, (4, 4): 25, (4, 8): 9})
    # (2,4)->(2,8) along n_loc and (2,4)->(4,4) along ovsp
    assert monotone_inversions(inverted) == 2


# ============================================================================
# Mesh dump Tests
# ============================================================================

def test_write_mesh_dump(tmp_path, unit_mesh):
    """Test the mesh dump writes one row per entity"""
    owners = [[0] for _ in range(unit_mesh.n_triangles)]
    paths = write_mesh_dump(tmp_path, unit_mesh, owners=owners)

    assert [p.name for p in paths] == ["vertices.csv", "triangles.csv", "edges.csv", "subdomains.csv"]
    assert len(read_csv(tmp_path / "vertices.csv")) == 25
    assert len(read_csv(tmp_path / "triangles.csv")) == 32
    edges = read_csv(tmp_path / "edges.csv")
    assert len(edges) == 56
    assert sum(r["boundary"] == "true" for r in edges) == 16
    assert len(read_csv(tmp_path / "subdomains.csv")) == 32


def test_write_mesh_dump_without_owners(tmp_path, holed_mesh):
    """Test subdomains.csv is optional"""
    paths = write_mesh_dump(tmp_path, holed_mesh)
    assert len(paths) == 3
    assert len(read_csv(tmp_path / "triangles.csv")) == 24
