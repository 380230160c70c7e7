"""
Unit tests for run configuration
Tests field validation, presets, key=value files and overrides
"""
import pytest

from curlgfem.config import (
    OUTPUT_DIR_ENV,
    PRESETS,
    RunConfig,
    load_config,
    parse_overrides,
    validate_config,
)
from curlgfem.errors import ConfigError


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    monkeypatch.delenv("CURLGFEM_LOG_LEVEL", raising=False)


# ============================================================================
# RunConfig Tests
# ============================================================================

def test_defaults():
    """Test the default run is the SMC benchmark solved with GMRES"""
    config = RunConfig()

    assert config.problem == "smc"
    assert config.n_cells == 6
    assert config.fill == 0.75
    assert config.solver == "gmres"
    assert config.subdomain == "interior"
    assert config.n_loc_values == [10]
    assert config.sigma_values == [1.0]


def test_sweeps_parse_comma_lists():
    """Test sweeps accept comma separated strings"""
    config = RunConfig(sigma_air_sweep="1, 1e-3,1e-6", ovsp_sweep="2,4", n_loc_sweep="4,8,12")

    assert config.sigma_values == [1.0, 1e-3, 1e-6]
    assert config.ovsp_values == [2, 4]
    assert config.n_loc_values == [4, 8, 12]
    assert config.n_eigs == 41


def test_n_eigs_covers_largest_selection():
    """Test n_eigs is one more than any selection"""
    assert RunConfig(n_loc=50, n_loc_max=10).n_eigs == 51


def test_sweep_entries_validated():
    """Test negative counts and non-positive sigmas are rejected"""
    ok, _, error = validate_config({"ovsp_sweep": "2,-1"})
    assert not ok
    assert "ovsp_sweep" in error

    ok, _, error = validate_config({"sigma_air_sweep": "1,0"})
    assert not ok
    assert "sigma_air_sweep" in error


def test_subdomain_selection():
    """Test subdomain accepts an id or a keyword"""
    assert RunConfig(subdomain="3").subdomain == 3
    assert RunConfig(subdomain="all").subdomain == "all"
    ok, _, _ = validate_config({"subdomain": "-1"})
    assert not ok
    ok, _, _ = validate_config({"subdomain": "middle"})
    assert not ok


def test_unknown_key_forbidden():
    """Test unknown settings are not silently ignored"""
    ok, config, error = validate_config({"overlapp": 2})

    assert not ok
    assert config is None
    assert "overlapp" in error


def test_m_must_fit_grid():
    """Test more subdomains per side than cells is rejected"""
    ok, _, error = validate_config({"problem": "manufactured", "mesh_cells": 8, "m": 9})
    assert not ok
    assert "exceeds" in error


def test_log_level_case_insensitive():
    """Test log levels are upper-cased"""
    assert RunConfig(log_level="debug").log_level == "DEBUG"


def test_provenance_excludes_runtime_settings():
    """Test output location and workers do not change the provenance"""
    a = RunConfig(workers=1, output_dir="a").provenance_fields()
    b = RunConfig(workers=4, output_dir="b").provenance_fields()
    assert a == b
    assert "workers" not in a


def test_config_is_frozen():
    """Test a loaded config cannot be mutated"""
    config = RunConfig()
    with pytest.raises(Exception):
        config.m = 3


# ============================================================================
# Loading Tests
# ============================================================================

def test_parse_overrides():
    """Test key=value items become a dict"""
    assert parse_overrides(["m=4", " ovsp = 6 "]) == {"m": "4", "ovsp": "6"}
    with pytest.raises(ConfigError, match="key=value"):
        parse_overrides(["m4"])
    with pytest.raises(ConfigError):
        parse_overrides(["=4"])


def test_load_config_file_and_overrides(tmp_path):
    """Test overrides take precedence over the file"""
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nproblem=manufactured\nmesh_cells=16\nm=2\novsp=3\n")

    config = load_config(path, ["ovsp=5"])

    assert config.problem == "manufactured"
    assert config.mesh_cells == 16
    assert config.ovsp == 5


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_are_valid(name, tmp_path):
    """Test every preset builds a valid config"""
    path = tmp_path / "preset.cfg"
    path.write_text(f"preset={name}\n")
    config = load_config(path)
    for key, value in PRESETS[name].items():
        assert getattr(config, key) == value


def test_preset_overridden_by_file(tmp_path):
    """Test file settings override the preset"""
    path = tmp_path / "run.cfg"
    path.write_text("preset=smc-small\nn_loc=3\n")
    config = load_config(path)
    assert config.n_cells == 2
    assert config.n_loc == 3


def test_unknown_preset():
    """Test unknown presets are reported"""
    with pytest.raises(ConfigError, match="Unknown preset"):
        load_config(None, ["preset=huge"])


def test_missing_file():
    """Test a missing config file raises ConfigError"""
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/run.cfg")


def test_invalid_value_raises_config_error():
    """Test validation failures name the field"""
    with pytest.raises(ConfigError) as exc_info:
        load_config(None, ["fill=1.5"])
    assert "fill" in str(exc_info.value)


def test_output_dir_from_environment(monkeypatch):
    """Test CURLGFEM_OUTPUT_DIR overrides the output directory"""
    monkeypatch.setenv(OUTPUT_DIR_ENV, "/tmp/curlgfem-out")
    config = load_config(None, ["output_dir=elsewhere"])
    assert config.output_dir == "/tmp/curlgfem-out"


def test_log_level_from_environment(monkeypatch):
    """Test CURLGFEM_LOG_LEVEL applies unless set explicitly"""
    monkeypatch.setenv("CURLGFEM_LOG_LEVEL", "warning")
    assert load_config().log_level == "WARNING"
    assert load_config(None, ["log_level=debug"]).log_level == "DEBUG"
