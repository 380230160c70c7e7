"""
Run configuration and numeric tolerances
Validated experiment settings shared by the CLI and the solver pipeline
"""
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from curlgfem.errors import ConfigError

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "CURLGFEM_OUTPUT_DIR"
LOG_LEVEL_ENV = "CURLGFEM_LOG_LEVEL"


@dataclass(frozen=True)
class Tolerances:
    """Numeric tolerances used across the package"""
    chol_pivot_rel: float = 1e-14   # pivots at or below this fraction of the largest are rejected
    coarse_drop_rel: float = 1e-12  # pivoted-QR threshold for dependent coarse columns
    pou_range: float = 1e-12        # allowed excursion of chi outside [0, 1]
    gmres_tol: float = 1e-6         # relative preconditioned-residual reduction
    breakdown_rel: float = 1e-14    # Arnoldi happy breakdown
    divergence_window: int = 5      # consecutive growth steps before Richardson aborts
    eigen_floor_rel: float = 1e-14  # eigenvalues below this times lambda_1 are ignored in fits
    roundoff_rel: float = 1e-10     # errors/residuals below this times the initial one are noise


DEFAULT_TOLERANCES = Tolerances()


def _split_list(value: Any) -> Any:
    """Accept "4, 8,12" as well as real lists"""
    if value is None or isinstance(value, (list, tuple)):
        return value
    text = str(value).strip()
    if not text:
        return None
    return [item.strip() for item in text.split(",") if item.strip()]


class RunConfig(BaseModel):
    """One experiment, as read from a flat key=value file"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    # Problem selection
    problem: Literal["smc", "manufactured", "holed"] = "smc"
    n_cells: int = Field(6, ge=1, description="SMC cells per side")
    fill: float = Field(0.75, gt=0, le=1, description="Conductor side as a fraction of the SMC cell")
    sigma_air: float = Field(1.0, gt=0)
    sigma_air_sweep: Optional[List[float]] = None
    mu_smc: float = Field(50.0, gt=0)
    cells_per_unit: int = Field(192, ge=1, description="Mesh cells per unit length (h = 1/cells_per_unit)")
    mesh_cells: int = Field(32, ge=1, description="Cells per side for manufactured/holed problems")
    frequency: int = Field(1, ge=1)
    n_holes: int = Field(1, ge=0)
    hole_cells: int = Field(2, ge=1)

    # Decomposition
    m: int = Field(4, ge=1, description="Subdomains per side")
    overlap: int = Field(2, ge=0, description="Element layers added to each block")
    ovsp: int = Field(8, ge=0, description="Oversampling layers")
    ovsp_sweep: Optional[List[int]] = None

    # Coarse space
    n_loc: int = Field(10, ge=0)
    n_loc_sweep: Optional[List[int]] = None
    eig_tol: Optional[float] = Field(None, gt=0)
    n_loc_max: int = Field(40, ge=0)
    subdomain: Union[int, Literal["interior", "all"]] = "interior"
    strict_topology: bool = Field(False, description="topo exits 4 on flat-prefix mismatches")

    # Solver
    solver: Literal["direct", "msgfem", "richardson", "gmres", "ras"] = "gmres"
    inner: Literal["energy", "l2"] = "energy"
    tol: float = Field(1e-6, gt=0, lt=1)
    max_iter: int = Field(200, ge=1)

    # Runtime
    workers: int = Field(1, ge=1)
    ordering: Literal["rcm", "mmd"] = "mmd"
    output_dir: str = "results"
    timings: bool = True
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    @field_validator("sigma_air_sweep", "ovsp_sweep", "n_loc_sweep", mode="before")
    @classmethod
    def parse_list(cls, v: Any) -> Any:
        return _split_list(v)

    @field_validator("sigma_air_sweep")
    @classmethod
    def sigmas_positive(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is not None and any(s <= 0 for s in v):
            raise ValueError("sigma_air_sweep entries must be positive")
        return v

    @field_validator("ovsp_sweep", "n_loc_sweep")
    @classmethod
    def counts_nonnegative(cls, v: Optional[List[int]]) -> Optional[List[int]]:
        if v is not None and any(c < 0 for c in v):
            raise ValueError("sweep entries must be >= 0")
        return v

    @field_validator("subdomain", mode="before")
    @classmethod
    def parse_subdomain(cls, v: Any) -> Any:
        if isinstance(v, str) and v.strip().lstrip("-").isdigit():
            return int(v)
        return v

    @field_validator("subdomain")
    @classmethod
    def subdomain_nonnegative(cls, v: Union[int, str]) -> Union[int, str]:
        if isinstance(v, int) and v < 0:
            raise ValueError("subdomain id must be >= 0")
        return v

    @field_validator("log_level", mode="before")
    @classmethod
    def upper_level(cls, v: Any) -> Any:
        return v.upper() if isinstance(v, str) else v

    @model_validator(mode="after")
    def decomposition_fits(self) -> "RunConfig":
        if self.problem == "smc":
            cells = round(1.5 * self.cells_per_unit)
        else:
            cells = self.mesh_cells
        if self.m > cells:
            raise ValueError(f"m={self.m} exceeds the {cells}x{cells} cell grid")
        return self

    @property
    def n_loc_values(self) -> List[int]:
        return list(self.n_loc_sweep) if self.n_loc_sweep else [self.n_loc]

    @property
    def ovsp_values(self) -> List[int]:
        return list(self.ovsp_sweep) if self.ovsp_sweep else [self.ovsp]

    @property
    def sigma_values(self) -> List[float]:
        return list(self.sigma_air_sweep) if self.sigma_air_sweep else [self.sigma_air]

    @property
    def n_eigs(self) -> int:
        """Eigenpairs to compute per subdomain (one more than any selection can use)"""
        return max([self.n_loc_max] + self.n_loc_values) + 1

    def provenance_fields(self) -> Dict[str, Any]:
        """Settings that determine the numbers in the output files"""
        return self.model_dump(mode="json", exclude={"output_dir", "log_level", "workers"})


# Preset registry: seeds for `preset=<name>` in config files
PRESETS: Dict[str, Dict[str, Any]] = {
    "smc-desk": {
        "problem": "smc", "n_cells": 6, "fill": 0.75, "cells_per_unit": 192,
        "m": 4, "overlap": 2, "ovsp": 8, "n_loc": 15,
    },
    "smc-small": {
        "problem": "smc", "n_cells": 2, "fill": 0.5, "cells_per_unit": 24,
        "m": 3, "overlap": 1, "ovsp": 2, "n_loc": 10, "n_loc_max": 20,
    },
    "manufactured": {
        "problem": "manufactured", "mesh_cells": 32, "m": 2, "overlap": 1, "ovsp": 2,
        "n_loc": 10, "solver": "gmres",
    },
    "holed-3": {
        "problem": "holed", "n_holes": 3, "mesh_cells": 24, "m": 3, "overlap": 1,
        "ovsp": 3, "n_loc_max": 8,
    },
}


def validate_config(data: Dict[str, Any]) -> tuple[bool, Optional[RunConfig], Optional[str]]:
    """
    Validate raw settings against RunConfig

    Args:
        data: Mapping of field name to value (strings are coerced)

    Returns:
        Tuple of (success, config, error_message)
    """
    try:
        return True, RunConfig(**data), None
    except ValidationError as e:
        return False, None, str(e)


def parse_overrides(overrides: Sequence[str]) -> Dict[str, str]:
    """Turn ["m=4", "ovsp=6"] into a dict, rejecting malformed items"""
    parsed = {}
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"Override '{item}' is not of the form key=value")
        parsed[key.strip()] = value.strip()
    return parsed


def load_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = ()) -> RunConfig:
    """
    Build a RunConfig from a key=value file plus command-line overrides

    Precedence (lowest first): preset, file, overrides, CURLGFEM_OUTPUT_DIR.

    Raises:
        ConfigError: Missing file, malformed line, unknown preset or invalid field
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        for key, value in dotenv_values(path).items():
            if value is None:
                raise ConfigError(f"Config line '{key}' in {path} has no value")
            raw[key] = value
    raw.update(parse_overrides(overrides))

    preset_name = raw.pop("preset", None)
    data: Dict[str, Any] = {}
    if preset_name:
        if preset_name not in PRESETS:
            raise ConfigError(f"Unknown preset '{preset_name}' (choose from {sorted(PRESETS)})")
        data.update(PRESETS[preset_name])
    data.update(raw)

    env_output = os.getenv(OUTPUT_DIR_ENV)
    if env_output:
        data["output_dir"] = env_output
    env_level = os.getenv(LOG_LEVEL_ENV)
    if env_level and "log_level" not in raw:
        data["log_level"] = env_level

    ok, config, error = validate_config(data)
    if not ok:
        raise ConfigError(f"Invalid configuration: {error}")
    logger.debug(f"Loaded config: {config.model_dump(mode='json')}")
    return config
