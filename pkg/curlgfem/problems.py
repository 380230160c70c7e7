"""
Problem gallery
SMC eddy-current benchmark, a smooth manufactured problem and holed-domain fixtures
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
import sympy

from curlgfem.assembly import (
    AssembledSystem,
    CoefficientField,
    ScalarField,
    SourceTerm,
    TangentialData,
    VectorField,
    assemble,
)
from curlgfem.mesh import Mesh, Rect, UNIT_SQUARE, build_structured_mesh

logger = logging.getLogger(__name__)

AIR = 0
CONDUCTOR = 1

SMC_RECT: Rect = (-0.25, -0.25, 1.25, 1.25)


def _uniform_regions(centroids: np.ndarray) -> np.ndarray:
    return np.zeros(len(centroids), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Everything needed to mesh and assemble one test problem"""
    name: str
    nx: int
    ny: int
    rect: Rect = UNIT_SQUARE
    holes: Tuple[Rect, ...] = ()
    region_fn: Callable[[np.ndarray], np.ndarray] = _uniform_regions
    coefficients: Dict[int, Tuple[float, float]] = field(default_factory=lambda: {AIR: (1.0, 1.0)})
    source: SourceTerm = None
    tangential: TangentialData = None
    essential_holes: bool = True
    exact: Optional[VectorField] = None
    exact_curl: Optional[ScalarField] = None
    description: str = ""
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for region, (nu, kappa) in self.coefficients.items():
            if not (nu > 0 and kappa > 0):
                raise ValueError(f"Region {region}: coefficients must be positive, got nu={nu}, kappa={kappa}")

    def build_mesh(self) -> Mesh:
        mesh = build_structured_mesh(self.nx, self.ny, self.rect, self.holes)
        return mesh.with_regions(self.region_fn(mesh.centroids))

    def coefficient_field(self, mesh: Mesh) -> CoefficientField:
        return CoefficientField.from_regions(mesh, self.coefficients)

    def constrained_edges(self, mesh: Mesh) -> np.ndarray:
        """Edges with the essential tangential condition"""
        if self.essential_holes:
            return mesh.boundary_edges.copy()
        return mesh.outer_boundary_edges.copy()

    def assemble(self, mesh: Optional[Mesh] = None) -> AssembledSystem:
        mesh = mesh or self.build_mesh()
        system = assemble(
            mesh,
            self.coefficient_field(mesh),
            source=self.source,
            tangential=self.tangential,
            constrained=self.constrained_edges(mesh),
        )
        logger.info(f"✓ {self.name}: {mesh.n_triangles} triangles, {system.n_dofs} free DOFs")
        return system

    def refined(self) -> "ProblemSpec":
        """Same problem on the uniformly refined grid"""
        params = dict(self.params)
        for key in ("cells_per_unit", "mesh_cells"):
            if key in params:
                params[key] = 2 * params[key]
        return replace(self, nx=2 * self.nx, ny=2 * self.ny, params=params)

    def to_config(self) -> Dict[str, Any]:
        """Settings reproducing this problem through RunConfig"""
        return {"problem": self.name, **self.params}


def smc_problem(
    n_cells: int = 6,
    fill: float = 0.75,
    sigma_air: float = 1.0,
    cells_per_unit: int = 192,
    mu_smc: float = 50.0,
    sigma_smc: float = 100.0,
) -> ProblemSpec:
    """
    Soft magnetic composite: n x n square conductors of side fill/n inside
    [0, 1]^2, surrounded by air, on [-0.25, 1.25]^2 with n x u = 1 and f = 0.

    Raises:
        ValueError: The conductors or the air margin do not fall on grid lines
    """
    if n_cells < 1:
        raise ValueError(f"n_cells must be >= 1, got {n_cells}")
    if not 0 < fill <= 1:
        raise ValueError(f"fill must lie in (0, 1], got {fill}")
    if sigma_air <= 0:
        raise ValueError(f"sigma_air must be positive, got {sigma_air}")
    if cells_per_unit % 4:
        raise ValueError(f"cells_per_unit={cells_per_unit} does not resolve the 0.25 air margin")
    if cells_per_unit % n_cells:
        raise ValueError(f"cells_per_unit={cells_per_unit} is not a multiple of n_cells={n_cells}")
    per_cell = cells_per_unit // n_cells
    conductor = fill * per_cell
    gap2 = per_cell - conductor
    if abs(conductor - round(conductor)) > 1e-9 or round(gap2) % 2:
        raise ValueError(
            f"fill={fill} is not resolvable: conductor spans {conductor:g} of {per_cell} mesh cells "
            f"and must be an integer leaving an even gap"
        )
    gap = (1.0 - fill) / 2.0

    def regions(centroids: np.ndarray) -> np.ndarray:
        x, y = centroids[:, 0], centroids[:, 1]
        inside = (x > 0) & (x < 1) & (y > 0) & (y < 1)
        xi = np.mod(x * n_cells, 1.0)
        eta = np.mod(y * n_cells, 1.0)
        core = (xi > gap) & (xi < 1 - gap) & (eta > gap) & (eta < 1 - gap)
        return np.where(inside & core, CONDUCTOR, AIR).astype(np.int64)

    nx = 3 * cells_per_unit // 2
    return ProblemSpec(
        name="smc",
        nx=nx,
        ny=nx,
        rect=SMC_RECT,
        region_fn=regions,
        coefficients={AIR: (1.0, sigma_air), CONDUCTOR: (1.0 / mu_smc, sigma_smc)},
        source=None,
        tangential=1.0,
        description=f"SMC eddy current, {n_cells}x{n_cells} cells, fill {fill}, contrast {sigma_smc / sigma_air:g}",
        params=dict(n_cells=n_cells, fill=fill, sigma_air=sigma_air,
                    cells_per_unit=cells_per_unit, mu_smc=mu_smc),
    )


def manufactured_fields(frequency: int = 1) -> Tuple[VectorField, ScalarField, VectorField]:
    """
    u = (sin k pi y, sin k pi x) with nu = kappa = 1

    Returns:
        (u, curl u, f = curl curl u + u) as numpy callables
    """
    x, y = sympy.symbols("x y")
    k = sympy.Integer(frequency) * sympy.pi
    ux, uy = sympy.sin(k * y), sympy.sin(k * x)
    curl = sympy.diff(uy, x) - sympy.diff(ux, y)
    fx = sympy.diff(curl, y) + ux
    fy = -sympy.diff(curl, x) + uy
    u_num = sympy.lambdify((x, y), (ux, uy), "numpy")
    curl_num = sympy.lambdify((x, y), curl, "numpy")
    f_num = sympy.lambdify((x, y), (fx, fy), "numpy")
    return u_num, curl_num, f_num


def manufactured_problem(mesh_cells: int = 32, frequency: int = 1) -> ProblemSpec:
    """Unit square with a known smooth solution; the boundary data is its tangential trace"""
    if mesh_cells < 1 or frequency < 1:
        raise ValueError("mesh_cells and frequency must be >= 1")
    u, curl, f = manufactured_fields(frequency)
    return ProblemSpec(
        name="manufactured",
        nx=mesh_cells,
        ny=mesh_cells,
        source=f,
        tangential=u,
        exact=u,
        exact_curl=curl,
        description=f"manufactured sin solution, frequency {frequency}",
        params=dict(mesh_cells=mesh_cells, frequency=frequency),
    )


def hole_layout(mesh_cells: int, n_holes: int, hole_cells: int = 2) -> Tuple[Rect, ...]:
    """
    Square holes of hole_cells cells on a lattice inside the central third
    of the unit square, one free cell between neighbours and around the lattice

    Raises:
        ValueError: Grid not divisible by 3 or too many holes for the lattice
    """
    if n_holes < 0:
        raise ValueError(f"n_holes must be >= 0, got {n_holes}")
    if n_holes == 0:
        return ()
    if mesh_cells % 3:
        raise ValueError(f"mesh_cells={mesh_cells} must be divisible by 3")
    third = mesh_cells // 3
    start = third + 1
    step = hole_cells + 1
    slots = [p for p in range(start, 2 * third, step) if p + hole_cells <= 2 * third - 1]
    capacity = len(slots) ** 2
    if n_holes > capacity:
        raise ValueError(
            f"{n_holes} holes of {hole_cells} cells do not fit a {mesh_cells}-cell grid (max {capacity})"
        )
    h = 1.0 / mesh_cells
    holes = []
    for k in range(n_holes):
        i = slots[k % len(slots)]
        j = slots[k // len(slots)]
        holes.append((i * h, j * h, (i + hole_cells) * h, (j + hole_cells) * h))
    return tuple(holes)


def holed_domain(
    n_holes: int,
    mesh_cells: int = 24,
    hole_cells: int = 2,
    essential_holes: bool = False,
) -> ProblemSpec:
    """
    Unit square with n_holes square holes, nu = kappa = 1, f = (1, 1) and
    homogeneous tangential data on the outer boundary. Hole perimeters carry
    the natural condition unless essential_holes is set.
    """
    holes = hole_layout(mesh_cells, n_holes, hole_cells)
    return ProblemSpec(
        name="holed",
        nx=mesh_cells,
        ny=mesh_cells,
        holes=holes,
        source=np.array([1.0, 1.0]),
        tangential=None,
        essential_holes=essential_holes,
        description=f"unit square with {n_holes} holes",
        params=dict(mesh_cells=mesh_cells, n_holes=n_holes, hole_cells=hole_cells),
    )


def problem_from_config(config) -> ProblemSpec:
    """ProblemSpec for a RunConfig (sigma_air taken from the config)"""
    if config.problem == "smc":
        return smc_problem(config.n_cells, config.fill, config.sigma_air,
                           config.cells_per_unit, config.mu_smc)
    if config.problem == "manufactured":
        return manufactured_problem(config.mesh_cells, config.frequency)
    if config.problem == "holed":
        return holed_domain(config.n_holes, config.mesh_cells, config.hole_cells)
    raise ValueError(f"Unknown problem '{config.problem}'")
