"""
Experiment driver

    python -m curlgfem <command> [config.cfg] [key=value ...]

Commands: eigdecay, approx, solve, topo, mesh-dump. Each writes CSV files to
the configured output directory and prints a summary table.

Exit codes: 0 success, 2 configuration error, 3 solver divergence,
4 violated bound or internal assertion.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv

from curlgfem import __version__
from curlgfem.assembly import AssembledSystem, export_matrix_market
from curlgfem.batch import SubdomainBatchConfig, SubdomainBatchProcessor
from curlgfem.config import RunConfig, load_config
from curlgfem.decomp import Decomposition, build_decomposition
from curlgfem.errors import BoundViolation, ConfigError, CurlGfemError, DivergenceError
from curlgfem.la import energy_norm
from curlgfem.mesh import hole_perimeter_edges
from curlgfem.msgfem import (
    MSGFEM,
    decay_slope,
    factor_local,
    flat_prefix_length,
    harmonic_forms_dim,
    local_eigenproblem,
    msgfem_approximate,
)
from curlgfem.problems import ProblemSpec, problem_from_config
from curlgfem.reports import (
    EigenRow,
    ErrorRow,
    IterationRow,
    LocalErrorRow,
    TableRow,
    TopologyRow,
    format_summary,
    monotone_inversions,
    write_csv,
    write_mesh_dump,
)
from curlgfem.solvers import (
    IterationLog,
    OneLevelRAS,
    TwoLevelADEF2,
    contraction_violations,
    direct_solve,
    envelope_violations,
    gmres,
    richardson_msgfem,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_ASSERTION = 4


# ============================================================================
# Shared setup
# ============================================================================

def _problem(config: RunConfig, sigma_air: Optional[float] = None) -> ProblemSpec:
    if sigma_air is not None and sigma_air != config.sigma_air:
        config = config.model_copy(update={"sigma_air": sigma_air})
    try:
        return problem_from_config(config)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _decompose(config: RunConfig, system: AssembledSystem, ovsp: int) -> Decomposition:
    try:
        return build_decomposition(system.mesh, config.m, config.overlap, ovsp, dofmap=system.dofmap)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def _batch(config: RunConfig) -> SubdomainBatchProcessor:
    return SubdomainBatchProcessor(SubdomainBatchConfig(max_workers=config.workers))


def _selected_subdomains(config: RunConfig, decomposition: Decomposition) -> List[int]:
    if config.subdomain == "interior":
        return [decomposition.most_interior()]
    if config.subdomain == "all":
        return list(range(len(decomposition)))
    if config.subdomain >= len(decomposition):
        raise ConfigError(f"subdomain={config.subdomain} out of range (0..{len(decomposition) - 1})")
    return [config.subdomain]


def _selection(config: RunConfig) -> List[Tuple[Optional[int], Optional[float]]]:
    """(n_loc, eig_tol) pairs to evaluate"""
    if config.eig_tol is not None:
        return [(None, config.eig_tol)]
    return [(n, None) for n in config.n_loc_values]


def _output(config: RunConfig) -> Path:
    return Path(config.output_dir)


# ============================================================================
# eigdecay
# ============================================================================

def cmd_eigdecay(config: RunConfig) -> Dict[str, object]:
    """Local eigenvalues of the chosen subdomains for every (sigma_air, ovsp)"""
    settings = config.provenance_fields()
    batch = _batch(config)
    rows: List[EigenRow] = []
    summary: Dict[str, object] = {}
    for sigma in config.sigma_values:
        system = _problem(config, sigma).assemble()
        for ovsp in config.ovsp_values:
            decomposition = _decompose(config, system, ovsp)
            chosen = _selected_subdomains(config, decomposition)

            def solve(i: int):
                factor = factor_local(system, decomposition[i], config.ordering)
                return local_eigenproblem(system, decomposition, i, factor, config.n_eigs)

            for red in batch.map_ordered(chosen, solve):
                slope = decay_slope(red.eigenvalues)
                slope = None if np.isnan(slope) else slope
                for k, lam in enumerate(red.eigenvalues, start=1):
                    rows.append(EigenRow(red.index, k, float(lam), float(np.sqrt(lam)), ovsp, sigma, slope))
                summary[f"slope sigma_air={sigma:g} ovsp={ovsp} sub={red.index}"] = (
                    "n/a" if slope is None else slope
                )
    write_csv(_output(config) / "eigenvalues.csv", rows, settings, row_type=EigenRow)
    summary["eigenvalues"] = len(rows)
    return summary


# ============================================================================
# approx
# ============================================================================

def cmd_approx(config: RunConfig) -> Dict[str, object]:
    """One-shot MS-GFEM against the direct solution for each coarse selection"""
    settings = config.provenance_fields()
    system = _problem(config).assemble()
    u_h = direct_solve(system, config.ordering)
    rows: List[ErrorRow] = []
    local_rows: List[LocalErrorRow] = []
    for ovsp in config.ovsp_values:
        decomposition = _decompose(config, system, ovsp)
        method = MSGFEM(system, decomposition, n_eigs=config.n_eigs,
                        ordering=config.ordering, batch=_batch(config)).setup()
        particular = method.particular()
        for n_loc, eig_tol in _selection(config):
            coarse = method.coarse_space(n_loc=n_loc, eig_tol=eig_tol)
            u_G = msgfem_approximate(system, coarse, particular)
            report = method.report(coarse, u_G, u_h)
            label = n_loc if n_loc is not None else max(coarse.n_selected, default=0)
            ratio = report.relative_error / report.Lambda if report.Lambda > 0 else (
                0.0 if report.relative_error <= 1e-14 else float("inf")
            )
            rows.append(ErrorRow(
                n_loc=label, ovsp=ovsp, coarse_dim=coarse.dim,
                error_energy=report.error_energy, relative_error=report.relative_error,
                Lambda=report.Lambda, ratio=ratio, within_bound=report.within_bound,
                bound_active=report.Lambda < 1,
            ))
            for loc in method.local_approximation_errors(u_h, counts=coarse.n_selected):
                local_rows.append(LocalErrorRow(label, loc.index, loc.error, loc.norm_star,
                                                loc.sqrt_lambda_next, loc.within_bound))
            logger.info(f"ovsp={ovsp} n_loc={label}: relative error {report.relative_error:.3e}, "
                        f"Lambda {report.Lambda:.3e}")

    out = _output(config)
    write_csv(out / "errors.csv", rows, settings, row_type=ErrorRow)
    write_csv(out / "local_errors.csv", local_rows, settings, row_type=LocalErrorRow)

    violated = [r for r in rows if not r.within_bound]
    local_violated = [r for r in local_rows if not r.within_bound]
    if violated or local_violated:
        raise BoundViolation(
            f"{len(violated)} global and {len(local_violated)} local approximation bounds violated"
        )
    flagged = sum(1 for r in rows if not r.bound_active)
    return {
        "configurations": len(rows),
        "best relative error": min((r.relative_error for r in rows), default=float("nan")),
        "rows with Lambda >= 1": flagged,
    }


# ============================================================================
# solve
# ============================================================================

def _iteration_rows(log: IterationLog, sigma: float, ovsp: int, n_loc: int,
                    timings: bool) -> List[IterationRow]:
    return [
        IterationRow(log.method, log.inner, sigma, ovsp, n_loc, j, res, err,
                     secs if timings else None)
        for j, (res, err, secs) in enumerate(zip(log.residuals, log.errors, log.seconds))
    ]


def cmd_solve(config: RunConfig) -> Dict[str, object]:
    """Solve with the configured method over the sigma_air, ovsp and n_loc sweeps"""
    settings = config.provenance_fields()
    out = _output(config)
    rows: List[IterationRow] = []
    table: List[TableRow] = []
    summary: Dict[str, object] = {"solver": config.solver}
    violations = 0

    try:
        for sigma in config.sigma_values:
            system = _problem(config, sigma).assemble()
            u_h = direct_solve(system, config.ordering)
            summary[f"||u_h||_A sigma_air={sigma:g}"] = energy_norm(system.A, u_h)
            if config.solver == "direct":
                continue

            for ovsp in config.ovsp_values:
                decomposition = _decompose(config, system, ovsp)
                method = MSGFEM(system, decomposition, n_eigs=config.n_eigs,
                                ordering=config.ordering, batch=_batch(config))
                if config.solver == "ras":
                    method.factor()
                    B = OneLevelRAS(system, decomposition, method.factors, method.batch)
                    u, log = gmres(system, B, inner=config.inner, tol=config.tol,
                                   max_iter=config.max_iter, reference=u_h)
                    rows.extend(_iteration_rows(log, sigma, ovsp, 0, config.timings))
                    table.append(TableRow(sigma, ovsp, 0, log.iterations, log.converged, float("nan"), 0))
                    continue

                method.setup()
                for n_loc, eig_tol in _selection(config):
                    coarse = method.coarse_space(n_loc=n_loc, eig_tol=eig_tol)
                    Lam = method.lambda_bound(coarse.n_selected)
                    label = n_loc if n_loc is not None else max(coarse.n_selected, default=0)
                    key = f"sigma_air={sigma:g} ovsp={ovsp} n_loc={label}"

                    if config.solver == "msgfem":
                        report = method.report(coarse, method.approximate(coarse), u_h)
                        summary[f"relative error {key}"] = report.relative_error
                        violations += 0 if report.within_bound else 1
                        continue

                    B = TwoLevelADEF2(system, decomposition, method.factors, coarse, method.batch)
                    if config.solver == "richardson":
                        try:
                            u, log = richardson_msgfem(system, B, tol=config.tol, max_iter=config.max_iter,
                                                       reference=u_h, Lambda=Lam)
                        except DivergenceError as e:
                            if e.log is not None:
                                rows.extend(_iteration_rows(e.log, sigma, ovsp, label, config.timings))
                            raise
                        bad = contraction_violations(log, Lam) if Lam < 1 else []
                    else:
                        u, log = gmres(system, B, inner=config.inner, tol=config.tol,
                                       max_iter=config.max_iter, reference=u_h)
                        bad = envelope_violations(log, Lam) if Lam < 1 and config.inner == "energy" else []
                    if bad:
                        logger.error(f"{key}: bound violated at iterations {bad[:10]}")
                        violations += len(bad)

                    rows.extend(_iteration_rows(log, sigma, ovsp, label, config.timings))
                    table.append(TableRow(sigma, ovsp, label, log.iterations, log.converged,
                                          Lam, coarse.dim))
                    summary[f"iterations {key}"] = log.iterations
    finally:
        write_csv(out / "iterations.csv", rows, settings, row_type=IterationRow)

    if config.ovsp_sweep and config.n_loc_sweep:
        write_csv(out / "iteration_table.csv", table, settings, row_type=TableRow)
        for sigma in config.sigma_values:
            inversions = monotone_inversions([r for r in table if r.sigma_air == sigma])
            summary[f"table inversions sigma_air={sigma:g}"] = inversions
            if inversions > 1:
                logger.warning(f"Iteration table for sigma_air={sigma:g} has {inversions} inversions")
    if violations:
        raise BoundViolation(f"{violations} bound violations during {config.solver} runs")
    return summary


# ============================================================================
# topo
# ============================================================================

def enclosed_holes(system: AssembledSystem, triangles: np.ndarray) -> int:
    """Holes whose whole perimeter lies in the union of `triangles`"""
    mesh = system.mesh
    inside = np.zeros(mesh.n_edges, dtype=bool)
    inside[mesh.triangle_edges[triangles].ravel()] = True
    return sum(1 for edges in hole_perimeter_edges(mesh) if edges.size and inside[edges].all())


def cmd_topo(config: RunConfig) -> Dict[str, object]:
    """Harmonic-form dimension, hole count and flat eigenvalue prefix per oversampling domain"""
    settings = config.provenance_fields()
    system = _problem(config).assemble()
    decomposition = _decompose(config, system, config.ovsp)
    method = MSGFEM(system, decomposition, n_eigs=config.n_eigs,
                    ordering=config.ordering, batch=_batch(config)).setup()
    gamma = system.dofmap.constrained
    rows = []
    for sub, red in zip(decomposition.subdomains, method.reductions):
        rows.append(TopologyRow(
            subdomain=sub.index,
            dim_harmonic_forms=harmonic_forms_dim(system.mesh, sub.star_triangles, gamma),
            hole_count=enclosed_holes(system, sub.star_triangles),
            flat_prefix=flat_prefix_length(red.eigenvalues),
        ))
    write_csv(_output(config) / "topology.csv", rows, settings, row_type=TopologyRow)
    mismatched = [r.subdomain for r in rows if r.dim_harmonic_forms != r.hole_count]
    if mismatched:
        logger.warning(f"Harmonic-form dimension differs from the hole count on subdomains {mismatched}")
    # flat prefix is only compared where harmonic forms exist
    prefix_mismatched = [
        r.subdomain for r in rows
        if r.dim_harmonic_forms > 0 and r.flat_prefix != r.dim_harmonic_forms
    ]
    if prefix_mismatched:
        logger.warning(f"Flat eigenvalue prefix differs from the harmonic-form dimension on subdomains "
                       f"{prefix_mismatched}")
        if config.strict_topology:
            raise BoundViolation(f"{len(prefix_mismatched)} flat-prefix mismatches")
    return {
        "subdomains": len(rows),
        "holes": len(system.mesh.holes),
        "max dim": max((r.dim_harmonic_forms for r in rows), default=0),
        "dim mismatches": len(mismatched),
        "prefix mismatches": len(prefix_mismatched),
    }


# ============================================================================
# mesh-dump
# ============================================================================

def cmd_mesh_dump(config: RunConfig) -> Dict[str, object]:
    """Mesh, subdomain membership and the system matrix for external plotting"""
    settings = config.provenance_fields()
    spec = _problem(config)
    system = spec.assemble()
    decomposition = _decompose(config, system, config.ovsp)
    out = _output(config)
    paths = write_mesh_dump(out, system.mesh, decomposition.owners_of_triangles(), settings)
    paths.append(export_matrix_market(out / "A.mtx", system.A, comment=spec.description))
    return {
        "vertices": system.mesh.n_vertices,
        "edges": system.mesh.n_edges,
        "triangles": system.mesh.n_triangles,
        "free dofs": system.n_dofs,
        "files": len(paths),
    }


COMMANDS = {
    "eigdecay": cmd_eigdecay,
    "approx": cmd_approx,
    "solve": cmd_solve,
    "topo": cmd_topo,
    "mesh-dump": cmd_mesh_dump,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curlgfem",
        description="MS-GFEM coarse spaces and two-level Schwarz solvers for 2D H(curl) problems",
    )
    parser.add_argument("--version", action="version", version=f"curlgfem {__version__}")
    parser.add_argument("command", choices=sorted(COMMANDS), help="Experiment to run")
    parser.add_argument("args", nargs="*", metavar="[config] [key=value ...]",
                        help="Optional config file followed by key=value overrides")
    return parser


def split_arguments(args: Sequence[str]) -> Tuple[Optional[str], List[str]]:
    """First argument without '=' is the config path, the rest are overrides"""
    path = None
    overrides = []
    for item in args:
        if "=" not in item and path is None and not overrides:
            path = item
        else:
            overrides.append(item)
    return path, overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    path, overrides = split_arguments(ns.args)
    load_dotenv()  # CURLGFEM_* from .env, real environment wins
    try:
        config = load_config(path, overrides)
    except ConfigError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG

    logging.basicConfig(
        level=getattr(logging, config.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logger.info(f"curlgfem {__version__}: {ns.command} ({config.problem})")

    try:
        summary = COMMANDS[ns.command](config)
    except ConfigError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        logger.error(f"Divergence: {e}")
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (BoundViolation, CurlGfemError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_ASSERTION

    print(format_summary(summary, title=f"curlgfem {ns.command}"))
    return EXIT_OK
