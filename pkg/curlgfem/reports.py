"""
CSV artifacts and summary tables
Every file starts with a provenance comment line, then a header row
"""
import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from curlgfem import __version__
from curlgfem.mesh import Mesh

logger = logging.getLogger(__name__)


@dataclass
class EigenRow:
    """One computed local eigenvalue"""
    subdomain: int
    k: int
    eigenvalue: float
    sqrt_eigenvalue: float
    ovsp: int
    sigma_air: float
    slope: Optional[float] = None  # fit of log sqrt(lambda_k), k in [5, 40]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ErrorRow:
    """MS-GFEM one-shot error for one coarse-space selection"""
    n_loc: int
    ovsp: int
    coarse_dim: int
    error_energy: float
    relative_error: float
    Lambda: float
    ratio: float
    within_bound: bool
    bound_active: bool  # Lambda < 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LocalErrorRow:
    n_loc: int
    subdomain: int
    error: float
    norm_star: float
    sqrt_lambda_next: float
    within_bound: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class IterationRow:
    """One iterate of a solver run"""
    method: str
    inner: str
    sigma_air: float
    ovsp: int
    n_loc: int
    iteration: int
    residual: float
    error: Optional[float]
    seconds: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TableRow:
    """Iteration count for one (ovsp, n_loc) pair"""
    sigma_air: float
    ovsp: int
    n_loc: int
    iterations: int
    converged: bool
    Lambda: float
    coarse_dim: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TopologyRow:
    subdomain: int
    dim_harmonic_forms: int
    hole_count: int
    flat_prefix: int

    def to_dict(self) -> dict:
        return asdict(self)


Row = Union[EigenRow, ErrorRow, LocalErrorRow, IterationRow, TableRow, TopologyRow, Dict[str, Any]]


def config_hash(settings: Dict[str, Any]) -> str:
    """Stable 16-hex-digit hash of a settings mapping"""
    payload = json.dumps(settings, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def provenance_line(settings: Optional[Dict[str, Any]] = None) -> str:
    digest = config_hash(settings) if settings is not None else "none"
    return f"# curlgfem {__version__} config={digest}"


def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _as_dict(row: Row) -> Dict[str, Any]:
    return row if isinstance(row, dict) else row.to_dict()


def write_csv(
    path: Union[str, Path],
    rows: Sequence[Row],
    settings: Optional[Dict[str, Any]] = None,
    fieldnames: Optional[Sequence[str]] = None,
    row_type: Optional[type] = None,
) -> Path:
    """
    Write rows with a provenance comment and a header

    The header comes from `fieldnames`, else the first row, else `row_type`;
    an empty row list still produces the header.

    Raises:
        ValueError: No way to determine the header of an empty file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dicts = [_as_dict(r) for r in rows]
    if fieldnames is None:
        if dicts:
            fieldnames = list(dicts[0])
        elif row_type is not None:
            fieldnames = [f.name for f in fields(row_type)]
        else:
            raise ValueError(f"Cannot write header for empty {path.name}: pass fieldnames or row_type")

    with open(path, "w", newline="") as fh:
        fh.write(provenance_line(settings) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for d in dicts:
            writer.writerow([_format(d.get(name)) for name in fieldnames])
    logger.info(f"✓ Wrote {len(dicts)} rows to {path}")
    return path


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    """Rows of a file written by write_csv (provenance line skipped)"""
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def format_summary(summary: Dict[str, Any], title: str = "Summary") -> str:
    """Fixed-width two-column text table"""
    if not summary:
        return f"{title}\n(empty)"
    width = max(len(str(k)) for k in summary)
    lines = [title, "=" * max(len(title), width + 20)]
    for key, value in summary.items():
        if isinstance(value, float):
            text = f"{value:.6g}"
        else:
            text = str(value)
        lines.append(f"{str(key).ljust(width)}  {text}")
    return "\n".join(lines)


def monotone_inversions(table: Sequence[TableRow]) -> int:
    """Adjacent pairs along either axis where more ovsp or n_loc needs more iterations"""
    counts = {(r.ovsp, r.n_loc): r.iterations for r in table}  # one sigma_air per call
    ovsps = sorted({r.ovsp for r in table})
    nlocs = sorted({r.n_loc for r in table})
    inversions = 0
    for o in ovsps:
        for a, b in zip(nlocs, nlocs[1:]):
            if (o, a) in counts and (o, b) in counts and counts[(o, b)] > counts[(o, a)]:
                inversions += 1
    for n in nlocs:
        for a, b in zip(ovsps, ovsps[1:]):
            if (a, n) in counts and (b, n) in counts and counts[(b, n)] > counts[(a, n)]:
                inversions += 1
    return inversions


def write_mesh_dump(
    output_dir: Union[str, Path],
    mesh: Mesh,
    owners: Optional[Iterable[Iterable[int]]] = None,
    settings: Optional[Dict[str, Any]] = None,
) -> List[Path]:
    """vertices.csv, triangles.csv, edges.csv and optionally subdomains.csv"""
    out = Path(output_dir)
    written = [
        write_csv(out / "vertices.csv",
                  [{"vertex": v, "x": float(x), "y": float(y)} for v, (x, y) in enumerate(mesh.vertices)],
                  settings, fieldnames=["vertex", "x", "y"]),
        write_csv(out / "triangles.csv",
                  [{"triangle": t, "v0": int(a), "v1": int(b), "v2": int(c),
                    "region": int(mesh.region_of_triangle[t])}
                   for t, (a, b, c) in enumerate(mesh.triangles)],
                  settings, fieldnames=["triangle", "v0", "v1", "v2", "region"]),
        write_csv(out / "edges.csv",
                  [{"edge": e, "v0": int(a), "v1": int(b), "boundary": bool(mesh.boundary_edges[e])}
                   for e, (a, b) in enumerate(mesh.edges)],
                  settings, fieldnames=["edge", "v0", "v1", "boundary"]),
    ]
    if owners is not None:
        rows = [{"triangle": t, "subdomain": int(s)} for t, subs in enumerate(owners) for s in subs]
        written.append(write_csv(out / "subdomains.csv", rows, settings, fieldnames=["triangle", "subdomain"]))
    return written
