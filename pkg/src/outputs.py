"""
src/outputs.py

Artifact writers: CSV tables, legacy-VTK field dumps, operator triplets and
the run manifest.

Every run writes ``manifest.txt`` next to its outputs with the config and
mesh digests, library versions and the fully resolved configuration.
"""

from __future__ import annotations

import platform
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional

import matplotlib
import numpy as np
import pandas as pd
import scipy

from src.config import SimulationConfig, config_to_text
from src.femops import SparseOperator
from src.mesh import Mesh, mesh_hash
from src.utils import ensure_directories_exist, log, save_dataframe, text_digest

VTK_TETRA = 10


def write_table(df: pd.DataFrame, path: Path, label: str) -> Path:
    """Save a table and log its size."""
    path = Path(path)
    ensure_directories_exist([path.parent])
    save_dataframe(df, path)
    log(f"  {label}: {df.shape[0]} rows -> {path}")
    return path


def write_time_series(series: pd.DataFrame, path: Path) -> Path:
    columns = ["t", "Mx", "My", "Mz", "E_total", "dt"]
    return write_table(series[columns], path, "time series")


def write_hysteresis(curve: pd.DataFrame, path: Path) -> Path:
    return write_table(curve[["H", "M_parallel", "branch", "converged"]], path, "hysteresis loop")


def write_operator_triplets(op: SparseOperator, path: Path) -> Path:
    """Export a sparse operator as ``row, col, weight`` CSV."""
    return write_table(op.to_triplets(), path, f"operator {op.kind}")


def write_vtk(mesh: Mesh, fields: Mapping[str, np.ndarray], path: Path,
              title: str = "micromagnetic state") -> Path:
    """
    Write per-parent-node vector fields as a legacy ASCII VTK unstructured grid.

    The full mesh is written in its original geometry; child nodes carry
    their parent's values. Region tags go out as cell data.

    Parameters
    ----------
    mesh : Mesh
    fields : mapping of name to ndarray, shape (N', 3) or (N',)
    path : Path
    title : str
    """
    path = Path(path)
    ensure_directories_exist([path.parent])
    n, t = mesh.n_nodes, mesh.n_tets
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n} double\n")
        np.savetxt(fh, mesh.nodes, fmt="%.10g")
        fh.write(f"CELLS {t} {5 * t}\n")
        np.savetxt(fh, np.column_stack([np.full(t, 4), mesh.tets]), fmt="%d")
        fh.write(f"CELL_TYPES {t}\n")
        np.savetxt(fh, np.full(t, VTK_TETRA), fmt="%d")
        fh.write(f"CELL_DATA {t}\nSCALARS region int 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, mesh.region, fmt="%d")
        fh.write(f"POINT_DATA {n}\n")
        for name, values in fields.items():
            full = np.asarray(values)[mesh.lca]
            if full.ndim == 2:
                fh.write(f"VECTORS {name} double\n")
            else:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, full, fmt="%.10g")
    log(f"  field dump ({', '.join(fields)}) -> {path}")
    return path


def library_versions() -> Dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "matplotlib": matplotlib.__version__,
    }


def write_manifest(config: SimulationConfig, path: Path, mesh: Optional[Mesh] = None,
                   artifacts: Iterable[Path] = (), summary: Optional[Mapping[str, object]] = None) -> Path:
    """
    Plain-text manifest: digests, versions, summary values, artifact list and
    the resolved configuration.
    """
    path = Path(path)
    ensure_directories_exist([path.parent])
    text = config_to_text(config)
    lines = [
        f"config_hash: {text_digest(text)}",
        f"mesh_hash: {mesh_hash(mesh) if mesh is not None else 'none'}",
        f"mode: {config.mode}",
    ]
    lines += [f"version.{name}: {version}" for name, version in library_versions().items()]
    for key, value in (summary or {}).items():
        lines.append(f"summary.{key}: {value}")
    lines += [f"artifact: {p}" for p in artifacts]
    lines += ["", "# resolved configuration", text]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log(f"  manifest -> {path}")
    return path
