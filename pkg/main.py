"""
main.py

Entry point for the periodic micromagnetic finite-element solver.

Running this file will:
1. Load the configuration file and apply command-line overrides
2. Build or read the tetrahedral mesh, fold protruding cells and pair
   periodic nodes
3. Assemble the exchange/charge/gradient operators and the BAIM potential
   solver
4. Execute the requested mode:
   - fieldcheck   (effective field and energies of the initial state)
   - relax        (damped relaxation to equilibrium)
   - dynamics     (LLG time integration, sampled time series)
   - hysteresis   (M-H loop and coercive field)
   - oracle-check (BAIM potential against brute-force summation)
   - pgf-selftest (periodic Green's function method agreement)
   - dispersion   (analytic thin-film spin-wave wavelength versus angle)
5. Write CSV tables, figures, optional VTK/operator dumps and the manifest

Usage:
    python main.py --config run.cfg [--mode hysteresis] [--out output/]

Exit status is 0 on success and 1 on any error, reported as
``ERROR: <stage>: <type>: <message>``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.baim import oracle_report
from src.config import SimulationConfig, apply_overrides, load_config
from src.dynamics import (
    StepperState,
    dispersion_curve,
    max_torque,
    mean_magnetization,
    relax,
    run_dynamics,
    run_hysteresis,
)
from src.femops import SparseOperator
from src.field import FieldAssembly, initial_magnetization
from src.mesh import prepare_mesh
from src.mesh_builders import build_mesh
from src.outputs import (
    write_hysteresis,
    write_manifest,
    write_operator_triplets,
    write_table,
    write_time_series,
    write_vtk,
)
from src.pgf import run_selftest
from src.utils import ensure_directories_exist, log
from src.visualization import plot_dispersion_curve, plot_hysteresis_loop, plot_time_series


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Periodic micromagnetic FEM solver")
    parser.add_argument("--config", type=Path, help="configuration file")
    parser.add_argument("--mesh", type=Path, help="mesh file (overrides [mesh])")
    parser.add_argument("--mode", help="run mode (overrides [run] mode)")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--threads", type=int, help="FFT worker threads")
    parser.add_argument("--dump-operator", nargs=2, metavar=("KIND", "PATH"),
                        help="export a sparse operator as row,col,weight CSV")
    parser.add_argument("--dump-fields", type=Path, help="legacy-VTK dump of M and H_eff")
    parser.add_argument("--oracle-check", action="store_true", default=None,
                        help="also compare BAIM against direct summation")
    parser.add_argument("--pgf-selftest", action="store_true", default=None,
                        help="also run the PGF self-test suite")
    parser.add_argument("--baim-points-per-box", type=float, help="target mean nodes per grid box")
    parser.add_argument("--baim-rer-scale", type=float, help="correction radius in grid spacings")
    return parser


def config_from_args(args: argparse.Namespace) -> SimulationConfig:
    if args.config is None:
        raise ValueError("--config is required")
    config = load_config(args.config)
    return apply_overrides(
        config,
        mesh_path=args.mesh,
        mode=args.mode,
        output_dir=args.out,
        threads=args.threads,
        points_per_box=args.baim_points_per_box,
        rer_scale=args.baim_rer_scale,
        dump_operator=tuple(args.dump_operator) if args.dump_operator else None,
        dump_fields=args.dump_fields,
        oracle_check=args.oracle_check,
        pgf_selftest=args.pgf_selftest,
    )


def select_operator(assembly: FieldAssembly, kind: str) -> SparseOperator:
    """Look up an assembled operator by kind."""
    ops: Dict[str, SparseOperator] = {"laplace": assembly.exchange}
    if assembly.magnetostatics:
        ops.update({op.kind: op for op in assembly.charge + assembly.gradient})
        ops["projection"] = assembly.baim.projection.operator
        ops["correction"] = assembly.baim.correction.operator
    if kind not in ops:
        raise ValueError(f"unknown operator kind {kind!r}; available: {sorted(ops)}")
    return ops[kind]


def _selftest(config: SimulationConfig, artifacts: List[Path], summary: Dict[str, object]) -> None:
    report = run_selftest(target_rel_error=config.baim.pgf_target_rel_error, seed=config.seed)
    artifacts.append(write_table(report, config.output.tables_dir / "pgf_selftest.csv", "PGF self-test"))
    failed = report[~report["passed"]]
    summary["pgf_selftest_failed"] = len(failed)
    for _, row in report.iterrows():
        log(f"  {row['dims']}D {row['check']:<20s} {row['value']:.3e} "
            f"(<= {row['tolerance']:.1e}) {'ok' if row['passed'] else 'FAILED'}")
    if len(failed):
        raise RuntimeError(f"{len(failed)} PGF self-test checks failed")


def _dispersion(config: SimulationConfig, artifacts: List[Path], summary: Dict[str, object]) -> None:
    material = config.materials[min(config.materials)]
    scan = config.dispersion
    thetas = np.linspace(-0.5 * np.pi, 0.5 * np.pi, scan.n_angles)
    curve = dispersion_curve(thetas, 2.0 * np.pi * scan.frequency, material.Ms, material.A_ex,
                             scan.thickness, config.llg.gamma_gr)
    out = config.output
    artifacts.append(write_table(curve, out.tables_dir / "dispersion.csv", "dispersion curve"))
    artifacts.append(plot_dispersion_curve(curve, out.figures_dir / "dispersion_curve.png"))
    summary["wavelength_min_cm"] = f"{curve['wavelength'].min():.4e}"
    summary["wavelength_max_cm"] = f"{curve['wavelength'].max():.4e}"
    log(f"  wavelength range {curve['wavelength'].min() * 1e7:.2f} - "
        f"{curve['wavelength'].max() * 1e7:.2f} nm")


def run(config: SimulationConfig) -> int:
    """
    Execute one simulation described by ``config``.

    Returns
    -------
    int
        Exit status: 0 on success, 1 on any error.
    """
    log("=" * 70)
    log(f"PERIODIC MICROMAGNETIC FEM SOLVER: mode={config.mode}")
    log("=" * 70)

    stage = "setup"
    artifacts: List[Path] = []
    summary: Dict[str, object] = {}
    try:
        out = config.output
        ensure_directories_exist([out.output_dir, out.tables_dir, out.figures_dir])

        if config.mode == "pgf-selftest":
            stage = "pgf-selftest"
            log("\n[STEP 1/1] Periodic Green's function self-test")
            _selftest(config, artifacts, summary)
            write_manifest(config, out.output_dir / "manifest.txt", None, artifacts, summary)
            return 0

        if config.mode == "dispersion":
            stage = "dispersion"
            log("\n[STEP 1/1] Thin-film spin-wave dispersion")
            _dispersion(config, artifacts, summary)
            write_manifest(config, out.output_dir / "manifest.txt", None, artifacts, summary)
            return 0

        # ===================================================================
        # 1. Mesh
        # ===================================================================
        stage = "mesh"
        log("\n[STEP 1/4] Loading mesh and resolving periodicity")
        raw = build_mesh(config.mesh)
        mesh, classification = prepare_mesh(raw, config.periodic)
        summary.update({
            "N": mesh.n_nodes,
            "N_parents": mesh.n_parents,
            "touching": classification.touching,
            "protruding": classification.protruding,
        })
        log(f"  N = {mesh.n_nodes}, N' = {mesh.n_parents}, elements = {mesh.n_tets}")
        log(f"  touching={classification.touching}, protruding={classification.protruding}, "
            f"extent={tuple(float(f'{d:.6g}') for d in classification.extent)}")

        # ===================================================================
        # 2. Operators and potential solver
        # ===================================================================
        stage = "assembly"
        log("\n[STEP 2/4] Assembling operators")
        assembly = FieldAssembly(mesh, config.materials, config.periodic, config.applied,
                                 config.baim, workers=config.threads)
        grid = assembly.baim.grid
        summary["grid"] = "x".join(str(s) for s in grid.shape)
        log(f"  BAIM grid {summary['grid']}, spacing {tuple(float(f'{h:.4g}') for h in grid.spacing)} cm, "
            f"r_ER = {assembly.baim.correction.r_er:.4g} cm")
        if out.dump_operator is not None:
            kind, path = out.dump_operator
            artifacts.append(write_operator_triplets(select_operator(assembly, kind), path))

        # ===================================================================
        # 3. Run mode
        # ===================================================================
        stage = config.mode
        log(f"\n[STEP 3/4] Running {config.mode}")
        M = initial_magnetization(config.initial, assembly.Ms, config.seed)
        t = 0.0

        if config.mode == "fieldcheck":
            H_ms = assembly.magnetostatic_field(M)
            ratio = float(np.max(np.linalg.norm(H_ms, axis=1)) / (4.0 * np.pi * np.max(assembly.Ms)))
            summary["max_Hms_over_4piMs"] = f"{ratio:.3e}"
            log(f"  max|H_ms| / 4 pi Ms = {ratio:.3e}")

        elif config.mode == "relax":
            state = relax(StepperState.initial(M, config.llg), assembly, config.llg)
            M, t = state.M, state.t
            summary.update({"converged": state.converged, "steps": state.accepted})
            log(f"  converged={state.converged} after {state.accepted} steps, "
                f"<M>/Ms = {np.round(mean_magnetization(M, assembly.volumes) / np.max(assembly.Ms), 6)}")

        elif config.mode == "dynamics":
            series, state = run_dynamics(StepperState.initial(M, config.llg), assembly, config.llg,
                                         config.run_time, config.sample_every)
            M, t = state.M, state.t
            artifacts.append(write_time_series(series, out.tables_dir / "time_series.csv"))
            artifacts.append(plot_time_series(series, out.figures_dir / "magnetization_timeseries.png"))
            summary.update({"steps": state.accepted, "rejected": state.rejected})

        elif config.mode == "hysteresis":
            result = run_hysteresis(config.hysteresis, assembly, config.llg)
            M = result.state.M
            artifacts.append(write_hysteresis(result.curve, out.tables_dir / "hysteresis.csv"))
            artifacts.append(plot_hysteresis_loop(result.curve, out.figures_dir / "hysteresis_loop.png",
                                                  result.H_c))
            summary["H_c"] = f"{result.H_c:.4g}"
            log(f"  H_c = {result.H_c:.2f} Oe")

        if config.mode == "oracle-check" or config.oracle_check:
            stage = "oracle-check"
            report = oracle_report(assembly.baim, mesh, seed=config.seed)
            artifacts.append(write_table(report, out.tables_dir / "oracle_check.csv", "oracle check"))
            summary["oracle_relative_rms"] = f"{report['relative_rms'].iloc[0]:.3e}"
            log(f"  relative RMS = {report['relative_rms'].iloc[0]:.3e}")

        if config.pgf_selftest:
            stage = "pgf-selftest"
            _selftest(config, artifacts, summary)

        # ===================================================================
        # 4. Outputs
        # ===================================================================
        stage = "output"
        log("\n[STEP 4/4] Writing outputs")
        H = assembly.effective_field(M, t)
        energies = assembly.energies(M, t)
        artifacts.append(write_table(pd.DataFrame([energies]), out.tables_dir / "energies.csv", "energies"))
        summary["max_torque"] = f"{max_torque(M, H, assembly.Ms):.3e}"
        if out.dump_fields is not None:
            artifacts.append(write_vtk(mesh, {"M": M, "H_eff": H}, out.dump_fields))
        write_manifest(config, out.output_dir / "manifest.txt", mesh, artifacts, summary)

    except Exception as e:
        log(f"\nERROR: {stage}: {type(e).__name__}: {e}")
        return 1

    log("\n" + "=" * 70)
    log("RUN COMPLETED SUCCESSFULLY")
    log("=" * 70)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> None:
    """Parse flags, load the configuration and run."""
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except Exception as e:
        log(f"\nERROR: config: {type(e).__name__}: {e}")
        sys.exit(1)
    sys.exit(run(config))


if __name__ == "__main__":
    main()
