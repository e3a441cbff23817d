import pandas as pd
import pytest

from main import main
from src.config import config_to_text, default_config

SW_RUN = """
[mesh]
builder = box
size = 1e-6 1e-6 1e-6
cells = 2 2 2

[periodic]
x = true
y = true
z = true
L_x = 1e-6
L_y = 1e-6
L_z = 1e-6

[material.0]
Ms = 1000
anisotropy = uniaxial
K = 1e6
axis = 0 0 1
alpha = 0.1

[hysteresis]
axis = 0 0 1
H_max = 2200
H_min = -2200
step = 50

[run]
mode = hysteresis
initial = uniform 0 0 1

[output]
dir = results
"""


def run_cli(*argv):
    with pytest.raises(SystemExit) as excinfo:
        main([str(a) for a in argv])
    return excinfo.value.code


def manifest_summary(path):
    summary = {}
    for line in path.read_text().splitlines():
        if line.startswith("summary."):
            key, value = line[len("summary."):].split(": ", 1)
            summary[key] = value
    return summary


@pytest.fixture
def default_cfg(tmp_path):
    path = tmp_path / "default.cfg"
    path.write_text(config_to_text(default_config()))
    return path


def test_fieldcheck_writes_tables_and_manifest(default_cfg, tmp_path):
    out = tmp_path / "out"
    code = run_cli("--config", default_cfg, "--out", out,
                   "--dump-operator", "laplace", tmp_path / "laplace.csv",
                   "--dump-fields", tmp_path / "state.vtk")
    assert code == 0
    manifest = out / "manifest.txt"
    assert manifest.exists()
    text = manifest.read_text()
    assert "mode: fieldcheck" in text
    assert "mesh_hash: " in text and "mesh_hash: none" not in text
    summary = manifest_summary(manifest)
    assert summary["N_parents"] == "216"
    assert float(summary["max_Hms_over_4piMs"]) < 1e-6

    energies = pd.read_csv(out / "tables" / "energies.csv")
    assert "total" in energies.columns
    assert (tmp_path / "laplace.csv").stat().st_size > 0
    assert (tmp_path / "state.vtk").read_text().startswith("# vtk DataFile")


def test_hysteresis_run_reports_coercivity(tmp_path):
    config = tmp_path / "sw.cfg"
    config.write_text(SW_RUN)
    assert run_cli("--config", config) == 0

    results = tmp_path / "results"
    curve = pd.read_csv(results / "tables" / "hysteresis.csv")
    assert list(curve.columns) == ["H", "M_parallel", "branch", "converged"]
    assert len(curve) == 89 + 88
    assert (results / "figures" / "hysteresis_loop.png").exists()
    assert float(manifest_summary(results / "manifest.txt")["H_c"]) == pytest.approx(2000.0, rel=0.02)


def test_oracle_check_mode(default_cfg, tmp_path):
    out = tmp_path / "oracle"
    assert run_cli("--config", default_cfg, "--mode", "oracle-check", "--out", out) == 0
    report = pd.read_csv(out / "tables" / "oracle_check.csv")
    assert report["relative_rms"].iloc[0] <= 1e-3
    assert "oracle_relative_rms" in manifest_summary(out / "manifest.txt")


def test_pgf_selftest_mode(tmp_path):
    config = tmp_path / "selftest.cfg"
    config.write_text("[run]\nmode = pgf-selftest\n")
    out = tmp_path / "selftest"
    assert run_cli("--config", config, "--out", out) == 0
    report = pd.read_csv(out / "tables" / "pgf_selftest.csv")
    assert report["passed"].all()
    assert "mesh_hash: none" in (out / "manifest.txt").read_text()


def test_invalid_config_exits_with_error(tmp_path, capsys):
    config = tmp_path / "bad.cfg"
    config.write_text("[run]\nmode = relax\n")
    assert run_cli("--config", config) == 1
    assert "ERROR: config: ConfigError" in capsys.readouterr().out


def test_missing_config_flag_exits_with_error():
    assert run_cli() == 1


def test_missing_mesh_file_names_failing_stage(default_cfg, tmp_path, capsys):
    code = run_cli("--config", default_cfg, "--mesh", tmp_path / "nowhere.mesh",
                   "--out", tmp_path / "out")
    assert code == 1
    assert "ERROR: mesh: FileNotFoundError" in capsys.readouterr().out


def test_dispersion_mode_needs_only_a_material(tmp_path):
    config = tmp_path / "film.cfg"
    config.write_text("[material.0]\nMs = 800\nA_ex = 1.3e-6\n\n"
                      "[dispersion]\nfrequency = 10e9\nthickness = 2e-7\nn_angles = 9\n\n"
                      "[run]\nmode = dispersion\n")
    out = tmp_path / "film"
    assert run_cli("--config", config, "--out", out) == 0
    curve = pd.read_csv(out / "tables" / "dispersion.csv")
    assert len(curve) == 9
    assert curve["wavelength"].iloc[0] == pytest.approx(curve["wavelength"].iloc[-1], rel=1e-8)
    assert curve["wavelength"].idxmin() == 4
    assert (out / "figures" / "dispersion_curve.png").exists()
