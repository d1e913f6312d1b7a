import json

import numpy as np
import pytest

from wptopt.cli import (EXIT_ERROR, EXIT_OK, EXIT_PARSE, EXIT_VALIDATION,
                        RunArtifact, main, run_optimization)

SCENARIO = """
[array]
architecture = dma
length = 0.10

[frequency]
f1 = 5.18e9
bandwidth = 10e6
n_tones = 2

[receiver.1]
x = 0.0
y = 0.0
z = 1.5
p_target = 20e-6

[solver]
max_sca_iters = 20
max_outer_iters = 6
"""


@pytest.fixture(scope="module")
def scenario_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "scenario.cfg"
    path.write_text(SCENARIO)
    return path


@pytest.fixture(scope="module")
def artifact_dir(tmp_path_factory, scenario_file):
    out = tmp_path_factory.mktemp("runs")
    code = main(["optimize", str(scenario_file), "--out", str(out)])
    assert code == EXIT_OK
    sub = next(out.iterdir())
    return sub


def test_optimize_writes_artifact_and_trace(artifact_dir):
    assert (artifact_dir / "artifact.json").exists()
    assert (artifact_dir / "trace.csv").exists()
    data = json.loads((artifact_dir / "artifact.json").read_text())
    assert data["architecture"] == "dma"
    assert all(p >= 0.999 * 20e-6 for p in data["p_dc"])
    assert "content_hash" in data


def test_malformed_scenario_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[array\nlength = oops")
    assert main(["optimize", str(bad)]) == EXIT_PARSE


def test_invalid_scenario_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text(SCENARIO.replace("length = 0.10", "length = 0.001"))
    assert main(["optimize", str(bad)]) == EXIT_VALIDATION


def test_missing_file_exit_code(tmp_path):
    assert main(["optimize", str(tmp_path / "nope.cfg")]) == EXIT_PARSE


def test_arch_override_runs_fd(scenario_file, tmp_path):
    code = main(["optimize", str(scenario_file), "--arch", "fd",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    artifact = RunArtifact.load(next(tmp_path.iterdir()) / "artifact.json")
    assert artifact.architecture == "fd"
    assert artifact.dma_q is None


def test_artifact_reproducible(scenario_file):
    from wptopt.scenario import load_scenario
    cfg = load_scenario(scenario_file)
    a = run_optimization(cfg)
    b = run_optimization(cfg)
    assert a.content_hash() == b.content_hash()


def test_simulate_passes_on_fresh_artifact(artifact_dir, capsys):
    code = main(["simulate", str(artifact_dir / "artifact.json")])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "FAIL" not in out
    assert out.count("PASS") >= 5


def test_simulate_detects_tampering(artifact_dir, tmp_path, capsys):
    data = json.loads((artifact_dir / "artifact.json").read_text())
    data["waveform"]["values"][0][0] *= 3.0  # corrupt one weight
    tampered = tmp_path / "tampered.json"
    tampered.write_text(json.dumps(data))
    code = main(["simulate", str(tampered)])
    out = capsys.readouterr().out
    assert code == EXIT_ERROR
    assert "FAIL" in out


def test_simulate_fd_skips_disk_checks(scenario_file, tmp_path, capsys):
    main(["optimize", str(scenario_file), "--arch", "fd", "--out", str(tmp_path)])
    artifact = next(tmp_path.iterdir()) / "artifact.json"
    code = main(["simulate", str(artifact)])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "lorentzian" not in out


def test_fieldmap_command(artifact_dir, tmp_path):
    code = main(["fieldmap", str(artifact_dir / "artifact.json"),
                 "--xmin", "-0.4", "--xmax", "0.4", "--zmin", "0.5",
                 "--zmax", "2.0", "--res", "0.1", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert (tmp_path / "fieldmap.csv").exists()
    meta = json.loads((tmp_path / "fieldmap.json").read_text())
    assert "argmax" in meta


def test_sweep_single_value_matches_optimize(scenario_file, tmp_path, capsys):
    code = main(["sweep", str(scenario_file), "--axis", "n_f",
                 "--values", "2", "--out", str(tmp_path)])
    assert code == EXIT_OK
    lines = (tmp_path / "sweep_n_f.csv").read_text().splitlines()
    assert len(lines) == 2
    row = dict(zip(lines[0].split(","), lines[1].split(",")))
    assert row["status"] == "ok"
    assert row["feasible"] == "True"
    from wptopt.scenario import load_scenario
    artifact = run_optimization(load_scenario(scenario_file))
    assert float(row["p_c_bound"]) == pytest.approx(
        artifact.trace_rows[-1]["p_c_bound"], rel=1e-9)


def test_sweep_records_per_point_failures(scenario_file, tmp_path):
    code = main(["sweep", str(scenario_file), "--axis", "M",
                 "--values", "1", "5", "--out", str(tmp_path)])
    assert code == EXIT_ERROR  # M=5 exceeds configured receivers
    lines = (tmp_path / "sweep_M.csv").read_text().splitlines()
    assert len(lines) == 3
    assert "error" in lines[2]


def test_artifact_round_trip(artifact_dir):
    a = RunArtifact.load(artifact_dir / "artifact.json")
    assert a.waveform.shape[1] == 2
    assert a.dma_q is not None
    assert np.all(np.abs(a.dma_q - 0.5j) <= 0.5 + 1e-9)


def test_sweep_parallel_jobs_match_serial(scenario_file, tmp_path):
    serial = tmp_path / "serial"
    parallel = tmp_path / "parallel"
    assert main(["sweep", str(scenario_file), "--axis", "L",
                 "--values", "0.10", "0.12", "--out", str(serial)]) == EXIT_OK
    assert main(["sweep", str(scenario_file), "--axis", "L",
                 "--values", "0.10", "0.12", "--jobs", "2",
                 "--out", str(parallel)]) == EXIT_OK
    assert (serial / "sweep_L.csv").read_text() \
        == (parallel / "sweep_L.csv").read_text()


CARRIER_SCALE = """
[array]
architecture = dma
length = 0.20

[frequency]
f1 = 5.18e9
bandwidth = 10e6
n_tones = 8

[receiver.1]
x = 0.0
y = 0.0
z = 2.2
p_target = 20e-6

[solver]
max_sca_iters = 30
max_outer_iters = 30
"""


def test_optimize_carrier_scale_scenario(tmp_path):
    """Carrier-scale instance (20 cm aperture, 8 tones, 2.2 m device) runs
    end to end with every harvesting target met."""
    path = tmp_path / "carrier.cfg"
    path.write_text(CARRIER_SCALE)
    out = tmp_path / "runs"
    assert main(["optimize", str(path), "--out", str(out)]) == EXIT_OK
    artifact = RunArtifact.load(next(out.iterdir()) / "artifact.json")
    assert np.all(artifact.p_dc >= 0.999 * 20e-6)
    assert artifact.waveform.shape == (6, 8)
