import json
import os

import numpy as np
import pytest

from sphere_euler import solver_cli as cli
from sphere_euler.mesh import build_icosphere


def write_config(tmp_path, name="cfg.json", **overrides):
    config = {"mesh_level": 2, "law": {"variant": "power", "gamma": 1.4},
              "h": 0.05, "tau": 0.1, "eps_factor": 2.0,
              "initial": {"preset": "zonal", "a": 0.2, "b": 0.1}}
    config.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return str(path)


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


# -- configuration errors ---------------------------------------------------

def test_missing_config_file(tmp_path, capsys):
    rc = cli.main(["run", "--config", str(tmp_path / "nope.json")])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_invalid_json(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert cli.main(["run", "--config", str(path)]) == 2


def test_missing_field_names_the_field(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"h": 0.05, "tau": 0.1}))
    rc = cli.main(["run", "--config", str(path)])
    assert rc == 2
    assert "mesh_level" in capsys.readouterr().err


def test_gamma_bound(tmp_path, capsys):
    cfg = write_config(tmp_path, law={"variant": "power", "gamma": 0.9})
    rc = cli.main(["run", "--config", cfg])
    assert rc == 2
    assert "gamma" in capsys.readouterr().err


def test_mesh_level_range(tmp_path, capsys):
    cfg = write_config(tmp_path, mesh_level=9)
    rc = cli.main(["run", "--config", cfg])
    assert rc == 2
    assert "mesh_level" in capsys.readouterr().err


def test_tau_below_h(tmp_path, capsys):
    cfg = write_config(tmp_path, tau=0.01)
    rc = cli.main(["run", "--config", cfg])
    assert rc == 2
    assert "tau" in capsys.readouterr().err


def test_nonpositive_h(tmp_path, capsys):
    cfg = write_config(tmp_path, h=0.0)
    rc = cli.main(["run", "--config", cfg])
    assert rc == 2
    assert "'h'" in capsys.readouterr().err


def test_bad_thread_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SPHERE_EULER_THREADS", "many")
    cfg = write_config(tmp_path)
    assert cli.main(["run", "--config", cfg]) == 2


# -- run artifacts ----------------------------------------------------------

@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("cli_run")
    cfg = write_config(tmp_path)
    out = str(tmp_path / "out")
    assert cli.main(["run", "--config", cfg, "--out", out]) == 0
    return {"cfg": cfg, "out": out, "tmp": tmp_path}


def test_run_artifacts_exist(run_dir):
    for name in ("snapshots.ndjson", "ledger.csv", "summary.json"):
        assert os.path.exists(os.path.join(run_dir["out"], name))


def test_snapshot_header(run_dir):
    with open(os.path.join(run_dir["out"], "snapshots.ndjson")) as fh:
        lines = [json.loads(line) for line in fh]
    header = lines[0]
    assert header["kind"] == "header"
    assert header["format_version"] == 1
    assert header["mesh_checksum"] == build_icosphere(2).checksum
    assert len(lines) == 1 + 3  # header + initial + 2 steps


def test_ledger_columns(run_dir):
    with open(os.path.join(run_dir["out"], "ledger.csv")) as fh:
        head = fh.readline().strip().split(",")
    for col in ("step", "t", "kinetic", "internal", "hamiltonian",
                "w2_step", "fisher", "dissipation_margin"):
        assert col in head


def test_summary_contents(run_dir):
    with open(os.path.join(run_dir["out"], "summary.json")) as fh:
        summary = json.load(fh)
    assert summary["format_version"] == 1
    assert summary["steps"] == 2
    assert summary["mass_error_max"] < 1e-10
    assert summary["dissipation_floor_ok"]
    assert summary["aborted"] is None


def test_float_serialization_round_trips(run_dir):
    with open(os.path.join(run_dir["out"], "snapshots.ndjson")) as fh:
        fh.readline()
        snap = json.loads(fh.readline())
    header, mesh, states = cli.load_run(run_dir["out"])
    assert np.max(np.abs(states[0].rho.values
                         - np.array(snap["rho"]))) == 0.0


def test_determinism(run_dir):
    out2 = str(run_dir["tmp"] / "out2")
    assert cli.main(["run", "--config", run_dir["cfg"],
                     "--out", out2]) == 0
    for name in ("snapshots.ndjson", "ledger.csv", "summary.json"):
        assert read(os.path.join(run_dir["out"], name)) == \
            read(os.path.join(out2, name))


def test_diagnose_on_run(run_dir):
    assert cli.main(["diagnose", "--out", run_dir["out"]]) == 0
    with open(os.path.join(run_dir["out"], "diagnostics.json")) as fh:
        diag = json.load(fh)
    assert diag["format_version"] == 1
    assert "dissipation_floor" in diag["checks"]
    assert diag["checks"]["mass_conservation"]["ok"]


def test_diagnose_rejects_tampered_snapshots(run_dir, tmp_path):
    bad = tmp_path / "bad_run"
    bad.mkdir()
    with open(os.path.join(run_dir["out"], "snapshots.ndjson")) as fh:
        lines = fh.readlines()
    snap = json.loads(lines[1])
    snap["rho"][0] *= 10.0  # break the unit-mass invariant
    lines[1] = json.dumps(snap) + "\n"
    (bad / "snapshots.ndjson").write_text("".join(lines))
    assert cli.main(["diagnose", "--out", str(bad)]) == 3


def test_diagnose_missing_artifacts(tmp_path):
    assert cli.main(["diagnose", "--out", str(tmp_path)]) == 2


# -- transport --------------------------------------------------------------

def test_transport_two_diracs(tmp_path, capsys):
    mesh = build_icosphere(1)
    # pick the closest-to-orthogonal node pair and compare against d^2/2
    dots = mesh.nodes @ mesh.nodes.T
    i, j = np.unravel_index(np.argmin(np.abs(dots)), dots.shape)
    path = tmp_path / "tp.json"
    path.write_text(json.dumps({"mesh_level": 1,
                                "mu": {"node": int(i)},
                                "nu": {"node": int(j)}}))
    assert cli.main(["transport", "--config", str(path)]) == 0
    report = json.loads(capsys.readouterr().out)
    d = np.arccos(np.clip(dots[i, j], -1, 1))
    assert abs(report["w2_squared_halfcost"] - 0.5 * d * d) < 1e-10
    assert abs(report["w2_squared_standard"]
               - 2 * report["w2_squared_halfcost"]) < 1e-15


def test_transport_duality_check(tmp_path, capsys):
    path = tmp_path / "tp.json"
    path.write_text(json.dumps({"mesh_level": 1,
                                "mu": {"preset": "zonal", "a": 0.3},
                                "nu": {"preset": "static"}}))
    assert cli.main(["transport", "--config", str(path),
                     "--check-duality"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert abs(report["duality_gap"]) < 1e-9


def test_transport_malformed_density_file(tmp_path, capsys):
    bad = tmp_path / "density.txt"
    bad.write_text("not a number\n")
    path = tmp_path / "tp.json"
    path.write_text(json.dumps({"mesh_level": 1,
                                "mu": {"file": str(bad)},
                                "nu": {"preset": "static"}}))
    assert cli.main(["transport", "--config", str(path)]) == 2


def test_transport_wrong_length_density_file(tmp_path):
    bad = tmp_path / "density.txt"
    np.savetxt(bad, np.ones(10))
    path = tmp_path / "tp.json"
    path.write_text(json.dumps({"mesh_level": 1,
                                "mu": {"file": str(bad)},
                                "nu": {"preset": "static"}}))
    assert cli.main(["transport", "--config", str(path)]) == 2


# -- jko ----------------------------------------------------------------------

def test_jko_subcommand(tmp_path, capsys):
    path = tmp_path / "jko.json"
    path.write_text(json.dumps({"mesh_level": 2,
                                "law": {"variant": "power", "gamma": 1.4},
                                "h": 0.05,
                                "initial": {"preset": "zonal", "a": 0.2,
                                            "b": 0.1}}))
    out = str(tmp_path / "out")
    assert cli.main(["jko", "--config", str(path), "--out", out]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["bounds_ok"]
    assert report["fisher_gap_margin"] > -1e-4
    assert report["internal_energy"] <= report["internal_energy_prior"]
    assert os.path.exists(os.path.join(out, "jko_result.json"))
