import json

import pytest

from stokes_afem import cli
from stokes_afem.adaptive import LevelError
from stokes_afem.mesh2d import Mesh


def test_uniform_square_three_rows(tmp_path):
    out = tmp_path / "res"
    assert cli.main(["run", "--domain", "square", "--mode", "uniform", "--levels", "3", "--out", str(out)]) == 0
    lines = (out / "records.csv").read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("level,cells,n_u,n_p,lambda1,eta,marked,sqrt_err")
    doc = json.loads((out / "records.json").read_text())
    assert len(doc["records"]) == 3


def test_bad_theta(capsys):
    assert cli.main(["run", "--theta", "1.5"]) == 2
    assert "--theta" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["run", "--domain", "torus"], ["bogus"], ["run", "--nev", "0"],
                                  ["diagnose", "--check", "nothing"]])
def test_bad_arguments(argv):
    assert cli.main(argv) == 2


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code = cli.main(["run", "--domain", "square", "--levels", "1", "--out", str(blocker / "sub")])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_solver_failure_exit(monkeypatch, tmp_path):
    def boom(config, on_level=None):
        raise LevelError(4, RuntimeError("singular"))

    monkeypatch.setattr(cli, "run", boom)
    assert cli.main(["run", "--out", str(tmp_path)]) == 3


def test_byte_identical_csv(tmp_path):
    args = ["run", "--domain", "lshape", "--levels", "4", "--no-timings"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "records.csv").read_bytes() == (tmp_path / "b" / "records.csv").read_bytes()


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"domain": "slit", "theta": 0.3, "max_levels": 7}))
    args = cli.build_parser().parse_args(["run", "--config", str(cfg), "--theta", "0.6"])
    conf = cli.resolve_config(args)
    assert (conf.domain, conf.theta, conf.max_levels) == ("slit", 0.6, 7)
    defaults = cli.resolve_config(cli.build_parser().parse_args(["run"]))
    assert (defaults.domain, defaults.theta, defaults.max_dofs, defaults.mode) == ("lshape", 0.5, 60000, "adaptive")
    cfg.write_text(json.dumps({"colour": "red"}))
    assert cli.main(["run", "--config", str(cfg)]) == 2


def test_dumps(tmp_path):
    out = tmp_path / "r"
    code = cli.main(["run", "--domain", "square", "--levels", "2", "--out", str(out), "--dump-mesh",
                     "--dump-matrices"])
    assert code == 0
    assert Mesh.load(out / "mesh_001.json").n_cells > 4
    assert (out / "level_000_A.mtx").exists() and (out / "level_001_m_p.txt").exists()


@pytest.mark.parametrize("mode,level", [("uniform", 2), ("adaptive", 3)])
def test_dump_mesh(tmp_path, mode, level):
    path = tmp_path / "m.json"
    assert cli.main(["dump-mesh", "--domain", "lshape", "--mode", mode, "--level", str(level),
                     "--out", str(path)]) == 0
    mesh = Mesh.load(path)
    assert mesh.areas.sum() == pytest.approx(3.0)
    if mode == "uniform":
        assert mesh.n_cells == 12 * 16


def test_diagnose_identity2(tmp_path, capsys):
    path = tmp_path / "d.json"
    assert cli.main(["diagnose", "--domain", "square", "--check", "identity2", "--out", str(path)]) == 0
    rep = json.loads(path.read_text())
    assert rep["passed"] and rep["steps"]["uniform"]["rel_gap"] <= 1e-7
