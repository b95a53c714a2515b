import json

import meshio
import numpy as np
import pytest

from app.core.config import Settings
import main as main_module
from main import build_parser, main


def test_mesh_dump(tmp_path, capsys):
    out = tmp_path / "mesh" / "cube.vtk"
    assert main(["mesh-dump", "--n", "1", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["cells"] == 6
    assert len(meshio.read(out).points) == 8


def test_study_markdown(tmp_path):
    out = tmp_path / "table.md"
    assert main(["study", "--levels", "1", "--format", "markdown", "--out", str(out)]) == 0
    assert "mixed method" in out.read_text()


def test_study_csv_to_stdout(capsys):
    assert main(["study", "--method", "nitsche", "--eps", "1e-3", "--levels", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("h,err_l2,order_l2")
    assert len(lines) == 2


def test_configuration_error_exit_code():
    assert main(["study", "--levels", "0"]) == 2
    assert main(["mesh-dump", "--n", "0", "--out", "unused.vtk"]) == 2


def test_verify_writes_report(tmp_path, capsys):
    out = tmp_path / "verify.json"
    assert main(["verify", "--levels", "1", "--json", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["passed"] is True
    assert json.loads(out.read_text())["levels"] == [1]


def test_parser_rejects_unknown_method():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["study", "--method", "galerkin"])


def test_parser_defaults():
    args = build_parser().parse_args(["study"])
    assert args.method == "mixed"
    assert args.sigma == 10.0
    assert args.levels is None


def test_linear_algebra_failure_exit_code(monkeypatch):
    def fail(args):
        raise np.linalg.LinAlgError("Singular matrix")

    monkeypatch.setattr(main_module, "cmd_mesh_dump", fail)
    assert main(["mesh-dump", "--n", "1", "--out", "unused.vtk"]) == 3


def test_invalid_value_exit_code(monkeypatch):
    def fail(args):
        raise ValueError("bad input")

    monkeypatch.setattr(main_module, "cmd_mesh_dump", fail)
    assert main(["mesh-dump", "--n", "1", "--out", "unused.vtk"]) == 2


def test_settings_declare_only_used_paths(monkeypatch):
    monkeypatch.setenv("OUTPUT_DIR", "ignored")
    fresh = Settings()
    assert "OUTPUT_DIR" not in Settings.model_fields
    assert not hasattr(fresh, "OUTPUT_DIR")
    assert fresh.MAX_SERVED_N == 32
