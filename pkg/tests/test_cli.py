import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from conftest import icosphere
from coverreg.cli import EXIT_INPUT, EXIT_OK, main
from coverreg.mesh import make_synthetic, save_mesh


@pytest.fixture(scope="module")
def meshes(tmp_path_factory):
    d = tmp_path_factory.mktemp("meshes")
    save_mesh(make_synthetic("torus", resolution=24), d / "torus.obj")
    save_mesh(make_synthetic("torus", bumps=[((0.5, 1.2), 0.12, 0.3)], resolution=24), d / "bumped.obj")
    save_mesh(make_synthetic("genus2_eight", resolution=20), d / "eight.off")
    save_mesh(icosphere(2), d / "sphere.obj")
    return d


def _manifest(out):
    data = json.loads((out / "manifest.json").read_text())
    for rel in data["outputs"]:
        assert (out / rel).stat().st_size > 0
    return data


def test_parameterize_torus(meshes, tmp_path):
    assert main(["parameterize", str(meshes / "torus.obj"), "--out", str(tmp_path)]) == EXIT_OK
    res = _manifest(tmp_path)["results"]
    assert res["genus"] == 1 and res["n_segments"] == 4
    assert res["boundary_word"] == "a1 b1 a1^-1 b1^-1"
    assert res["max_deficit"] < 1e-8 and res["max_layout_error"] < 1e-6
    gens = json.loads((tmp_path / "generators.json").read_text())
    assert set(gens) == {"a1", "b1"}


def test_parameterize_eight(meshes, tmp_path):
    assert main(["parameterize", str(meshes / "eight.off"), "--out", str(tmp_path)]) == EXIT_OK
    res = _manifest(tmp_path)["results"]
    assert res["n_segments"] == 8 and res["max_abs_z"] < 1


def test_sphere_rejected(meshes, tmp_path, capsys):
    code = main(["parameterize", str(meshes / "sphere.obj"), "--out", str(tmp_path)])
    assert code == EXIT_INPUT
    assert "genus must be" in capsys.readouterr().err


def test_genus_mismatch_and_bad_config(meshes, tmp_path):
    assert main(["register", str(meshes / "torus.obj"), str(meshes / "eight.off"), "--out", str(tmp_path)]) \
        == EXIT_INPUT
    assert main(["register", str(meshes / "torus.obj"), str(meshes / "torus.obj"), "--eps-clamp", "2",
                 "--out", str(tmp_path)]) == EXIT_INPUT


def test_register_identical(meshes, tmp_path):
    m = str(meshes / "bumped.obj")
    assert main(["register", m, m, "--out", str(tmp_path)]) == EXIT_OK
    res = _manifest(tmp_path)["results"]
    assert res["initial_mismatch"] < 1e-8 and res["final_mismatch"] < 1e-8
    assert res["flipped_faces"] == 0
    rows = (tmp_path / "map.csv").read_text().splitlines()
    assert rows[0] == "src_vertex,tgt_face,bary1,bary2,bary3,x,y,z"
    assert (tmp_path / "energy.csv").read_text().startswith("iter,harmonic,mismatch,total")


def test_register_without_features_keeps_mismatch(meshes, tmp_path):
    out = tmp_path / "plain"
    code = main(["register", str(meshes / "bumped.obj"), str(meshes / "torus.obj"), "--alpha", "0", "--beta", "0",
                 "--out", str(out)])
    assert code == EXIT_OK
    trace = np.loadtxt(out / "energy.csv", delimiter=",", skiprows=1, ndmin=2)
    assert np.allclose(trace[:, 2], trace[0, 2], rtol=1e-8, atol=1e-14)


def test_register_deterministic(meshes, tmp_path):
    args = [str(meshes / "bumped.obj"), str(meshes / "torus.obj"), "--max-iters", "5"]
    for name in ("a", "b"):
        assert main(["register", *args, "--out", str(tmp_path / name)]) == EXIT_OK
    for f in ("energy.csv", "map.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_console_script_version():
    exe = shutil.which("coverreg")
    cmd = [exe] if exe else [sys.executable, "-m", "coverreg.cli"]
    out = subprocess.run(cmd + ["--version"], capture_output=True, text=True, check=True)
    assert out.stdout.startswith("coverreg ")
