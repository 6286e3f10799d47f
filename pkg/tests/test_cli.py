import csv
import json
from pathlib import Path

import numpy as np
import pytest

from hriga.analysis import case_catalog, point_probe, solve_case
from hriga.cli import main
from hriga.config import ExperimentConfig
from hriga.derham import ConfigurationError
from hriga.vtk import MAGIC, export_vtk, lattice, read_structured_grid

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


# --- config ---------------------------------------------------------------------------

def test_bundled_configs_validate():
    for path in sorted(CONFIGS.glob("*.json")):
        ExperimentConfig.load(path).validate()


def test_lambda_inf_sentinel():
    cfg = ExperimentConfig.from_dict({"case": "incompressible", "material": {"lambda": "inf", "mu": 1.0}})
    assert cfg.build_case().params.incompressible


@pytest.mark.parametrize("data,fragment", [
    ({"case": "deformed_square", "p": "two"}, "p"),
    ({"case": "nope"}, "case"),
    ({"case": "deformed_square", "material": {"lambda": "infinite"}}, "material/lambda"),
    ({"case": "deformed_square", "extra": 1}, "extra"),
    ({"case": "deformed_square", "h": [0.3]}, "reciprocal"),
    ({"case": "deformed_square", "p": 2, "r": 1}, r"p > r\+1"),
    ({"case": "deformed_square", "h": [0.25, 0.5]}, "decreasing"),
    ({"case": "deformed_square", "geometry": {"name": "cook"}}, "own map"),
    ({"case": "cook", "bc": {"dirichlet": ["left"], "traction": ["right"]}}, "cover"),
    ({"case": "cook", "bc": {"traction_value": [0.0, 1.0, 2.0]}}, "length"),
])
def test_config_errors_name_the_constraint(data, fragment):
    with pytest.raises(ConfigurationError, match=fragment):
        ExperimentConfig.from_dict(data).validate()


def test_identity_condition_for_incompressible_pure_dirichlet():
    cfg = ExperimentConfig.from_dict({"case": "ring3d", "material": {"lambda": "inf"}, "h": [0.5]})
    with pytest.raises(ConfigurationError, match="2q <= p\\+1"):
        cfg.validate()
    ok = ExperimentConfig.from_dict({"case": "deformed_square", "material": {"lambda": "inf"}, "h": [0.5]})
    ok.validate()


def test_geometry_override_for_physical_case(tmp_path):
    ctrl = [[0, 0], [0, 44], [48, 44], [48, 60]]
    geo = tmp_path / "cook.json"
    geo.write_text(json.dumps({"degrees": [1, 1], "knots": [[0, 0, 1, 1], [0, 0, 1, 1]], "control_points": ctrl}))
    cfg = ExperimentConfig.from_dict({"case": "cook", "geometry": {"file": str(geo)}, "h": [0.5]})
    case = cfg.validate()
    ref = case_catalog("cook")
    z = np.random.default_rng(0).random((5, 2))
    np.testing.assert_allclose(case.geometry.patches[0](z), ref.geometry.patches[0](z), atol=1e-12)


# --- cli ------------------------------------------------------------------------------

def test_convergence_command_reproduces_values(tmp_path):
    cfg = write(tmp_path, {"case": "deformed_square", "p": 2, "h": [0.5, 0.25]})
    assert main(["convergence", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "deformed_square_p2_r0.csv")))
    got = [float(r["err_sigma_hdiv"]) for r in rows]
    np.testing.assert_allclose(got, [8.4378696, 2.3346271], rtol=0.01)


def test_convergence_output_is_byte_identical(tmp_path):
    cfg = write(tmp_path, {"case": "deformed_square", "p": 2, "h": [0.5, 0.25], "output": {"csv": "a.csv"}})
    main(["convergence", "--config", cfg, "--out", str(tmp_path / "x"), "--seed", "3"])
    main(["convergence", "--config", cfg, "--out", str(tmp_path / "y"), "--seed", "3"])
    assert (tmp_path / "x" / "a.csv").read_bytes() == (tmp_path / "y" / "a.csv").read_bytes()


def test_malformed_config_exits_1(tmp_path, capsys):
    cfg = write(tmp_path, {"case": "deformed_square", "p": 2, "r": 1})
    assert main(["convergence", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "p > r+1" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["convergence", "--config", str(bad), "--out", str(tmp_path)]) == 1


def test_incompressible_identity_failure_exits_1(tmp_path, capsys):
    cfg = write(tmp_path, {"case": "ring3d", "material": {"lambda": "inf"}, "h": [0.5]})
    assert main(["convergence", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "2q <= p+1" in capsys.readouterr().err


def test_missing_config_is_io_error(tmp_path):
    assert main(["convergence", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 4


def test_nonconvergence_exits_2(tmp_path):
    cfg = write(tmp_path, {"case": "deformed_square", "h": [0.5], "solver": {"method": "minres", "max_iter": 3}})
    assert main(["convergence", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_cook_command(tmp_path):
    data = json.loads((CONFIGS / "cook_p2.json").read_text())
    data["h"] = data["h"][:2]
    cfg = write(tmp_path, data)
    assert main(["cook", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "cook_p2_trajectory.csv")))
    assert rows[0] == ["dof", "ux_P", "uy_P"]
    dof, ux, uy = zip(*[(int(a), float(b), float(c)) for a, b, c in rows[1:]])
    assert dof == (24, 393)
    assert uy[0] > 20 and uy[1] < uy[0]
    np.testing.assert_allclose(ux, [-9.7186, -7.5050], atol=1e-4)


def test_cook_zero_traction(tmp_path):
    data = json.loads((CONFIGS / "cook_p2.json").read_text())
    data["h"] = [1.0, 0.5]
    data["bc"]["traction_value"] = [0.0, 0.0]
    cfg = write(tmp_path, data)
    assert main(["cook", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "cook_p2_trajectory.csv")))[1:]
    assert all(float(v) == 0.0 for r in rows for v in r[1:])


def test_verify_default_and_naive(tmp_path):
    assert main(["verify", "--out", str(tmp_path / "a")]) == 0
    report = json.loads((tmp_path / "a" / "verification.json").read_text())
    assert report["seed"] == 0
    assert all(set(r) == {"probe", "h", "value", "threshold", "pass"} for r in report["records"])
    assert all(r["pass"] for r in report["records"])
    assert main(["verify", "--naive-spaces", "--probes", "infsup", "--out", str(tmp_path / "b")]) == 0
    recs = json.loads((tmp_path / "b" / "verification.json").read_text())["records"]
    assert recs[-1]["value"] <= recs[-1]["threshold"]


def test_verify_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["verify", "--probes", "commutativity_3d,subcomplex_2d", "--seed", "5", "--out",
                     str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "verification.json").read_bytes() == (tmp_path / "b" / "verification.json").read_bytes()


def test_verify_unknown_probe_exits_1(tmp_path):
    assert main(["verify", "--probes", "nope", "--out", str(tmp_path)]) == 1


def test_verify_probe_failure_exits_3(tmp_path, monkeypatch):
    import hriga.verification as v

    monkeypatch.setattr(v, "STABLE_RATIO", 1.0 + 1e-15)
    assert main(["verify", "--probes", "infsup", "--out", str(tmp_path)]) == 3


def test_infsup_command(tmp_path):
    cfg = str(CONFIGS / "infsup.json")
    assert main(["infsup", "--config", cfg, "--out", str(tmp_path)]) == 0
    recs = json.loads((tmp_path / "infsup.json").read_text())["records"]
    vals = [r["value"] for r in recs]
    assert len(vals) == 3 and max(vals) / min(vals) <= 3
    assert main(["infsup", "--config", cfg, "--naive-spaces", "--out", str(tmp_path / "n")]) == 0


def test_export_vtk_command(tmp_path):
    cfg = write(tmp_path, {"case": "deformed_square", "h": [0.5], "vtk_samples": 4})
    assert main(["export-vtk", "--config", cfg, "--out", str(tmp_path)]) == 0
    text = (tmp_path / "deformed_square.vtk").read_text()
    assert text.startswith("# vtk DataFile Version")


def test_export_vtk_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = write(tmp_path, {"case": "deformed_square", "h": [0.5], "vtk_samples": 3})
    assert main(["export-vtk", "--config", cfg, "--out", str(blocker / "sub")]) == 4


# --- vtk ------------------------------------------------------------------------------

def test_lattice_ordering():
    z = lattice(3, 2)
    assert z.shape == (9, 2)
    np.testing.assert_array_equal(z[:3, 0], [0, 0.5, 1])
    assert np.all(z[:3, 1] == 0)


@pytest.mark.parametrize("name,h,m", [("deformed_square", 0.5, 6), ("ring3d", 1.0, 4)])
def test_vtk_round_trip(tmp_path, name, h, m):
    case = case_catalog(name)
    sol = solve_case(case, h, 2, 0)
    (path,) = export_vtk(sol, tmp_path / "f.vtk", m=m)
    text = path.read_text()
    assert text.startswith(MAGIC)
    data = read_structured_grid(path)
    n = case.dim
    assert len(data["points"]) == m ** n
    assert data["arrays"]["sigma"].shape[1] == n * n
    assert data["arrays"]["p"].shape[1] == 2 * n - 3
    # interior lattice points avoid element boundaries, where the displacement may jump
    z = lattice(m, n)
    inner = np.all((z > 0) & (z < 1), axis=1)
    for x, u in zip(data["points"][inner][:, :n], data["arrays"]["u"][inner]):
        np.testing.assert_allclose(u, point_probe(sol, x), atol=1e-12, rtol=1e-12)


def test_vtk_multipatch_writes_one_file_per_patch(tmp_path):
    sol = solve_case(case_catalog("deformed_square_9patch"), 1.0, 2, 0)
    paths = export_vtk(sol, tmp_path / "m.vtk", m=3)
    assert len(paths) == 9 and all(p.exists() for p in paths)
