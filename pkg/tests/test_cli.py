import json

import pytest

from filmhom.cli import main
from filmhom.config import config_hash, load_config

HQ = {"family": "HomogeneousQuadratic"}


def write_config(tmp_path, body, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(body))
    return str(path)


def run(tmp_path, command, body, *extra):
    out = tmp_path / "out"
    return main([command, "--config", write_config(tmp_path, body), "--out", str(out), *extra]), out


def test_check_quadratic_exits_zero(tmp_path):
    code, out = run(tmp_path, "check", {"law": HQ})
    assert code == 0
    report = json.loads((out / "check_report.json").read_text())
    assert report["all_passed"] and report["provenance"]["tool"] == "filmhom"


def test_check_corrupted_beta_exits_one_with_witness(tmp_path):
    code, out = run(tmp_path, "check", {"law": dict(HQ, beta=0.5)})
    assert code == 1
    report = json.loads((out / "check_report.json").read_text())
    assert report["passed"]["H3"] is False and report["witnesses"]["H3"]["beta"] == 0.5


def test_malformed_json_exits_two(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"law": {"family": "HomogeneousQuadratic"},')
    assert main(["check", "--config", str(path)]) == 2
    assert "line 1" in capsys.readouterr().err


@pytest.mark.parametrize("body", [{"law": HQ, "surprise": 1}, {"law": dict(HQ, a3=1)},
                                  {"law": HQ, "grid": {"n_per_unit": 1}}, {"seed": 0}])
def test_schema_violations_exit_two(tmp_path, body):
    code, _ = run(tmp_path, "check", body)
    assert code == 2


def test_whom_quadratic_outputs(tmp_path):
    code, out = run(tmp_path, "whom", {"law": HQ, "whom": {"T_max": 2}, "grid": {"n_per_unit": 4}})
    assert code == 0
    result = json.loads((out / "whom.json").read_text())
    assert result["value"] == pytest.approx(2.0) and result["converged_at_T"] == 2
    lines = (out / "whom_trace.csv").read_text().splitlines()
    assert lines[0].startswith("# filmhom") and lines[1] == "T,value,iterations,grad_norm,converged"
    assert len(lines) == 4


def test_whom_budget_exceeded_exits_one(tmp_path):
    code, out = run(tmp_path, "whom", {"law": HQ, "whom": {"T_max": 64}, "grid": {"max_nodes": 1000}})
    assert code == 1
    assert "BudgetExceeded" in json.loads((out / "whom.json").read_text())["error"]


def test_set_overrides_are_applied(tmp_path):
    path = write_config(tmp_path, {"law": HQ})
    cfg = load_config(path, ["whom.T_max=1", "law.beta=3.5", "optimizer.multistart=2"])
    assert cfg["whom"]["T_max"] == 1 and cfg["law"]["beta"] == 3.5 and cfg["optimizer"]["multistart"] == 2
    assert cfg["whom"]["rtol"] == 1e-3  # untouched defaults survive the merge
    assert main(["check", "--config", path, "--set", "nonsense"]) == 2


def test_config_hash_ignores_output_directory(tmp_path):
    path = write_config(tmp_path, {"law": HQ})
    a = load_config(path, ["out=a"])
    b = load_config(path, ["out=b"])
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(load_config(path, ["seed=1"]))


def test_membrane_energy_row(tmp_path):
    code, out = run(tmp_path, "membrane", {"law": HQ, "membrane": {"n_x": 4, "n_y": 4},
                                           "grid": {"n_per_unit": 4}})
    assert code == 0
    lines = (out / "membrane_energy.csv").read_text().splitlines()
    energy = float(lines[2].split(",")[0])
    assert energy == pytest.approx(4.0, abs=1e-9)
    assert (out / "membrane.json").exists() and (out / "membrane_v3.csv").exists()


def test_table_minimal_slice(tmp_path):
    code, out = run(tmp_path, "table", {"law": HQ, "table": {"n": 2, "T_max": 1}, "grid": {"n_per_unit": 4}})
    assert code == 0
    table = json.loads((out / "table.json").read_text())
    assert len(table["values"]) == 2 and all(len(r) == 2 for r in table["values"])
    assert table["metadata"]["solves"] == 4


def test_gamma_single_eps(tmp_path):
    body = {"law": HQ, "membrane": {"n_x": 4, "n_y": 4}, "grid": {"n_per_unit": 4},
            "gamma": {"eps_list": [0.5], "n_x": 4, "n_y": 4}}
    code, out = run(tmp_path, "gamma", body)
    assert code == 0
    lines = (out / "gamma.csv").read_text().splitlines()
    assert lines[1] == "eps,min_total,gap_to_membrane,lp_distance,iterations,converged"
    assert len(lines) == 3


def test_gamma_misaligned_laminate_is_a_config_error(tmp_path):
    body = {"law": {"family": "LaminateQuadratic", "a1": 1, "a2": 4, "theta": 0.5},
            "membrane": {"n_x": 2, "n_y": 2, "T_max": 1}, "grid": {"n_per_unit": 4},
            "gamma": {"eps_list": [0.25], "n_x": 6, "n_y": 6}}
    code, _ = run(tmp_path, "gamma", body)
    assert code == 2
