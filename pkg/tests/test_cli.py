import json

import pytest
import yaml

from rml.cli import main, parse_K, trend
from rml.config import ConfigError


def write_cfg(tmp_path, tree, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(tree))
    return str(p)


def load_results(out):
    data = json.loads((out / "results.json").read_text())
    data.pop("timings")
    return data


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["relax", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1


def test_usage_errors_exit_2(capsys):
    assert main(["frobnicate"]) == 2
    assert main(["capacity", "--kind", "initial"]) == 2


@pytest.mark.parametrize(
    "tree",
    [
        {"g": {"kind": "power", "p": 0.5}, "measure": {"atoms": [{"loc": 0.0, "mass": 1.0}]}},
        {"measure": {"atoms": [{"loc": 3.0, "mass": 1.0}]}},
        {"measure": {"density": "wobbly(1)"}},
        {"bogus": 1},
        {"grid": {"nx": 99, "nt": 100}, "measure": {"density": "uniform(1)"}, "schedule": [1, 4, 2, 8]},
    ],
)
def test_invalid_configs_exit_2(tmp_path, tree):
    assert main(["relax", "--config", write_cfg(tmp_path, tree), "--out", str(tmp_path / "o")]) == 2


def test_relax_is_deterministic(tmp_path):
    cfg = write_cfg(
        tmp_path,
        {"grid": {"nx": 99, "nt": 400}, "measure": {"atoms": [{"loc": 0.0, "mass": 1.0}]}, "g": {"kind": "power", "p": 2}, "schedule": {"levels": 6}},
    )
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["relax", "--config", cfg, "--out", str(a)]) in (0, 3)
    assert main(["relax", "--config", cfg, "--out", str(b), "--dump-fields"]) in (0, 3)
    assert load_results(a) == load_results(b)
    assert (a / "traces.csv").read_text() == (b / "traces.csv").read_text()
    assert (b / "final_field.csv").exists() and not (a / "final_field.csv").exists()
    res = load_results(a)
    assert res["results"]["verdict"]["verdict"] in ("good", "not-good", "inconclusive")


def test_brelax_writes_outputs(tmp_path):
    cfg = write_cfg(
        tmp_path,
        {"grid": {"nx": 99, "nt": 400}, "boundary": {"left": {"density": "uniform(1)"}}, "g": {"kind": "power", "p": 2}, "schedule": {"levels": 5}},
    )
    out = tmp_path / "o"
    assert main(["brelax", "--config", cfg, "--out", str(out)]) in (0, 3)
    assert (out / "results.json").exists() and (out / "mass_vs_k.dat").exists()


def test_capacity_command(tmp_path):
    out = tmp_path / "cap"
    code = main(["capacity", "--kind", "initial", "--K", "-0.25 0.25", "--nx", "31", "--nt", "32", "--out", str(out)])
    assert code == 0
    res = json.loads((out / "result.json").read_text())
    assert set(res) == {"value", "hausdorff", "gap", "iters"}
    assert res["hausdorff"] == 0.5 and res["value"] > 0
    assert (out / "certificate.csv").read_text().count("\n") == 1 + 33  # header, then t_0..t_nt


def test_parse_K():
    assert parse_K("-0.25 0.25") == [(-0.25, 0.25)]
    assert parse_K("0 0.1; 0.3 0.5") == [(0.0, 0.1), (0.3, 0.5)]
    with pytest.raises(ConfigError):
        parse_K("0.5 0.1")


def test_empty_sweep_axis_exits_2(tmp_path):
    cfg = write_cfg(tmp_path, {"grid": {"nx": 99, "nt": 100}, "measure": {"atoms": [{"loc": 0.0, "mass": 1.0}]}, "sweep": {"axis": "k", "k": []}})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_small_k_sweep(tmp_path):
    cfg = write_cfg(
        tmp_path,
        {"grid": {"nx": 99, "nt": 400}, "measure": {"atoms": [{"loc": 0.0, "mass": 1.0}]}, "g": {"kind": "power", "p": 4}, "sweep": {"axis": "k", "k": [256, 4096]}},
    )
    out = tmp_path / "o"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) in (0, 3)
    res = load_results(out)["results"]
    assert len(res["cells"]) == 2
    assert res["trends"]["k"]["99x400"] in ("strictly-decreasing", "nonincreasing", "strictly-increasing", "not-monotone")
    assert (out / "mass_vs_k_99x400.dat").exists()


def test_trend_labels():
    assert trend([3, 2, 1]) == "strictly-decreasing"
    assert trend([3, 3, 1]) == "nonincreasing"
    assert trend([1, 2]) == "strictly-increasing"
    assert trend([1, 3, 2]) == "not-monotone"


def test_properties_command(tmp_path, capsys):
    out = tmp_path / "p"
    code = main(["properties", "--seed", "3", "--cases", "2", "--suites", "comparison,contraction", "--algebra-cases", "20", "--out", str(out)])
    assert code in (0, 3)
    text = capsys.readouterr().out
    assert "comparison" in text and "contraction" in text
    assert (out / "properties.csv").exists()
    assert main(["properties", "--suites", "nonsense", "--out", str(out)]) == 2


def test_capacity_grid_sweep_halves_error(tmp_path):
    cfg = write_cfg(
        tmp_path,
        {"T": 0.5, "capacity": {"kind": "initial", "K": [[-0.25, 0.25]]}, "sweep": {"axis": "grid", "kind": "capacity", "grids": [[33, 32], [65, 64], [129, 128]]}},
    )
    out = tmp_path / "o"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    trends = load_results(out)["results"]["trends"]
    assert trends["error"] == "strictly-decreasing" and trends["halving"]


def test_dirac_k_sweep_mass_nonincreasing(tmp_path):
    cfg = write_cfg(
        tmp_path,
        {"grid": {"nx": 199, "nt": 400}, "measure": {"atoms": [{"loc": 0.0, "mass": 1.0}]}, "g": {"kind": "power", "p": 4}, "sweep": {"axis": "k", "k": [16, 256, 4096, 65536]}},
    )
    out = tmp_path / "o"
    main(["sweep", "--config", cfg, "--out", str(out)])
    assert load_results(out)["results"]["trends"]["k"]["199x400"] in ("strictly-decreasing", "nonincreasing")
