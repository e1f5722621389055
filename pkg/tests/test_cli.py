import csv
import json

import pytest

from laa_detect.cli import IMPACT_COLUMNS, attack_impact_rows, cmd_detect, main
from laa_detect.config import RunConfig, load_config
from laa_detect.errors import ConfigError, ParseError
from laa_detect.market import build_population
from laa_detect.grid import default_network

SMALL = {
    "day_count": 30,
    "lstm": {"hidden_size": 4, "epochs": 3},
    "mlp": {"hidden_size": 8, "epochs": 3},
}


def write_config(path, **extra):
    path.write_text(json.dumps({**SMALL, **extra}))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root / "cfg.json")
    out = root / "out"
    assert run("generate", "--config", cfg, "--seed", 1, "--out", out) == 0
    assert run("train", "--config", cfg, "--seed", 1, "--out", out) == 0
    assert run("evaluate", "--config", cfg, "--seed", 1, "--out", out) == 0
    return cfg, out


def test_generate_writes_files_and_manifest(small_run):
    _, out = small_run
    rows = list(csv.DictReader((out / "manifest.csv").open()))
    assert len(rows) == 30
    assert len(list((out / "scenarios").glob("day_*.json"))) == 30
    assert {r["split"] for r in rows} == {"train", "test"}
    assert sum(r["split"] == "test" for r in rows) == 9


def test_generate_ten_days(tmp_path):
    cfg = write_config(tmp_path / "c.json", day_count=10)
    assert run("generate", "--config", cfg, "--seed", 1, "--out", tmp_path / "o") == 0
    assert len((tmp_path / "o" / "manifest.csv").read_text().splitlines()) == 11


def test_train_writes_models_and_history(small_run):
    _, out = small_run
    for kind in ("lstm", "mlp"):
        doc = json.loads((out / "models" / f"{kind}.json").read_text())
        assert doc["kind"] == kind and "normalization" in doc
        assert len((out / "models" / f"{kind}_history.csv").read_text().splitlines()) == 1 + 3


def test_evaluate_compares_both_models(small_run):
    _, out = small_run
    lines = (out / "report.txt").read_text().splitlines()
    assert [line.split()[0] for line in lines[1:]] == ["LSTM", "MLP"]
    rows = list(csv.DictReader((out / "report.csv").open()))
    assert all(int(r["cases"]) == 9 for r in rows)


def test_rerun_is_bit_identical(small_run, tmp_path):
    cfg, out = small_run
    again = tmp_path / "again"
    for cmd in ("generate", "train", "evaluate"):
        assert run(cmd, "--config", cfg, "--seed", 1, "--out", again) == 0
    files = sorted(p.relative_to(out) for p in out.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(again) for p in again.rglob("*") if p.is_file())
    for rel in files:
        assert (out / rel).read_bytes() == (again / rel).read_bytes(), rel


def test_train_split_evaluation_warns(small_run, capsys):
    cfg, out = small_run
    assert run("evaluate", "--config", cfg, "--seed", 1, "--out", out, "--split", "train") == 0
    assert "warning" in capsys.readouterr().err
    assert run("evaluate", "--config", cfg, "--seed", 1, "--out", out) == 0


def test_evaluate_single_model_file(small_run, capsys):
    cfg, out = small_run
    assert run("evaluate", "--config", cfg, "--out", out, "--model", out / "models" / "mlp.json") == 0
    assert capsys.readouterr().out.splitlines()[1].split()[0] == "MLP"
    assert run("evaluate", "--config", cfg, "--seed", 1, "--out", out) == 0


def test_detect_prints_one_json_line(small_run, capsys):
    _, out = small_run
    scenario = sorted((out / "scenarios").glob("*.json"))[0]
    assert run("detect", "--model", out / "models" / "lstm.json", "--scenario", scenario) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1
    result = json.loads(lines[0])
    assert result["decision"] in (0, 1) and 0.0 <= result["probability"] <= 1.0
    assert result["decision"] == int(result["probability"] >= 0.5)


def test_missing_manifest_exit_code(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert run("train", "--config", cfg, "--out", tmp_path / "nothing") == 2
    assert run("evaluate", "--config", cfg, "--out", tmp_path / "nothing") == 2


def test_corrupt_scenario_exit_code(small_run, tmp_path):
    _, out = small_run
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run("detect", "--model", out / "models" / "lstm.json", "--scenario", bad) == 2


def test_empty_test_split_is_error(small_run, tmp_path):
    cfg, out = small_run
    target = tmp_path / "copy"
    (target / "models").mkdir(parents=True)
    for p in (out / "models").glob("*.json"):
        (target / "models" / p.name).write_bytes(p.read_bytes())
    (target / "manifest.csv").write_text("file,label,split\n")
    assert run("evaluate", "--config", cfg, "--out", target) == 2


def test_usage_errors_exit_two(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"gama": 0.1}))
    assert run("generate", "--config", bad) == 2


def test_attack_impact_csv(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert run("attack-impact", "--config", cfg, "--out", tmp_path) == 0
    rows = list(csv.DictReader((tmp_path / "attack_impact.csv").open()))
    assert len(rows) == 24 and list(rows[0]) == IMPACT_COLUMNS
    for r in rows:
        assert float(r["attacked_flow_kva"]) >= float(r["clean_flow_kva"])
        assert float(r["attacked_price"]) >= float(r["clean_price"]) - 1e-12


def test_attack_impact_gamma_zero():
    net = default_network()
    pop = build_population(net, 0)
    for r in attack_impact_rows(RunConfig(gamma=0.0), net, pop):
        assert r["attacked_flow_kva"] == r["clean_flow_kva"]
        assert r["attacked_price"] == r["clean_price"]
        assert r["attacked_congested"] == r["clean_congested"]


# --- configuration -------------------------------------------------------------------


def test_config_round_trip_and_overrides(tmp_path):
    cfg = RunConfig(compromised=(2, 5), lstm=RunConfig().lstm)
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    assert cfg.with_overrides(master_seed=4, out=None).master_seed == 4
    assert cfg.with_overrides(out=None).out == "run"


def test_config_nested_training_keys(tmp_path):
    cfg = load_config(write_config(tmp_path / "c.json"))
    assert cfg.lstm.hidden_size == 4 and cfg.lstm.optimizer == RunConfig().lstm.optimizer
    assert cfg.mlp.learning_rate == RunConfig().mlp.learning_rate


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"gama": 0.1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"lstm": {"hiden": 3}})
    with pytest.raises(ConfigError):
        RunConfig(gamma=2.0)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "x.json").write_text("{")
    with pytest.raises(ParseError):
        load_config(tmp_path / "x.json")
