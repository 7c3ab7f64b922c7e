import csv
import json
import math

import pytest
from click.testing import CliRunner
from hypothesis import given, settings
from hypothesis import strategies as st

from exclusion_lab.acceptance import RunCache, _compare_dirs, criterion_1, injected_fault
from exclusion_lab.analysis import write_synthetic_fixture
from exclusion_lab.cli import main
from exclusion_lab.config import WORKERS_ENV, ExperimentConfig, RunManifest
from exclusion_lab.errors import ConfigInvalidError

BASE = dict(law=[[1, 1.0]], rho=0.5, L=64, t_max=5.0, replicas=4, master_seed=1, batches=2)


def _write_config(path, **over):
    d = dict(BASE, **over)
    path.write_text(json.dumps(d))
    return path


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from([[[1, 1.0]], [[1, 0.75], [-1, 0.25]], [[2, 0.5], [-1, 0.5]]]),
    st.floats(0.01, 0.99),
    st.integers(0, 2**64 - 1),
    st.integers(1, 10**6),
    st.sampled_from([["current"], ["two_point", "second_class"], ["current", "two_point"]]),
    st.one_of(st.just("auto"), st.integers(1, 64)),
)
def test_config_round_trip(law, rho, seed, replicas, obs, workers):
    cfg = ExperimentConfig.from_dict(
        dict(law=law, rho=rho, L=4096, t_max=50.0, replicas=replicas, master_seed=seed, observables=obs, workers=workers)
    )
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.to_json() == cfg.to_json()


@pytest.mark.parametrize(
    "change",
    [
        {"rhoo": 0.5},
        {"grid": {"t0": 1.0, "step": 2.0}},
        {"rho": 1.0},
        {"replicas": 0},
        {"master_seed": -1},
        {"observables": ["height"], "law": [[1, 0.5], [-1, 0.5]]},
        {"observables": ["magnetization"]},
        {"L": 16, "t_max": 100.0},
        {"law": [[0, 1.0]]},
        {"workers": 0},
        {"replicas": 2.5},
    ],
)
def test_invalid_configs(change):
    with pytest.raises(ConfigInvalidError):
        ExperimentConfig.from_dict(dict(BASE, **change))


def test_missing_key():
    d = dict(BASE)
    del d["rho"]
    with pytest.raises(ConfigInvalidError):
        ExperimentConfig.from_dict(d)


def test_unsafe_ring_warns_instead():
    with pytest.warns(UserWarning):
        ExperimentConfig.from_dict(dict(BASE, L=16, t_max=100.0, unsafe_ring=True))


def test_worker_resolution(monkeypatch):
    cfg = ExperimentConfig.from_dict(BASE)
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert cfg.resolved_workers() == 3
    assert cfg.resolved_workers(5) == 5
    assert cfg.replace(workers=2).resolved_workers() == 2
    monkeypatch.setenv(WORKERS_ENV, "many")
    with pytest.raises(ConfigInvalidError):
        cfg.resolved_workers()


def test_simulate_is_deterministic(tmp_path):
    cfg = _write_config(tmp_path / "c.json", replicas=1, batches=1)
    r = CliRunner()
    for name in ("a", "b"):
        res = r.invoke(main, ["simulate", "--config", str(cfg), "--out", str(tmp_path / name)])
        assert res.exit_code == 0, res.output
    assert _compare_dirs(tmp_path / "a", tmp_path / "b") == []
    files = {p.name for p in (tmp_path / "a").iterdir()}
    assert {"two_point.csv", "diffusivity.csv", "sum_rules.csv", "run_manifest.json",
            "second_class_hist.csv", "height_variance.csv"} <= files


def test_seed_override_changes_output(tmp_path):
    cfg = _write_config(tmp_path / "c.json", replicas=1, batches=1)
    r = CliRunner()
    r.invoke(main, ["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    r.invoke(main, ["simulate", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path / "b")])
    assert "diffusivity.csv" in _compare_dirs(tmp_path / "a", tmp_path / "b")


def test_worker_count_does_not_change_outputs(tmp_path):
    cfg = _write_config(tmp_path / "c.json", replicas=6, batches=3)
    r = CliRunner()
    for w in ("1", "3"):
        res = r.invoke(main, ["simulate", "--config", str(cfg), "--workers", w, "--out", str(tmp_path / w)])
        assert res.exit_code == 0, res.output
    assert _compare_dirs(tmp_path / "1", tmp_path / "3") == []


def test_manifest_contents(tmp_path):
    cfg = _write_config(tmp_path / "c.json", replicas=5, batches=2)
    CliRunner().invoke(main, ["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")])
    m = RunManifest.from_json((tmp_path / "o" / "run_manifest.json").read_text())
    assert len(m.replica_seeds) == 5 and len(set(m.replica_seeds)) == 5
    assert m.batches == [[0, 2], [2, 5]]
    assert m.config["master_seed"] == 1
    assert m.event_counts["attempts"] >= m.event_counts["jumps"] > 0
    # the manifest is itself a valid config source
    assert ExperimentConfig.load(tmp_path / "o" / "run_manifest.json") == ExperimentConfig.from_dict(dict(BASE, replicas=5, batches=2, out_dir=m.config["out_dir"]))


def test_config_errors_exit_2(tmp_path):
    r = CliRunner()
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(dict(BASE, colour="blue")))
    assert r.invoke(main, ["simulate", "--config", str(bad)]).exit_code == 2
    assert r.invoke(main, ["simulate", "--config", str(tmp_path / "none.json")]).exit_code == 2
    assert r.invoke(main, ["oracle", "--law", "1:1", "--L", "13", "--rho", "0.5"]).exit_code == 2
    assert r.invoke(main, ["oracle", "--law", "1:0.5", "--L", "6", "--rho", "0.5"]).exit_code == 2
    assert r.invoke(main, ["analyze", str(tmp_path / "missing")]).exit_code == 2


def test_oracle_two_sites(tmp_path):
    out = tmp_path / "g.csv"
    res = CliRunner().invoke(main, ["oracle", "--law", "1:1", "--L", "2", "--rho", "0.5", "--t-grid", "0,0.5",
                                    "--lambda-grid", "1", "--out", str(out)])
    assert res.exit_code == 0, res.output
    rows = {(r["t_or_lambda"], r["quantity"]): float(r["value"]) for r in csv.DictReader(out.open())}
    assert rows[("0.0", "S:0")] == pytest.approx(0.25, abs=1e-15)
    # the two states 01 and 10 flip at rate 1 each way
    assert rows[("0.5", "S:0")] == pytest.approx(0.125 * (1 + math.exp(-1.0)), abs=1e-12)
    assert rows[("0.5", "S:1")] == pytest.approx(0.125 * (1 - math.exp(-1.0)), abs=1e-12)


def test_analyze_synthetic_fixture(tmp_path):
    run = write_synthetic_fixture(tmp_path / "run")
    res = CliRunner().invoke(main, ["analyze", str(run), "--out", str(tmp_path / "an")])
    assert res.exit_code == 0, res.output
    fits = list(csv.DictReader((tmp_path / "an" / "fits.csv").open()))
    full = next(r for r in fits if r["fit"] == "full")
    assert float(full["exponent"]) == pytest.approx(1 / 3, abs=1e-10)
    assert float(full["amplitude"]) == pytest.approx(3.0, rel=1e-10)
    summary = (tmp_path / "an" / "summary.md").read_text()
    assert "superdiffusive growth" in summary and "| pass |" in summary
    for name in ("laplace_profile.csv", "h1_profile.csv"):
        assert (tmp_path / "an" / name).exists()


def test_analyze_compare_section(tmp_path):
    a = write_synthetic_fixture(tmp_path / "a")
    b = write_synthetic_fixture(tmp_path / "b", exponent=1 / 3, amplitude=1.5)
    res = CliRunner().invoke(main, ["analyze", str(a), "--compare", str(b), "--out", str(tmp_path / "an")])
    assert res.exit_code == 0, res.output
    row = next(csv.DictReader((tmp_path / "an" / "compare.csv").open()))
    assert abs(float(row["difference"])) < 0.05
    assert "universality" in (tmp_path / "an" / "summary.md").read_text()


def test_analysis_config_rejects_unknown_keys(tmp_path):
    run = write_synthetic_fixture(tmp_path / "run")
    cfg = tmp_path / "a.json"
    cfg.write_text(json.dumps({"fit_windw": [1, 10]}))
    assert CliRunner().invoke(main, ["analyze", str(run), "--config", str(cfg)]).exit_code == 2


def test_injected_fault_is_caught():
    with injected_fault("wrap-off-by-one"):
        res = criterion_1(RunCache(workers=1), "quick")
    assert not res.passed
    assert criterion_1(RunCache(workers=1), "quick").passed


def test_shipped_configs_are_valid():
    from pathlib import Path

    from exclusion_lab.analysis import AnalysisConfig

    root = Path(__file__).parents[1] / "configs"
    for p in sorted(root.glob("*.json")):
        if p.name == "analysis.json":
            AnalysisConfig.load(p)
        else:
            ExperimentConfig.load(p)
