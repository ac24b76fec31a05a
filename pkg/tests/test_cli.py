import json

import pytest

from cqmeasure.cli import EXIT_GATE, EXIT_INPUT, EXIT_OK, main

SMALL_SCENARIO = {
    "preset": "desk",
    "seed": 3,
    "grid": {"nx": 61, "nq": 61},
    "scheme": {"scheme": "interaction-advection", "steps": 40},
    "schedule": [
        {"action": "evolve", "t": 0.01},
        {"action": "export", "target": "pointer"},
        {"action": "evolve", "t": 2.0},
        {"action": "measure", "mode": "ideal"},
        {"action": "export", "target": "pointer"},
        {"action": "export", "target": "posterior"},
    ],
}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(argv):
    return main([str(a) for a in argv])


def test_simulate_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SCENARIO)
    assert run(["simulate", "--config", cfg, "--out", tmp_path / "a"]) == EXIT_OK
    assert run(["simulate", "--config", cfg, "--out", tmp_path / "b"]) == EXIT_OK
    for name in ("manifest.json", "posterior.json", "posterior.csv", "pointer_t0.01.csv", "pointer_t2.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    measure = [e for e in manifest["events"] if e["action"] == "measure"][0]
    assert measure["q_m_formula_gap"] == 0.0
    assert manifest["tolerances"]["interaction_L1"] < 1e-2


def test_simulate_seed_changes_outcome(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SCENARIO)
    run(["simulate", "--config", cfg, "--out", tmp_path / "a", "--seed", 1])
    run(["simulate", "--config", cfg, "--out", tmp_path / "b", "--seed", 2])
    a = json.loads((tmp_path / "a" / "posterior.json").read_text())
    b = json.loads((tmp_path / "b" / "posterior.json").read_text())
    assert a["record"]["x_m"] != b["record"]["x_m"]


def test_simulate_noisy_and_svg(tmp_path):
    cfg = dict(SMALL_SCENARIO, schedule=[
        {"action": "evolve", "t": 0.01},
        {"action": "evolve", "t": 2.0},
        {"action": "measure", "mode": "noisy", "sigma_m": 0.05},
        {"action": "export", "target": "posterior"},
        {"action": "export", "target": "pointer"},
    ])
    out = tmp_path / "o"
    assert run(["simulate", "--config", write_cfg(tmp_path, cfg), "--out", out, "--svg"]) == EXIT_OK
    post = json.loads((out / "posterior.json").read_text())
    assert post["pointer"]["kind"] == "ensemble"
    assert (out / "pointer_t2.svg").read_text().startswith("<svg")


@pytest.mark.parametrize(
    "change",
    [
        {"params": {"epsilon": 0.0}},
        {"params": {"bogus": 1.0}},
        {"preset": "nope"},
        {"schedule": [{"action": "evolve", "t": 0.01}, {"action": "measure"}]},
        {"schedule": [{"action": "evolve", "t": 2.0}, {"action": "evolve", "t": 1.0}]},
        {"schedule": [{"action": "export", "target": "posterior"}]},
        {"schedule": [{"action": "evolve", "t": 2.0}, {"action": "measure", "mode": "noisy"}]},
    ],
)
def test_simulate_input_errors(tmp_path, change):
    cfg = dict(SMALL_SCENARIO, **change)
    assert run(["simulate", "--config", write_cfg(tmp_path, cfg), "--out", tmp_path / "o"]) == EXIT_INPUT


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["simulate", "--config", bad, "--out", tmp_path / "o"]) == EXIT_INPUT
    assert run(["simulate", "--config", tmp_path / "missing.json", "--out", tmp_path / "o"]) == EXIT_INPUT


def test_compare_small_strong_grid(tmp_path):
    cfg = {"preset": "strong", "grid": {"nx": 121, "nq": 121}, "scheme": {"steps": 40}, "threshold": 5e-3,
           "relative_threshold": 1e-3, "stride": 10}
    out = tmp_path / "c"
    assert run(["compare", "--config", write_cfg(tmp_path, cfg), "--out", out, "--svg"]) == EXIT_OK
    assert (out / "l1_vs_time.svg").read_text().startswith("<svg")
    summary = json.loads((out / "compare.json").read_text())
    assert summary["passed"] and summary["L1_full_vs_shift"] <= 5e-3
    assert (out / "l1_vs_time.csv").read_text().startswith("t,L1")
    assert "quantum_potential" in (out / "residuals.csv").read_text()


def test_compare_gate_fails_for_weak_coupling(tmp_path):
    cfg = {"preset": "strong", "params": {"lambda": 1.0}, "grid": {"nx": 121, "nq": 121}, "scheme": {"steps": 40},
           "threshold": 5e-3, "relative_threshold": 1e-3}
    assert run(["compare", "--config", write_cfg(tmp_path, cfg), "--out", tmp_path / "c"]) == EXIT_GATE


def test_compare_threshold_flag(tmp_path):
    cfg = {"preset": "strong", "grid": {"nx": 121, "nq": 121}, "scheme": {"steps": 40}}
    assert run(["compare", "--config", write_cfg(tmp_path, cfg), "--out", tmp_path / "c", "--threshold", 1e-12]) == EXIT_GATE


def test_mixture_equiv(tmp_path):
    assert run(["mixture-equiv", "--out", tmp_path / "m"]) == EXIT_OK
    report = json.loads((tmp_path / "m" / "mixture_equiv.json").read_text())
    assert report["max_diff"] < 1e-10 and len(report["rows"]) == 12
    assert run(["mixture-equiv", "--out", tmp_path / "u", "--unswapped"]) == EXIT_GATE


def test_sample(tmp_path, capsys):
    out = tmp_path / "s"
    assert run(["sample", "--out", out, "--n", 20000, "--svg"]) == EXIT_OK
    report = json.loads((out / "ks_report.json").read_text())
    assert report["gated"] and report["ks"] < 0.02
    assert (out / "pointer_split.svg").exists()
    assert run(["sample", "--out", out, "--n", 500]) == EXIT_OK
    assert "KS gate skipped" in capsys.readouterr().err
    assert run(["sample", "--out", out, "--n", 5]) == EXIT_INPUT


def test_bad_seed(tmp_path):
    assert run(["sample", "--out", tmp_path, "--seed", -1]) == EXIT_INPUT
