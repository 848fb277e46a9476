import json

import numpy as np
import pytest

from pitwi import harness as H
from pitwi.induction import ReplayBuffer


def test_induction_trigger_counts():
    assert sum(H.induction_due(i, 100, 5) for i in range(1, 101)) == 19
    assert sum(H.induction_due(i, 100, 10) for i in range(1, 101)) == 9


def test_paper_profile_settings():
    lake = H.ExperimentConfig.paper_profile("lake")
    assert (lake.episodes, len(lake.seeds), lake.trials) == (100, 3, 3)
    assert lake.tau_value == 0.99 and lake.period == 5 and lake.optimizer.max_iterations == 50
    crafter = H.ExperimentConfig.paper_profile("crafter")
    assert crafter.tau_value == 1.0 and crafter.period == 5 and crafter.optimizer.max_iterations == 20
    cube = H.ExperimentConfig.paper_profile("cube")
    assert cube.tau_value == 0.99 and cube.period == 10 and cube.optimizer.max_iterations == 150
    assert cube.cube_dataset == {"seed": 42, "count": 100, "moves": 20}


def test_config_validation():
    with pytest.raises(H.ConfigError):
        H.ExperimentConfig(domain="chess")
    with pytest.raises(H.ConfigError):
        H.ExperimentConfig(domain="lake", mode="half")
    with pytest.raises(H.ConfigError):
        H.ExperimentConfig.from_json({"domain": "lake", "colour": 1})
    with pytest.raises(H.ConfigError):
        H.ExperimentConfig(domain="lake", mask_fraction=1.5)


def test_smooth_series():
    assert H.smooth_series([]) == []
    assert np.allclose(H.smooth_series([3.0] * 20), 3.0)
    x = np.zeros(41)
    x[20] = 1.0
    y = np.array(H.smooth_series(x, 2.0))
    k = np.exp(-0.5 * (np.arange(-8, 9) / 2.0) ** 2)
    k /= k.sum()
    assert np.allclose(y[12:29], k, atol=1e-9)
    assert np.allclose(y[20 - 5:20], y[21:26][::-1], atol=1e-12)


def test_salt_library_doubles_with_wrong_twins():
    cfg = H.ExperimentConfig(domain="lake", initial_library="oracle_salted")
    lib = H.build_library(cfg)
    assert len(lib) == 192
    for p, twin in zip(lib.patterns[:96], lib.patterns[96:]):
        assert twin.context == p.context and twin.prediction != p.prediction


def _small(domain, **kw):
    return H.ExperimentConfig(domain=domain, episodes=kw.pop("episodes", 6), seeds=[0], trials=1, **kw)


def test_run_writes_artifacts_and_audits_clean(tmp_path):
    cfg = _small("lake", initial_library="oracle", write_traces=True)
    rep = H.run_experiment(cfg, tmp_path)
    run = tmp_path / "seed0_trial0"
    for name in ("config.json", "episodes.jsonl", "buffer.jsonl", "report.json", "libraries/initial.json",
                 "libraries/trigger_001.json", "libraries/final.json", "traces/ep_0000.jsonl"):
        assert (run / name).exists(), name
    assert len(ReplayBuffer.load(run / "buffer.jsonl")) == 6
    on_disk = json.loads((tmp_path / "report.json").read_text())
    assert H.audit_report(on_disk, tmp_path) == []
    for e in rep["runs"][0]["episodes"]:
        t = e["tokens"]
        assert t["total"] == t["perception"] + t["proposal"]


def test_audit_catches_tampering(tmp_path):
    H.run_experiment(_small("cube", mode="no_inference", episodes=2), tmp_path)
    rep = json.loads((tmp_path / "report.json").read_text())
    rep["runs"][0]["episodes"][0]["grounding_accuracy"] = 0.5
    rep["runs"][0]["aggregates"]["grounding_accuracy"] = 0.75
    assert any("grounding accuracy" in p for p in H.audit_report(rep, tmp_path))


def test_reports_are_byte_identical(tmp_path):
    cfg = _small("cube", episodes=4, proposal_period=2)
    a = H.dumps(H.public_report(H.run_experiment(cfg)))
    b = H.dumps(H.public_report(H.run_experiment(cfg)))
    assert a == b


def test_no_reweight_keeps_initial_weights():
    rep = H.run_experiment(_small("lake", mode="no_reweight", initial_library="oracle", episodes=11))
    lib = rep["_libraries"][0]
    assert np.all(lib.weights == 1.0)
    props = rep["runs"][0]["proposals"]
    assert len(props) == 2 and all(p["reweight"] is None for p in props)


def test_no_inference_has_no_proposals_or_imputations():
    rep = H.run_experiment(_small("lake", mode="no_inference", initial_library="oracle", episodes=5))
    run = rep["runs"][0]
    assert run["proposals"] == []
    assert all(e["imputation_count"] == 0 for e in run["episodes"])


def test_paired_full_never_reveals_more_than_no_inference():
    full = H.run_experiment(_small("lake", mode="no_reweight", initial_library="oracle"))
    base = H.run_experiment(_small("lake", mode="no_inference"))
    for a, b in zip(full["runs"][0]["episodes"], base["runs"][0]["episodes"]):
        assert a["instance"] == b["instance"]
        assert a["reveal_count"] <= b["reveal_count"]


def test_scripted_proposer_tokens_are_charged():
    resp = {"text": json.dumps({"patterns": [[["SAFE"] * 4] * 4]}),
            "usage": {"prompt_tokens": 464, "completion_tokens": 268}}
    cfg = _small("lake", episodes=6, proposer={"kind": "scripted", "responses": [resp]})
    rep = H.run_experiment(cfg)
    eps = rep["runs"][0]["episodes"]
    assert eps[4]["tokens"]["proposal"] == 464 + 268
    assert sum(e["tokens"]["proposal"] for e in eps[:4]) == 0
    assert rep["aggregates"]["proposal_tokens_per_proposal"] == pytest.approx(732)


def test_remote_failure_degrades_to_empty_proposal():
    def broken(*a):
        raise OSError("down")

    cfg = _small("lake", episodes=6, proposer={"kind": "remote", "endpoint": "http://x", "model": "m"})
    rep = H.run_experiment(cfg, transport=broken)
    prop = rep["runs"][0]["proposals"][0]
    assert prop["macros"] == 0 and "down" in prop["error"]
    assert len(rep["runs"][0]["episodes"]) == 6


def test_ood_needs_frozen_library(tmp_path):
    with pytest.raises(H.ConfigError):
        H.run_ood(_small("lake"), str(tmp_path / "missing.json"))
    with pytest.raises(H.ConfigError):
        H.run_ood(_small("cube"), None)


def test_ood_empty_library_matches_no_inference(tmp_path):
    from pitwi.patterns import PatternLibrary
    path = tmp_path / "empty.json"
    PatternLibrary("lake").save(path)
    ood = H.run_ood(_small("lake", episodes=3), str(path))
    base = H.run_experiment(_small("lake", episodes=3, mode="no_inference", map_size=32))
    assert [e["reveal_count"] for e in ood["runs"][0]["episodes"]] == \
        [e["reveal_count"] for e in base["runs"][0]["episodes"]]


def test_ood_rejects_wrong_domain_library(tmp_path):
    from pitwi.patterns import PatternLibrary
    path = tmp_path / "cube.json"
    PatternLibrary("cube").save(path)
    rep = None
    with pytest.raises(H.ConfigError):
        rep = H.run_ood(_small("lake", episodes=1), str(path))
    assert rep is None
