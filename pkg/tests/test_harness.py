import csv
import io
import json

import numpy as np
import pytest

from ebrank import harness
from ebrank.harness import (CHECKPOINT_HEADER, STEP_HEADER, ExperimentConfig, RunReport,
                            aggregate_trials, checkpoint_steps, replay_cum_ndcg, run_experiment,
                            run_trials, run_warmup, start_simulation, trial_configs)
from ebrank.policies import rank_items
from ebrank.synthetic import make_corpus


@pytest.fixture(scope="module")
def small():
    return make_corpus(n_queries=10, n_items=8, n_features=5, seed=3)


def _config(**kw):
    base = dict(session_override=120, n_model_updates=4, epochs=20, warmup_sessions_per_query=5)
    base.update(kw)
    return ExperimentConfig(**base)


def test_warmup_session_count_and_coverage(small):
    sim = start_simulation(ExperimentConfig(), small)
    assert run_warmup(sim) == 200
    assert len(sim.logs) == 200
    for q in small.queries:
        active = list(sim.arrival.active[q.query_id])
        top = rank_items(active, q.features[active, 0], k=5)
        n, _, _ = sim.stats.arrays(q.query_id)
        assert np.all(n[top] == 20)
        others = np.setdiff1d(np.arange(len(q)), top)
        assert np.all(n[others] == 0)


def test_warmup_deterministic(small):
    dumps = []
    for _ in range(2):
        sim = start_simulation(ExperimentConfig(trial_seed=4), small)
        run_warmup(sim)
        dumps.append(sim.stats.dump())
    assert dumps[0] == dumps[1]


def test_session_override_and_conservation(small):
    report = run_experiment(_config(session_override=1000, warmup_sessions_per_query=20), small)
    assert report.sessions == {"warmup": 200, "online": 1000, "logged": 1200}


def test_derived_session_count(small):
    report = run_experiment(_config(session_override=None, eta=1.0), small)
    # 10 queries, 8 items each: floor(10 * 3 / 1)
    assert report.sessions["online"] == 30


def test_run_files_and_schedule(small, tmp_path):
    cfg = _config(output_dir=str(tmp_path), session_override=103, n_model_updates=5)
    report = run_experiment(cfg, small)
    steps = list(csv.reader(io.StringIO((tmp_path / "steps.csv").read_text())))
    assert tuple(steps[0]) == STEP_HEADER and len(steps) == 104
    ckpts = list(csv.DictReader(io.StringIO((tmp_path / "checkpoints.csv").read_text())))
    assert tuple(ckpts[0]) == CHECKPOINT_HEADER
    assert [int(r["step"]) for r in ckpts] == checkpoint_steps(103, 5) == [20, 41, 61, 82, 103]
    assert float(ckpts[-1]["cold_ndcg"]) == report.cold_ndcg
    assert {"prior.txt", "stats.txt", "report.json"} <= {p.name for p in tmp_path.iterdir()}
    again = RunReport.from_json((tmp_path / "report.json").read_text())
    assert again.cum_ndcg == report.cum_ndcg
    assert replay_cum_ndcg((tmp_path / "steps.csv").read_text(), cfg.gamma) == pytest.approx(
        report.cum_ndcg, abs=1e-9)


def test_checkpoint_schedule_with_repeats():
    assert checkpoint_steps(3, 5) == [0, 1, 1, 2, 3]


def test_repeated_schedule_steps_each_get_a_row(small, tmp_path):
    run_experiment(_config(output_dir=str(tmp_path), session_override=3, n_model_updates=5), small)
    rows = list(csv.DictReader(io.StringIO((tmp_path / "checkpoints.csv").read_text())))
    assert [int(r["checkpoint"]) for r in rows] == [1, 2, 3, 4, 5]


def test_byte_identical_outputs(small, tmp_path):
    for name in ("a", "b"):
        run_experiment(_config(output_dir=str(tmp_path / name), trial_seed=9), small)
    for f in ("steps.csv", "checkpoints.csv", "stats.txt", "prior.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_changes_outputs(small):
    a = run_experiment(_config(trial_seed=1), small)
    b = run_experiment(_config(trial_seed=2), small)
    assert a.cum_ndcg != b.cum_ndcg


@pytest.mark.parametrize("policy,behav", [
    ("ebrank", True), ("bm25", True), ("cf_topk", True), ("cf_topk", False),
    ("cf_randomk", True), ("cf_epsilon", True), ("ucbrank", True),
])
def test_every_policy_runs(small, policy, behav):
    report = run_experiment(_config(policy=policy, use_behavior=behav), small)
    assert 0.0 <= report.cold_ndcg <= 1.0 and 0.0 <= report.warm_ndcg <= 1.0
    assert (report.exploitation is not None) == policy.startswith("cf_")


def test_errors_carry_session_context(small, monkeypatch):
    def boom(*args, **kwargs):
        raise ValueError("bad ranker")
    monkeypatch.setattr(harness, "policy_rank", boom)
    with pytest.raises(RuntimeError, match=r"session 1 \(query"):
        run_experiment(_config(), small)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(eta=0.0)
    with pytest.raises(ValueError):
        ExperimentConfig(n_model_updates=0)
    with pytest.raises(ValueError):
        ExperimentConfig(policy="dbgd")
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"policy": "ebrank", "colour": "red"})


def test_config_dict_roundtrip():
    cfg = ExperimentConfig(drop_features=(3, 4), epsilon=7.5)
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def _report(cfg, cold=0.5, warm=0.6, cum=10.0):
    return RunReport(cfg.to_dict(), cold, warm, cum, None, 0, "x", {}, 0.0)


def test_aggregate_identical_reports():
    reps = [_report(ExperimentConfig(trial_seed=i)) for i in range(5)]
    summary = aggregate_trials(reps)
    assert summary["trials"] == 5
    assert summary["cum_ndcg"]["std"] == 0.0 and summary["cold_ndcg"]["mean"] == 0.5


def test_aggregate_mean_and_sample_std():
    reps = [_report(ExperimentConfig(trial_seed=i), cum=v) for i, v in enumerate((1.0, 2.0, 3.0))]
    summary = aggregate_trials(reps)
    assert summary["cum_ndcg"]["mean"] == 2.0 and summary["cum_ndcg"]["std"] == 1.0


def test_aggregate_rejects_mixed_configs():
    with pytest.raises(ValueError, match="epsilon"):
        aggregate_trials([_report(ExperimentConfig()), _report(ExperimentConfig(epsilon=1.0))])
    with pytest.raises(ValueError):
        aggregate_trials([])


def test_trial_configs_seeds_and_dirs(tmp_path):
    cfgs = trial_configs(ExperimentConfig(trial_seed=10, output_dir=str(tmp_path)), 3)
    assert [c.trial_seed for c in cfgs] == [10, 11, 12]
    assert cfgs[2].output_dir == str(tmp_path / "trial2")


def test_parallel_trials_match_sequential(small):
    cfgs = trial_configs(_config(), 2)
    seq = run_trials(cfgs, jobs=1, dataset=small)
    par = run_trials(cfgs, jobs=2, dataset=small)
    assert [r.cum_ndcg for r in seq] == [r.cum_ndcg for r in par]
