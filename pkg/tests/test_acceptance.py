"""Acceptance gate. Each test checks one criterion at its stated tolerance and
logs a PASS/FAIL row, printed in the terminal summary and immediately with -s.

    pytest tests/test_acceptance.py -v
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.stats import binomtest

from ebrank.eb_core import StatsStore
from ebrank.harness import ExperimentConfig, run_experiment, trial_configs
from ebrank.letor import QueryRecord
from ebrank.metrics import dcg_at_k, ndcg_at_k
from ebrank.policies import ModelBundle, PolicySpec, QueryState, offline_scores, policy_rank, rank_items
from ebrank.prior import PriorModel, TrainExample, prior_loss, prior_loss_grad_alpha, train_prior
from ebrank.special import digamma, log_beta
from ebrank.synthetic import load_bundled
from ebrank.user_sim import ExaminationModel, sample_clicks

EULER_GAMMA = 0.57721566490153286061


def _record(log, name, passed, detail):
    log.append((name, bool(passed), detail))
    print(f"\n{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    assert passed, detail


def _log_uniform(rng, lo, hi, size):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size))


def test_1_special_function_identities(acceptance_log):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    a = _log_uniform(rng, 1e-3, 1e4, 1000)
    b = _log_uniform(rng, 1e-3, 1e4, 1000)
    x = _log_uniform(rng, 1e-3, 1e4, 1000)
    beta_err = np.max(np.abs(log_beta(a + 1, b) - log_beta(a, b) - np.log(a / (a + b))))
    psi_err = np.max(np.abs(digamma(x + 1) - digamma(x) - 1 / x))
    spots = max(
        abs(digamma(1.0) + EULER_GAMMA),
        abs(digamma(0.5) + EULER_GAMMA + 2 * math.log(2)),
        abs(log_beta(0.5, 0.5) - math.log(math.pi)),
    )
    elapsed = time.perf_counter() - t0
    worst = max(beta_err, psi_err, spots)
    _record(acceptance_log, "1 special functions", worst <= 1e-9 and elapsed < 1.0,
            f"max abs err {worst:.2e} (log_beta {beta_err:.1e}, digamma {psi_err:.1e}, "
            f"spots {spots:.1e}) tol 1e-9, {elapsed:.2f}s")


def test_2_gradient_check(acceptance_log):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        alpha = float(rng.uniform(0.1, 10))
        beta = float(rng.uniform(1, 10))
        n = int(rng.integers(1, 101))
        C = float(rng.uniform(0, n))
        h = 1e-5 * alpha
        fd = (prior_loss(alpha + h, beta, n, C) - prior_loss(alpha - h, beta, n, C)) / (2 * h)
        g = prior_loss_grad_alpha(alpha, beta, n, C)
        worst = max(worst, abs(g - fd) / max(abs(g), abs(fd), 1e-300))
    elapsed = time.perf_counter() - t0
    _record(acceptance_log, "2 gradient check", worst <= 1e-5 and elapsed < 1.0,
            f"max rel err {worst:.2e} over 100 configs, tol 1e-5, {elapsed:.2f}s")


def test_3_ips_unbiasedness(acceptance_log):
    """One StatsStore.record call per presentation, ranks cycling 1..5."""
    rng = np.random.default_rng(303)
    probs = ExaminationModel(5).probs(5)
    M = 100_000
    deviations = {}
    t0 = time.perf_counter()
    for R in (0.1, 0.5, 0.9):
        store = StatsStore({"q": 1})
        u = rng.random(M)
        for t in range(M):
            r = t % 5
            store.record("q", [0], [int(u[t] < probs[r] * R)], probs[r:r + 1])
        n, C, _ = store.arrays("q")
        deviations[R] = abs(C[0] / n[0] - R)
    elapsed = time.perf_counter() - t0
    worst = max(deviations.values())
    detail = ", ".join(f"R={R}: |C/n-R|={d:.4f}" for R, d in deviations.items())
    _record(acceptance_log, "3 IPS unbiasedness", worst <= 0.01 and elapsed < 10,
            f"{detail}; tol 0.01, {elapsed:.2f}s")


def test_4_prior_fixed_point(acceptance_log):
    t0 = time.perf_counter()
    x = np.ones(1)
    model = train_prior(PriorModel.zeros(1, 5.0), [TrainExample(x, 100, 30.0)] * 10,
                        learning_rate=1.0, epochs=3000)
    alpha = float(model.alpha(x))
    ratio = alpha / (alpha + 5.0)
    elapsed = time.perf_counter() - t0
    _record(acceptance_log, "4 prior fixed point", abs(ratio - 0.3) <= 0.02 and elapsed < 5,
            f"alpha*={alpha:.6f}, alpha/(alpha+5)={ratio:.6f}, target 0.300 +/- 0.02, "
            f"{elapsed:.2f}s")


def _three_item_trial(seed, sessions=2000, epsilon=None):
    cfg = ExperimentConfig()
    epsilon = cfg.epsilon if epsilon is None else epsilon
    R = np.array([0.9, 0.5, 0.1])
    rng = np.random.default_rng(seed)
    query = QueryRecord("q", np.array([2, 1, 0]), rng.normal(size=(3, 2)))
    stats = StatsStore({"q": 3})
    exam = ExaminationModel(cfg.k_s)
    models = ModelBundle(prior=PriorModel.zeros(2, cfg.beta_fixed))
    spec = PolicySpec("ebrank", epsilon)
    state = QueryState(query, [0, 1, 2], stats, bm25_index=0)
    retrain_at = set((i * sessions) // cfg.n_model_updates for i in range(1, cfg.n_model_updates + 1))
    for t in range(1, sessions + 1):
        ranked = policy_rank(spec, state, models, rng, exam)
        clicks = sample_clicks(ranked, R[list(ranked.items)], rng)
        items, probs = ranked.examined()
        stats.record("q", items, clicks[:len(items)], probs)
        if t in retrain_at:
            n, C, _ = stats.arrays("q")
            examples = [TrainExample(query.features[i], int(n[i]), float(C[i])) for i in range(3)]
            models.prior = train_prior(models.prior, examples, cfg.learning_rate, cfg.epochs)
    warm = offline_scores(spec, models, query, stats, True, 0)
    return rank_items([0, 1, 2], warm) == [0, 1, 2]


def test_5_posterior_convergence(acceptance_log):
    t0 = time.perf_counter()
    correct = sum(_three_item_trial(seed) for seed in range(20))
    elapsed = time.perf_counter() - t0
    _record(acceptance_log, "5 posterior convergence", correct >= 19 and elapsed < 30,
            f"true order recovered in {correct}/20 trials, need >= 19, {elapsed:.1f}s")


@pytest.fixture(scope="module")
def trend_runs():
    dataset = load_bundled()
    t0 = time.perf_counter()
    runs = {}
    for label, kw in (("ebrank", dict(policy="ebrank")),
                      ("cf_behav", dict(policy="cf_topk", use_behavior=True)),
                      ("cf_plain", dict(policy="cf_topk", use_behavior=False))):
        base = ExperimentConfig(trial_seed=0, **kw)
        runs[label] = [run_experiment(c, dataset) for c in trial_configs(base, 5)]
    return runs, time.perf_counter() - t0


def _sign_test(wins, trials):
    return binomtest(wins, trials, 0.5, alternative="greater").pvalue


@pytest.mark.slow
@pytest.mark.parametrize("part", ["a", "b", "c", "d"])
def test_6_trend_reproduction(part, trend_runs, acceptance_log):
    runs, elapsed = trend_runs
    eb, behav, plain = runs["ebrank"], runs["cf_behav"], runs["cf_plain"]
    if part == "a":
        pairs = [(r.warm_ndcg, r.cold_ndcg) for r in eb]
        what = "EBRank warm > cold"
    elif part == "b":
        pairs = [(a.cum_ndcg, b.cum_ndcg) for a, b in zip(eb, behav)]
        what = "EBRank Cum > CF+behavior Cum"
    elif part == "c":
        pairs = [(b.cold_ndcg, a.cold_ndcg) for a, b in zip(behav, plain)]
        what = "CF without behavior cold > CF+behavior cold"
    else:
        pairs = [(r.exploitation["behavior"], r.exploitation["max_non_behavior"]) for r in behav]
        what = "behavior ratio > max non-behavior ratio"
    wins = sum(x > y for x, y in pairs)
    p = _sign_test(wins, len(pairs))
    shown = "; ".join(f"{x:.4f} vs {y:.4f}" for x, y in pairs)
    _record(acceptance_log, f"6{part} trend", p < 0.05 and elapsed < 600,
            f"{what}: {wins}/{len(pairs)} trials, sign test p={p:.4f} [{shown}], "
            f"all runs {elapsed:.0f}s")


def test_7_determinism(acceptance_log, tmp_path):
    dataset = load_bundled()
    t0 = time.perf_counter()
    same = True
    for policy in ("ebrank", "cf_epsilon"):
        outputs = []
        for name in ("a", "b"):
            cfg = ExperimentConfig(policy=policy, trial_seed=7, session_override=6000,
                                   output_dir=str(tmp_path / policy / name))
            run_experiment(cfg, dataset)
            outputs.append((tmp_path / policy / name / "steps.csv").read_bytes())
        same = same and outputs[0] == outputs[1] and len(outputs[0]) > 0
    elapsed = time.perf_counter() - t0
    _record(acceptance_log, "7 determinism", same and elapsed < 60,
            f"step CSVs byte-identical across reruns (ebrank, cf_epsilon): {same}, {elapsed:.1f}s")


def test_8_ndcg_against_brute_force(acceptance_log):
    rng = np.random.default_rng(808)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(500):
        size = int(rng.integers(1, 7))
        rel = rng.choice([0.1, 0.4, 1.0], size=size) if rng.random() < 0.5 else rng.random(size)
        k = int(rng.integers(1, 7))
        shown = rng.permutation(rel)
        best = max(dcg_at_k(list(p), k) for p in itertools.permutations(rel))
        want = 0.0 if best == 0 else dcg_at_k(shown, k) / best
        worst = max(worst, abs(ndcg_at_k(shown, rel, k) - want))
    elapsed = time.perf_counter() - t0
    _record(acceptance_log, "8 ndcg vs brute force", worst <= 1e-12 and elapsed < 10,
            f"max abs diff {worst:.1e} over 500 queries, tol 1e-12, {elapsed:.2f}s")
