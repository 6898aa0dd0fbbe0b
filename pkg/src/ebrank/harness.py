"""End-to-end simulation runs: warm-up, online sessions, periodic retraining,
evaluation, and the files a run leaves behind.

Output directory layout of one run::

    steps.csv        step,partition,query_id,policy,ndcg,cum_ndcg  (one row per online session)
    checkpoints.csv  checkpoint,step,cold_ndcg,warm_ndcg,train_items,degenerate
    report.json      RunReport
    stats.txt        query_id item_id n C E
    prior.txt / cf.txt / cf_nb.txt   linear model checkpoints, when trained
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import letor
from .eb_core import StatsStore
from .letor import Dataset
from .metrics import CumNdcg, MetricConfig, evaluate_offline, exploitation_ratio, ndcg_at_k
from .policies import (CF_KINDS, CfModel, ModelBundle, PolicySpec, QueryState, behavior_feature,
                       policy_rank, rank_items, train_cf)
from .prior import PriorModel, TrainBatch, prior_objective, train_prior
from .user_sim import (ArrivalProcess, ExaminationModel, RankedList, relevance_probability,
                       sample_clicks, session_count)

log = logging.getLogger(__name__)

RNG_NAME = "numpy.random.PCG64"
STEP_HEADER = ("step", "partition", "query_id", "policy", "ndcg", "cum_ndcg")
CHECKPOINT_HEADER = ("checkpoint", "step", "cold_ndcg", "warm_ndcg", "train_items", "degenerate")

# Fields that may differ between trials of one configuration.
_TRIAL_FIELDS = ("trial_seed", "output_dir")


@dataclass
class ExperimentConfig:
    dataset_path: Optional[str] = None
    bm25_index: int = 0
    drop_features: Tuple[int, ...] = ()
    partition_seed: int = 0
    trial_seed: int = 0
    policy: str = "ebrank"
    epsilon: float = 50.0
    use_behavior: bool = True
    eta: float = 1.0
    beta_fixed: float = 5.0
    k_s: int = 5
    k_c: int = 5
    gamma: float = 0.995
    warmup_sessions_per_query: int = 20
    n_model_updates: int = 20
    learning_rate: float = 0.5
    epochs: int = 200
    session_override: Optional[int] = None
    output_dir: Optional[str] = None

    def __post_init__(self):
        self.drop_features = tuple(int(i) for i in self.drop_features)
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must be in (0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.n_model_updates < 1:
            raise ValueError("n_model_updates must be >= 1")
        if self.k_c > self.k_s:
            raise ValueError("k_c may not exceed k_s")
        if self.beta_fixed <= 0:
            raise ValueError("beta_fixed must be positive")
        if self.session_override is not None and self.session_override < 0:
            raise ValueError("session_override must be nonnegative")
        self.policy_spec  # validates kind / epsilon

    @property
    def policy_spec(self) -> PolicySpec:
        return PolicySpec(self.policy, self.epsilon, self.use_behavior)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["drop_features"] = list(self.drop_features)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class SessionLog:
    step: int
    query_id: str
    ranked: RankedList
    clicks: np.ndarray


@dataclass
class RunReport:
    config: dict
    cold_ndcg: float
    warm_ndcg: float
    cum_ndcg: float
    exploitation: Optional[dict]
    degenerate_posteriors: int
    rng: str
    sessions: dict
    wall_clock_s: float
    notes: List[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls(**json.loads(text))


@dataclass
class Simulation:
    """Prepared state of one trial; :func:`run_experiment` drives it."""

    config: ExperimentConfig
    dataset: Dataset  # all partitions, normalized
    partitions: Dict[str, str]  # query_id -> train / valid / test
    train: Dataset
    test: Dataset
    rng: np.random.Generator
    arrival: ArrivalProcess
    stats: StatsStore
    exam: ExaminationModel
    relevance: Dict[str, np.ndarray]
    models: ModelBundle
    logs: List[SessionLog] = field(default_factory=list)
    degenerate: int = 0


def prepare_dataset(config: ExperimentConfig, dataset: Optional[Dataset] = None):
    """Load, split 60/20/20 by query and min-max scale on the training part."""
    if dataset is None:
        if config.dataset_path is None:
            raise ValueError("config.dataset_path is required")
        dataset = letor.load_dataset(config.dataset_path, config.bm25_index, config.drop_features)
    elif dataset.bm25_feature_index != config.bm25_index:
        dataset = Dataset(dataset.queries, dataset.feature_count, dataset.y_max, config.bm25_index)
    train, valid, test = letor.partition(dataset, (0.6, 0.2, 0.2), config.partition_seed)
    train, (valid, test), _ = letor.normalize_features(train, [valid, test])
    parts = {}
    for name, part in (("train", train), ("valid", valid), ("test", test)):
        for qid in part.query_ids:
            parts[qid] = name
    scaled = {q.query_id: q for part in (train, valid, test) for q in part.queries}
    combined = Dataset(tuple(scaled[qid] for qid in dataset.query_ids),
                       dataset.feature_count, dataset.y_max, dataset.bm25_feature_index)
    return combined, parts, train, test


def start_simulation(config: ExperimentConfig, dataset: Optional[Dataset] = None) -> Simulation:
    combined, parts, train, test = prepare_dataset(config, dataset)
    rng = np.random.default_rng(config.trial_seed)
    arrival = ArrivalProcess.start(combined.queries, config.eta, rng)
    stats = StatsStore({q.query_id: len(q) for q in combined.queries})
    F = combined.feature_count
    spec = config.policy_spec
    models = ModelBundle(
        prior=PriorModel.zeros(F, config.beta_fixed) if spec.kind == "ebrank" else None,
        cf=CfModel.zeros(F) if spec.kind in CF_KINDS else None,
        cf_nb=CfModel.zeros(F) if spec.kind == "ucbrank" else None,
    )
    return Simulation(
        config=config, dataset=combined, partitions=parts, train=train, test=test, rng=rng,
        arrival=arrival, stats=stats, exam=ExaminationModel(config.k_s),
        relevance={q.query_id: relevance_probability(q.labels, combined.y_max) for q in combined.queries},
        models=models,
    )


def _present(sim: Simulation, step: int, query_id: str, ranked: RankedList) -> np.ndarray:
    rel = sim.relevance[query_id][list(ranked.items)]
    clicks = sample_clicks(ranked, rel, sim.rng)
    items, probs = ranked.examined()
    sim.stats.record(query_id, items, clicks[:len(items)], probs)
    sim.logs.append(SessionLog(step, query_id, ranked, clicks))
    return clicks


def run_warmup(sim: Simulation) -> int:
    """BM25-ranked sessions on each query's initial candidates; returns the count."""
    bm25 = sim.dataset.bm25_feature_index
    count = 0
    for q in sim.dataset.queries:
        active = list(sim.arrival.active[q.query_id])
        order = rank_items(active, q.features[active, bm25])
        ranked = RankedList.build(order, sim.exam)
        for _ in range(sim.config.warmup_sessions_per_query):
            count += 1
            _present(sim, -count, q.query_id, ranked)
    return count


def training_arrays(sim: Simulation):
    """Features and aggregated (n, C) for every training-partition item."""
    X, n, C = [], [], []
    for q in sim.train.queries:
        qn, qC, _ = sim.stats.arrays(q.query_id)
        X.append(q.features)
        n.append(qn)
        C.append(qC)
    return np.vstack(X), np.concatenate(n), np.concatenate(C)


def retrain(sim: Simulation) -> Tuple[int, int]:
    """Refit whichever models the policy uses, continuing from current parameters.

    Returns ``(presented training items, degenerate posteriors)``.
    """
    cfg = sim.config
    X, n, C = training_arrays(sim)
    presented = int(np.count_nonzero(n))
    degenerate = 0
    m = sim.models
    if m.prior is not None:
        batch = TrainBatch(X, n, C).presented()
        if len(batch):
            degenerate = prior_objective(m.prior, batch)[3]
        m.prior = train_prior(m.prior, batch, cfg.learning_rate, cfg.epochs)
    if m.cf is not None:
        xb = behavior_feature(n, C) if cfg.use_behavior else np.zeros(len(n))
        m.cf = train_cf(m.cf, X, xb, n, C, cfg.learning_rate, cfg.epochs)
    if m.cf_nb is not None:
        m.cf_nb = train_cf(m.cf_nb, X, np.zeros(len(n)), n, C, cfg.learning_rate, cfg.epochs)
    sim.degenerate += degenerate
    return presented, degenerate


def checkpoint_steps(total: int, updates: int) -> List[int]:
    return [(i * total) // updates for i in range(1, updates + 1)]


def _fmt(x: float) -> str:
    return repr(float(x))


def run_experiment(config: ExperimentConfig, dataset: Optional[Dataset] = None) -> RunReport:
    """Run one trial; writes the run files when ``config.output_dir`` is set."""
    started = time.perf_counter()
    sim = start_simulation(config, dataset)
    spec = config.policy_spec
    metric = MetricConfig(config.k_c, config.gamma)
    warmup = run_warmup(sim)
    retrain(sim)  # fit on warm-up logs before serving

    total = (config.session_override if config.session_override is not None
             else session_count(len(sim.dataset), sim.dataset.avg_docs, config.eta))
    schedule: Dict[int, List[int]] = {}
    for i, s in enumerate(checkpoint_steps(total, config.n_model_updates), start=1):
        schedule.setdefault(s, []).append(i)

    steps = io.StringIO()
    step_writer = csv.writer(steps, lineterminator="\n")
    step_writer.writerow(STEP_HEADER)
    checkpoints = io.StringIO()
    ckpt_writer = csv.writer(checkpoints, lineterminator="\n")
    ckpt_writer.writerow(CHECKPOINT_HEADER)

    cum = CumNdcg(config.gamma)
    cold = warm = float("nan")
    query_ids = sim.dataset.query_ids

    def checkpoint(step: int):
        nonlocal cold, warm
        for i in schedule.get(step, ()):
            presented, degenerate = retrain(sim)
            cold = evaluate_offline(spec, sim.models, sim.test, "cold", sim.stats, metric.k_c)
            warm = evaluate_offline(spec, sim.models, sim.test, "warm", sim.stats, metric.k_c)
            ckpt_writer.writerow((i, step, _fmt(cold), _fmt(warm), presented, degenerate))

    checkpoint(0)
    for step in range(1, total + 1):
        qid = query_ids[int(sim.rng.integers(len(query_ids)))]
        sim.arrival.step(qid, sim.rng)
        state = QueryState(sim.dataset[qid], sim.arrival.active[qid], sim.stats,
                           sim.dataset.bm25_feature_index, t_total=warmup + step)
        try:
            ranked = policy_rank(spec, state, sim.models, sim.rng, sim.exam)
            _present(sim, step, qid, ranked)
        except Exception as exc:
            raise RuntimeError(f"session {step} (query {qid}) failed: {exc}") from exc
        rel = sim.relevance[qid]
        ndcg = ndcg_at_k(rel[list(ranked.items)], rel, metric.k_c)
        part = sim.partitions[qid]
        if part == "test":
            cum.push(ndcg)
        step_writer.writerow((step, part, qid, spec.label, _fmt(ndcg), _fmt(cum.value)))
        checkpoint(step)

    exploitation = None
    if spec.kind in CF_KINDS and np.any(sim.models.cf.weights != 0):
        ratios = exploitation_ratio(sim.models.cf.weights)
        exploitation = {
            "behavior": float(ratios[-1]),
            "max_non_behavior": float(ratios[:-1].max()),
            "ratios": [float(r) for r in ratios],
        }

    report = RunReport(
        config=config.to_dict(),
        cold_ndcg=cold,
        warm_ndcg=warm,
        cum_ndcg=cum.value,
        exploitation=exploitation,
        degenerate_posteriors=sim.degenerate,
        rng=f"{RNG_NAME} seed={config.trial_seed}",
        sessions={"warmup": warmup, "online": total, "logged": len(sim.logs)},
        wall_clock_s=time.perf_counter() - started,
        notes=["cum_ndcg covers test-partition online sessions only; warm-up excluded"],
    )

    if config.output_dir is not None:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "steps.csv").write_text(steps.getvalue(), encoding="utf-8")
        (out / "checkpoints.csv").write_text(checkpoints.getvalue(), encoding="utf-8")
        (out / "stats.txt").write_text(sim.stats.dump(), encoding="utf-8")
        for name in ("prior", "cf", "cf_nb"):
            model = getattr(sim.models, name)
            if model is not None:
                (out / f"{name}.txt").write_text(model.to_text(), encoding="utf-8")
        (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    log.info("%s trial_seed=%d cold=%.4f warm=%.4f cum=%.3f (%.1fs)", spec.label,
             config.trial_seed, cold, warm, cum.value, report.wall_clock_s)
    return report


def replay_cum_ndcg(steps_csv: str, gamma: float) -> float:
    """Recompute Cum-NDCG from the ndcg column of test-partition rows."""
    cum = CumNdcg(gamma)
    for row in csv.DictReader(io.StringIO(steps_csv)):
        if row["partition"] == "test":
            cum.push(float(row["ndcg"]))
    return cum.value


def aggregate_trials(reports: Sequence[RunReport]) -> dict:
    """Mean and sample standard deviation of each metric across trials."""
    if not reports:
        raise ValueError("need at least one report")
    base = {k: v for k, v in reports[0].config.items() if k not in _TRIAL_FIELDS}
    for r in reports[1:]:
        other = {k: v for k, v in r.config.items() if k not in _TRIAL_FIELDS}
        if other != base:
            diff = sorted(k for k in set(base) | set(other) if base.get(k) != other.get(k))
            raise ValueError(f"reports come from different configurations (differ in {diff})")

    metrics = {
        "cold_ndcg": [r.cold_ndcg for r in reports],
        "warm_ndcg": [r.warm_ndcg for r in reports],
        "cum_ndcg": [r.cum_ndcg for r in reports],
    }
    if all(r.exploitation for r in reports):
        metrics["behavior_ratio"] = [r.exploitation["behavior"] for r in reports]
        metrics["max_non_behavior_ratio"] = [r.exploitation["max_non_behavior"] for r in reports]
    summary = {"trials": len(reports), "config": base}
    for name, values in metrics.items():
        arr = np.asarray(values, dtype=np.float64)
        summary[name] = {
            "mean": float(arr.mean()),
            "std": float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
            "values": [float(v) for v in arr],
        }
    return summary


def trial_configs(config: ExperimentConfig, trials: int) -> List[ExperimentConfig]:
    """Trial i uses seed ``config.trial_seed + i`` and its own output subdirectory."""
    out = []
    for i in range(trials):
        sub = None if config.output_dir is None else str(Path(config.output_dir) / f"trial{i}")
        out.append(config.replace(trial_seed=config.trial_seed + i, output_dir=sub))
    return out


def run_trials(configs: Sequence[ExperimentConfig], jobs: int = 1,
               dataset: Optional[Dataset] = None) -> List[RunReport]:
    if jobs <= 1:
        return [run_experiment(c, dataset) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_experiment, configs, [dataset] * len(configs)))
