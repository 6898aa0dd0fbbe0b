"""Command line front end.

    ebrank run    --policy ebrank --epsilon 50 --output-dir runs/eb
    ebrank sweep  --policies ebrank cf_topk+behav cf_topk --trials 5 --output-dir runs/sweep
    ebrank eval   runs/eb
    ebrank inspect runs/sweep/cf_topk+behav/trial0

Without ``--dataset`` the bundled synthetic corpus is used. ``--config`` reads
a JSON object of ExperimentConfig fields; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .harness import (ExperimentConfig, RunReport, aggregate_trials, replay_cum_ndcg, run_trials,
                      run_experiment, trial_configs)
from .metrics import exploitation_ratio
from .policies import CF_KINDS, POLICY_KINDS, CfModel
from .synthetic import bundled_path

log = logging.getLogger("ebrank")

REPLAY_TOLERANCE = 1e-9


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _int_list(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t.strip()]


# (flag, config field, type, help)
_CONFIG_FLAGS = (
    ("--dataset", "dataset_path", str, "LETOR file (default: bundled synthetic corpus)"),
    ("--bm25-index", "bm25_index", int, "0-based column holding BM25"),
    ("--drop-features", "drop_features", _int_list, "comma-separated 0-based columns to zero out"),
    ("--partition-seed", "partition_seed", int, "seed of the 60/20/20 query split"),
    ("--trial-seed", "trial_seed", int, "seed of the simulation stream"),
    ("--epsilon", "epsilon", float, "EBRank exploration weight"),
    ("--use-behavior", "use_behavior", _bool, "CF kinds: feed C/n as a feature"),
    ("--eta", "eta", float, "per-session arrival probability of a masked item"),
    ("--beta-fixed", "beta_fixed", float, "fixed second prior parameter"),
    ("--k-s", "k_s", int, "examination cutoff"),
    ("--k-c", "k_c", int, "NDCG cutoff"),
    ("--gamma", "gamma", float, "Cum-NDCG discount"),
    ("--warmup-sessions", "warmup_sessions_per_query", int, "BM25 sessions per query before the run"),
    ("--model-updates", "n_model_updates", int, "number of evenly spaced retrains"),
    ("--learning-rate", "learning_rate", float, "gradient step size"),
    ("--epochs", "epochs", int, "gradient steps per retrain"),
    ("--sessions", "session_override", int, "replace the derived session count"),
    ("--output-dir", "output_dir", str, "where run files are written"),
)


def _add_config_flags(p: argparse.ArgumentParser, with_policy: bool):
    p.add_argument("--config", type=Path, help="JSON file of config defaults")
    if with_policy:
        p.add_argument("--policy", dest="policy", choices=POLICY_KINDS, default=argparse.SUPPRESS)
    for flag, dest, typ, text in _CONFIG_FLAGS:
        p.add_argument(flag, dest=dest, type=typ, help=text, default=argparse.SUPPRESS)


def _build_config(args: argparse.Namespace, **extra) -> ExperimentConfig:
    data = {}
    if args.config is not None:
        data = json.loads(args.config.read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError(f"{args.config}: expected a JSON object")
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    data.update({k: v for k, v in vars(args).items() if k in fields})
    data.update(extra)
    if data.get("dataset_path") is None:
        data["dataset_path"] = str(bundled_path())
    return ExperimentConfig.from_dict(data)


def _parse_policy(token: str):
    """``cf_topk+behav`` -> (cf_topk, True); plain CF kinds drop the behavior column."""
    kind, _, suffix = token.partition("+")
    if kind not in POLICY_KINDS or suffix not in ("", "behav"):
        raise ValueError(f"unknown policy {token!r}")
    if suffix and kind not in CF_KINDS:
        raise ValueError(f"'+behav' only applies to {CF_KINDS}")
    return kind, bool(suffix)


def _summary(report: RunReport) -> dict:
    out = {"cold_ndcg": report.cold_ndcg, "warm_ndcg": report.warm_ndcg, "cum_ndcg": report.cum_ndcg}
    if report.exploitation:
        out["behavior_ratio"] = report.exploitation["behavior"]
        out["max_non_behavior_ratio"] = report.exploitation["max_non_behavior"]
    out["sessions"] = report.sessions
    out["wall_clock_s"] = round(report.wall_clock_s, 3)
    return out


def cmd_run(args) -> int:
    config = _build_config(args)
    report = run_experiment(config)
    print(json.dumps(_summary(report), indent=2))
    return 0


def cmd_sweep(args) -> int:
    base = _build_config(args)
    if args.trials < 1:
        raise ValueError("--trials must be >= 1")
    summaries = {}
    for token in args.policies:
        kind, behav = _parse_policy(token)
        out = None if base.output_dir is None else str(Path(base.output_dir) / token)
        cfg = base.replace(policy=kind, use_behavior=behav if kind in CF_KINDS else base.use_behavior,
                           output_dir=out)
        reports = run_trials(trial_configs(cfg, args.trials), args.jobs)
        summaries[token] = aggregate_trials(reports)
    text = json.dumps(summaries, indent=2, sort_keys=True)
    if base.output_dir is not None:
        Path(base.output_dir).mkdir(parents=True, exist_ok=True)
        (Path(base.output_dir) / "summary.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.run_dir)
    report = RunReport.from_json((run_dir / "report.json").read_text(encoding="utf-8"))
    steps = (run_dir / "steps.csv").read_text(encoding="utf-8")
    replayed = replay_cum_ndcg(steps, report.config["gamma"])
    diff = abs(replayed - report.cum_ndcg)
    print(json.dumps({"cum_ndcg_report": report.cum_ndcg, "cum_ndcg_replayed": replayed,
                      "abs_diff": diff}, indent=2))
    if not diff <= REPLAY_TOLERANCE:
        print(f"error: replayed Cum-NDCG differs from report by {diff:g}", file=sys.stderr)
        return 1
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "cf.txt"
    if not path.exists():
        raise FileNotFoundError(f"{path}: no CF model (only CF policies produce one)")
    model = CfModel.from_text(path.read_text(encoding="utf-8"))
    ratios = exploitation_ratio(model.weights)
    rows = {f"f{i}": float(r) for i, r in enumerate(ratios[:-1])}
    rows["behavior"] = float(ratios[-1])
    print(json.dumps({
        "ratios": rows,
        "behavior": float(ratios[-1]),
        "max_non_behavior": float(np.max(ratios[:-1])) if len(ratios) > 1 else math.nan,
    }, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ebrank", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one trial")
    _add_config_flags(p, with_policy=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="several policies x several trials")
    _add_config_flags(p, with_policy=False)
    p.add_argument("--policies", nargs="+", default=["ebrank"],
                   help="kinds; append '+behav' to a CF kind to use the behavior feature")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="recompute Cum-NDCG from a run's step log")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="exploitation ratios of a CF model")
    p.add_argument("path", help="cf.txt or a run directory containing it")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # diagnostic, not a traceback
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
