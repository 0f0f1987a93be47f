"""Synthetic debiasing experiment and a small hyperparameter grid runner.

The experiment trains all four objectives for several seeds on one simulated
world and evaluates each model against a relevance-labelled holdout, where
the ground truth is R rather than the exposure-biased Y.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import InteractionMatrix
from .errors import ConfigError, DivergenceError, SamplerExhaustedError
from .evaluation import EvalConfig, EvalReport, compare_reports, evaluate
from .model import ModelConfig
from .sampling import SamplerConfig
from .seeding import derive_seed
from .synthworld import (SyntheticConfig, generate_world, holdout_positives,
                         relevance_holdout)
from .training import OBJECTIVES, TrainConfig, train

__all__ = ["ExperimentConfig", "ExperimentResult", "run_experiment", "grid_search"]

_log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    world: SyntheticConfig = field(default_factory=SyntheticConfig)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    d: int = 16
    learning_rate: float = 1.0
    l2: float = 1e-5
    epochs: int = 200
    batch_positives: int = 32
    neg_per_pos: int = 1
    init_scale: float = 0.1
    retry_cap: int = 64
    holdout_per_user: int = 50
    k: int = 20
    # FS must reach at least classic NDCG, and at most this share of classic ARP
    arp_ratio_max: float = 0.8

    def train_config(self, objective: str, seed: int) -> TrainConfig:
        return TrainConfig(objective=objective, learning_rate=self.learning_rate, l2=self.l2,
                           epochs=self.epochs, batch_positives=self.batch_positives,
                           neg_per_pos=self.neg_per_pos,
                           sampler=SamplerConfig(retry_cap=self.retry_cap, neg_per_pos=self.neg_per_pos),
                           model=ModelConfig(d=self.d, init_scale=self.init_scale), seed=seed)


@dataclass
class ExperimentResult:
    reports: dict[str, list[EvalReport]]
    summary: dict[str, dict[str, float]]
    verdict: dict
    table: object
    world_stats: dict

    @property
    def passed(self) -> bool:
        return bool(self.verdict["pass"])

    def to_dict(self) -> dict:
        return {"summary": self.summary, "verdict": self.verdict, "world": self.world_stats,
                "table": self.table.to_dict() if self.table is not None else None,
                "runs": {o: [r.to_dict() for r in reps] for o, reps in self.reports.items()}}


def _verdict(summary, seeds, ratio_max, failures):
    out = {"seeds": list(seeds), "arp_ratio_max": ratio_max, "failures": failures}
    ok = not failures
    for fam in ("pair", "point"):
        fs, cl = summary.get(f"{fam}_fs"), summary.get(f"{fam}_classic")
        if fs is None or cl is None:
            ok = False
            continue
        ratio = fs["arp"] / cl["arp"] if cl["arp"] > 0 else float("inf")
        nd_ok = fs["ndcg"] >= cl["ndcg"]
        arp_ok = ratio <= ratio_max
        out[f"ndcg_{fam}_fs"] = fs["ndcg"]
        out[f"ndcg_{fam}_classic"] = cl["ndcg"]
        out[f"arp_{fam}_fs"] = fs["arp"]
        out[f"arp_{fam}_classic"] = cl["arp"]
        out[f"arp_ratio_{fam}"] = ratio
        out[f"{fam}_ndcg_pass"] = nd_ok
        out[f"{fam}_arp_pass"] = arp_ok
        ok &= nd_ok and arp_ok
    out["pass"] = bool(ok)
    return out


def run_experiment(cfg: ExperimentConfig = ExperimentConfig(), objectives=OBJECTIVES) -> ExperimentResult:
    """Train every objective for every seed and compare medians at ``cfg.k``.

    A diverging run is recorded under ``verdict["failures"]`` and fails the
    verdict instead of raising.
    """
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    world = generate_world(cfg.world)
    holdout = relevance_holdout(world, cfg.holdout_per_user,
                                derive_seed(cfg.world.seed, "experiment.holdout"))
    positives = holdout_positives(holdout)
    pop = world.y.item_degree()
    ecfg = EvalConfig(k_values=(cfg.k,))

    reports: dict[str, list[EvalReport]] = {}
    failures = []
    for obj in objectives:
        reports[obj] = []
        for seed in cfg.seeds:
            tcfg = cfg.train_config(obj, seed)
            try:
                params, rep = train(world.y, tcfg)
            except (DivergenceError, SamplerExhaustedError) as exc:
                failures.append({"objective": obj, "seed": seed, "error": str(exc)})
                continue
            ev = evaluate(params, world.y, positives, pop, ecfg,
                          metadata={"objective": obj, "seed": seed, "skip_rate": rep.skip_rate})
            reports[obj].append(ev)
            _log.info("%s seed %d: %s", obj, seed, ev.metrics[cfg.k])

    summary = {}
    for obj, reps in reports.items():
        if reps:
            summary[obj] = {m: float(np.median([r.metrics[cfg.k][m] for r in reps]))
                            for m in ("recall", "ndcg", "arp")}
    medians = [EvalReport({cfg.k: summary[o]}, reports[o][0].n_users_evaluated,
                          metadata={"name": o}) for o in summary]
    table = compare_reports(medians, k=cfg.k) if medians else None
    verdict = _verdict(summary, cfg.seeds, cfg.arp_ratio_max, failures)
    stats = {"n_interactions": world.y.n_interactions,
             "items_without_interactions": int((pop == 0).sum()),
             "max_item_popularity": int(pop.max()) if pop.size else 0,
             "holdout_relevant": int(sum(len(p) for p in positives))}
    return ExperimentResult(reports, summary, verdict, table, stats)


_GRID_KEYS = {"learning_rate", "l2", "epochs", "batch_positives", "neg_per_pos",
              "fs_mix_ratio", "d", "init_scale"}


def grid_search(matrix: InteractionMatrix, holdouts, popularity, base: TrainConfig,
                grid: dict[str, list], k: int = 20) -> tuple[TrainConfig, list[dict]]:
    """Exhaustive search over ``grid``, selecting by NDCG@k on ``holdouts``.

    Keys are TrainConfig fields, plus ``d`` and ``init_scale`` for the model.
    Ties keep the earlier grid point.
    """
    unknown = set(grid) - _GRID_KEYS
    if unknown:
        raise ConfigError(f"unsupported grid keys: {sorted(unknown)}")
    keys = sorted(grid)
    results = []
    best, best_cfg = -np.inf, None
    for values in itertools.product(*(grid[key] for key in keys)):
        point = dict(zip(keys, values))
        model_kw = {key: point.pop(key) for key in ("d", "init_scale") if key in point}
        cfg = replace(base, model=replace(base.model, **model_kw), **point)
        params, _ = train(matrix, cfg)
        rep = evaluate(params, matrix, holdouts, popularity, EvalConfig(k_values=(k,)))
        ndcg = rep.metrics[k]["ndcg"]
        results.append({**dict(zip(keys, values)), **rep.metrics[k]})
        if ndcg > best:
            best, best_cfg = ndcg, cfg
    return best_cfg, results
