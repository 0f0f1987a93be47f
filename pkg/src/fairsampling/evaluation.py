"""Full-catalog top-K ranking metrics: Recall@K, NDCG@K and ARP@K."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import InteractionMatrix
from .errors import ConfigError, DataError
from .model import MFParams, score_matrix

__all__ = [
    "EvalConfig",
    "EvalReport",
    "ComparisonTable",
    "topk",
    "topk_from_scores",
    "recall_at_k",
    "ndcg_at_k",
    "arp_at_k",
    "evaluate",
    "evaluate_scores",
    "compare_reports",
]

_BLOCK = 1024


@dataclass(frozen=True)
class EvalConfig:
    k_values: tuple[int, ...] = (20,)
    exclude_train: bool = True
    users: str = "with_holdout_only"

    def __post_init__(self):
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        if not self.k_values or any(k < 1 for k in self.k_values):
            raise ConfigError("k_values must be non-empty and each >= 1")
        if self.users not in ("all", "with_holdout_only"):
            raise ConfigError(f"unknown users policy {self.users!r}")


@dataclass
class EvalReport:
    metrics: dict[int, dict[str, float]]
    n_users_evaluated: int
    config: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metrics": {str(k): dict(v) for k, v in sorted(self.metrics.items())},
            "n_users_evaluated": self.n_users_evaluated,
            "config": self.config,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls({int(k): dict(v) for k, v in d["metrics"].items()},
                   int(d["n_users_evaluated"]), d.get("config", {}), d.get("metadata", {}))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def topk_from_scores(scores: np.ndarray, k: int, exclude: np.ndarray | None = None) -> np.ndarray:
    """Indices of the ``k`` best scores; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    eligible = scores.size - (0 if exclude is None else np.unique(exclude).size)
    if k > eligible:
        raise ConfigError(f"k={k} exceeds the {eligible} eligible items")
    s = scores.copy()
    if exclude is not None and len(exclude):
        s[exclude] = -np.inf
    # stable sort on the negated scores keeps ascending index among ties
    order = np.argsort(-s, kind="stable")
    return order[:k]


def topk(params: MFParams, train: InteractionMatrix, u: int, k: int,
         exclude_train: bool = True) -> np.ndarray:
    scores = score_matrix(params, np.array([u]))[0]
    return topk_from_scores(scores, k, train.user_items(u) if exclude_train else None)


def recall_at_k(recommended: Sequence[int], holdout, k: int) -> float:
    holdout = set(np.asarray(holdout).tolist())
    if not holdout:
        raise DataError("empty holdout")
    top = np.asarray(recommended)[:k].tolist()
    return sum(1 for i in top if i in holdout) / len(holdout)


def ndcg_at_k(recommended: Sequence[int], holdout, k: int) -> float:
    """Binary-relevance NDCG with ``log2(rank + 1)`` discount, normalized by
    the ideal DCG over ``min(k, |holdout|)`` hits."""
    holdout = set(np.asarray(holdout).tolist())
    if not holdout:
        raise DataError("empty holdout")
    top = np.asarray(recommended)[:k].tolist()
    dcg = sum(1.0 / np.log2(r + 2) for r, i in enumerate(top) if i in holdout)
    idcg = sum(1.0 / np.log2(r + 2) for r in range(min(k, len(holdout))))
    return float(dcg / idcg)


def arp_at_k(recommended: Sequence[int], popularity, k: int) -> float:
    top = np.asarray(recommended, dtype=np.int64)[:k]
    pop = np.asarray(popularity, dtype=np.float64)
    return float(pop[top].mean()) if top.size else 0.0


def _eval_block(scores, users, train, holdouts, pop, cfg, kmax, sums):
    if cfg.exclude_train:
        for r, u in enumerate(users):
            seen = train.user_items(u)
            if seen.size:
                if train.n_items - seen.size < kmax:
                    raise ConfigError(f"user {u}: k={kmax} exceeds the "
                                      f"{train.n_items - seen.size} eligible items")
                scores[r, seen] = -np.inf
    top = np.argsort(-scores, axis=1, kind="stable")[:, :kmax]
    hits = np.zeros(top.shape, dtype=bool)
    hsize = np.empty(len(users))
    for r, u in enumerate(users):
        h = holdouts[u]
        hsize[r] = len(h)
        if len(h):
            hits[r] = np.isin(top[r], h)
    discount = 1.0 / np.log2(np.arange(2, kmax + 2))
    cum_disc = np.cumsum(discount)
    for k in cfg.k_values:
        hk = hits[:, :k]
        safe = np.maximum(hsize, 1)
        recall = np.where(hsize > 0, hk.sum(1) / safe, 0.0)
        idcg = cum_disc[np.minimum(k, np.maximum(hsize, 1).astype(int)) - 1]
        ndcg = np.where(hsize > 0, (hk * discount[:k]).sum(1) / idcg, 0.0)
        arp = pop[top[:, :k]].mean(1)
        sums[k] += np.array([recall.sum(), ndcg.sum(), arp.sum()])


def _evaluate(score_rows, n_items, train, holdouts, popularity, cfg, metadata):
    if cfg.users == "with_holdout_only":
        users = np.array([u for u in range(len(holdouts)) if len(holdouts[u])], dtype=np.int64)
    else:
        users = np.arange(len(holdouts), dtype=np.int64)
    if not any(len(holdouts[u]) for u in users):
        raise DataError("no user has a non-empty holdout")
    kmax = max(cfg.k_values)
    if kmax > n_items:
        raise ConfigError(f"k={kmax} exceeds the {n_items} items in the catalog")
    pop = np.asarray(popularity, dtype=np.float64)
    sums = {k: np.zeros(3) for k in cfg.k_values}
    for start in range(0, users.size, _BLOCK):
        block = users[start:start + _BLOCK]
        _eval_block(score_rows(block), block, train, holdouts, pop, cfg, kmax, sums)
    metrics = {k: {"recall": float(v[0] / users.size), "ndcg": float(v[1] / users.size),
                   "arp": float(v[2] / users.size)} for k, v in sums.items()}
    conf = {"k_values": list(cfg.k_values), "exclude_train": cfg.exclude_train, "users": cfg.users}
    return EvalReport(metrics, int(users.size), conf, dict(metadata or {}))


def evaluate(params: MFParams, train: InteractionMatrix, holdouts: Sequence,
             popularity, cfg: EvalConfig = EvalConfig(), metadata: dict | None = None) -> EvalReport:
    """Macro-averaged Recall/NDCG/ARP over users, for every K in ``cfg``.

    ``holdouts[u]`` is the set of relevant held-out items of user ``u``.
    """
    if params.n_users != train.n_users or params.n_items != train.n_items:
        raise ConfigError("model and train matrix dimensions differ")
    return _evaluate(lambda us: score_matrix(params, us), train.n_items, train, holdouts,
                     popularity, cfg, metadata)


def evaluate_scores(scores: np.ndarray, train: InteractionMatrix, holdouts: Sequence,
                    popularity, cfg: EvalConfig = EvalConfig(), metadata: dict | None = None) -> EvalReport:
    """Same as :func:`evaluate` for an explicit ``n_users x n_items`` score matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    return _evaluate(lambda us: scores[us].copy(), train.n_items, train, holdouts,
                     popularity, cfg, metadata)


@dataclass
class ComparisonTable:
    k: int
    names: list[str]
    rows: list[dict[str, float]]
    best: dict[str, int]

    def to_dict(self) -> dict:
        return {"k": self.k, "rows": [dict(name=n, **r) for n, r in zip(self.names, self.rows)],
                "best": {c: self.names[i] for c, i in self.best.items()}}

    def render(self) -> str:
        k = self.k
        heads = ["run", f"Recall@{k} ↑", f"NDCG@{k} ↑", f"ARP@{k} ↓"]
        body = []
        for n, (name, row) in enumerate(zip(self.names, self.rows)):
            cells = [name]
            for col, fmt in (("recall", "{:.4f}"), ("ndcg", "{:.4f}"), ("arp", "{:.1f}")):
                cells.append(fmt.format(row[col]) + ("*" if self.best[col] == n else " "))
            body.append(cells)
        widths = [max(len(r[c]) for r in [heads] + body) for c in range(4)]
        line = lambda cells: "  ".join(c.ljust(w) if j == 0 else c.rjust(w)
                                       for j, (c, w) in enumerate(zip(cells, widths)))
        out = [line(heads), "  ".join("-" * w for w in widths)]
        out += [line(r) for r in body]
        return "\n".join(out)


def compare_reports(reports: Sequence[EvalReport], names: Sequence[str] | None = None,
                    k: int | None = None) -> list[ComparisonTable] | ComparisonTable:
    """Tabulate reports side by side; ``*`` marks the best value per column.

    Returns one table per K, or just the table for ``k`` when given.
    """
    if not reports:
        raise ConfigError("no reports to compare")
    ks = sorted(reports[0].metrics)
    for r in reports[1:]:
        if sorted(r.metrics) != ks:
            raise ConfigError("reports were evaluated at different K values")
    if names is None:
        names = [r.metadata.get("name") or r.metadata.get("objective") or f"run{n}"
                 for n, r in enumerate(reports)]
    tables = []
    for kk in ks:
        rows = [dict(r.metrics[kk]) for r in reports]
        best = {"recall": int(np.argmax([r["recall"] for r in rows])),
                "ndcg": int(np.argmax([r["ndcg"] for r in rows])),
                "arp": int(np.argmin([r["arp"] for r in rows]))}
        tables.append(ComparisonTable(kk, list(names), rows, best))
    if k is not None:
        if k not in ks:
            raise ConfigError(f"K={k} not present in the reports")
        return tables[ks.index(k)]
    return tables
