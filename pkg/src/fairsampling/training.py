"""Loss kernels, analytic gradients and the mini-batch SGD trainer.

Point-wise samples use the cross-entropy of ``sigmoid(logit)``; pair-wise
samples use the BPR loss on logit differences. A batch's loss is the mean
over its samples, each carrying an L2 term on the parameters it touches.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Literal

import numpy as np

from .dataset import InteractionMatrix
from .errors import ConfigError, DivergenceError, SamplerExhaustedError
from .model import MFParams, ModelConfig, init, save_checkpoint, score
from .sampling import (PairTriple, PointSample, SamplerConfig, draw_negatives,
                       draw_pair_classic, draw_positives, pair_group_arrays,
                       point_group_arrays)
from .seeding import derive_rng, derive_seed

__all__ = [
    "OBJECTIVES",
    "TrainConfig",
    "TrainReport",
    "PointBatch",
    "PairBatch",
    "SparseGrad",
    "sigmoid",
    "point_loss",
    "pair_loss",
    "point_grad",
    "pair_grad",
    "batch_loss",
    "batch_grad",
    "sgd_step",
    "point_batch_from_groups",
    "pair_batch_from_groups",
    "train",
    "ideal_loss_eval",
]

_log = logging.getLogger(__name__)

OBJECTIVES = ("point_classic", "point_fs", "pair_classic", "pair_fs")
Objective = Literal["point_classic", "point_fs", "pair_classic", "pair_fs"]


@dataclass(frozen=True)
class TrainConfig:
    objective: Objective = "pair_fs"
    learning_rate: float = 1.0
    l2: float = 1e-5
    epochs: int = 20
    batch_positives: int = 256
    neg_per_pos: int = 1
    fs_mix_ratio: float = 1.0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.l2 < 0:
            raise ConfigError("l2 must be non-negative")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_positives < 1:
            raise ConfigError("batch_positives must be >= 1")
        if self.neg_per_pos < 0:
            raise ConfigError("neg_per_pos must be >= 0")
        if not 0.0 <= self.fs_mix_ratio <= 1.0:
            raise ConfigError("fs_mix_ratio must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("sampler"), dict):
            d["sampler"] = SamplerConfig(**d["sampler"])
        if isinstance(d.get("model"), dict):
            d["model"] = ModelConfig(**d["model"])
        return cls(**d)


@dataclass
class TrainReport:
    objective: str
    loss_curve: list[float] = field(default_factory=list)
    groups_attempted: int = 0
    groups_completed: int = 0
    wall_time: float = 0.0
    final_params_ref: str | None = None
    n_batches: int = 0
    n_samples: int = 0
    diagnostic: str | None = None

    @property
    def skip_rate(self) -> float:
        if not self.groups_attempted:
            return 0.0
        return 1.0 - self.groups_completed / self.groups_attempted

    def to_dict(self) -> dict:
        d = asdict(self)
        d["skip_rate"] = self.skip_rate
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, **kw)


@dataclass
class PointBatch:
    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.users.size

    @classmethod
    def from_samples(cls, samples) -> "PointBatch":
        samples = list(samples)
        return cls(np.array([s.u for s in samples], dtype=np.int64),
                   np.array([s.i for s in samples], dtype=np.int64),
                   np.array([s.label for s in samples], dtype=np.float64))


@dataclass
class PairBatch:
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __len__(self):
        return self.users.size

    @classmethod
    def from_triples(cls, triples) -> "PairBatch":
        triples = list(triples)
        return cls(np.array([t.u for t in triples], dtype=np.int64),
                   np.array([t.i for t in triples], dtype=np.int64),
                   np.array([t.j for t in triples], dtype=np.int64))


def point_batch_from_groups(groups, classic: bool = False) -> PointBatch:
    """All four members of every group, or only the bases when ``classic``."""
    if classic:
        return PointBatch.from_samples(g.base for g in groups)
    return PointBatch.from_samples(s for g in groups for s in g.samples())


def pair_batch_from_groups(groups, classic: bool = False) -> PairBatch:
    if classic:
        return PairBatch.from_triples(g.base for g in groups)
    return PairBatch.from_triples(t for g in groups for t in g.samples())


# --------------------------------------------------------------------------
# losses and gradients
# --------------------------------------------------------------------------

def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def point_loss(logit, label):
    """``-log s`` for label 1 and ``-log(1 - s)`` for label 0, ``s = sigmoid(logit)``."""
    logit = np.asarray(logit, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    out = label * np.logaddexp(0.0, -logit) + (1.0 - label) * np.logaddexp(0.0, logit)
    return float(out) if out.ndim == 0 else out


def pair_loss(logit_pos, logit_neg):
    """BPR loss ``-log sigmoid(logit_pos - logit_neg)``."""
    diff = np.asarray(logit_pos, dtype=np.float64) - np.asarray(logit_neg, dtype=np.float64)
    out = np.logaddexp(0.0, -diff)
    return float(out) if out.ndim == 0 else out


@dataclass
class SparseGrad:
    """Gradient restricted to the rows a batch touches.

    ``user_bias``/``item_bias`` are aligned with ``user_rows``/``item_rows``
    and are None for models without bias terms.
    """

    user_rows: np.ndarray
    user_factors: np.ndarray
    item_rows: np.ndarray
    item_factors: np.ndarray
    user_bias: np.ndarray | None = None
    item_bias: np.ndarray | None = None
    global_bias: float = 0.0

    def to_dense(self, params: MFParams) -> dict[str, np.ndarray]:
        out = {"user_factors": np.zeros_like(params.user_factors),
               "item_factors": np.zeros_like(params.item_factors)}
        out["user_factors"][self.user_rows] = self.user_factors
        out["item_factors"][self.item_rows] = self.item_factors
        if params.has_biases:
            out["user_bias"] = np.zeros_like(params.user_bias)
            out["item_bias"] = np.zeros_like(params.item_bias)
            out["user_bias"][self.user_rows] = self.user_bias
            out["item_bias"][self.item_rows] = self.item_bias
            out["global_bias"] = np.array([self.global_bias])
        return out


def _segments(idx):
    rows, inv = np.unique(idx, return_inverse=True)
    return rows, inv.reshape(-1)


def _seg_sum(inv, m, values):
    if values.ndim == 1:
        return np.bincount(inv, weights=values, minlength=m)
    out = np.zeros((m, values.shape[1]), dtype=np.float64)
    np.add.at(out, inv, values)
    return out


def _assemble(params, n, u_idx, u_coef, u_fac, i_idx, i_coef, i_fac, g_sum, l2):
    """Scale accumulated loss derivatives by ``1/n`` and add L2 per occurrence.

    ``*_coef`` are d(loss)/d(bias) per occurrence, ``*_fac`` the factor
    gradients per occurrence. Derivatives are summed before scaling so that
    exactly opposite contributions cancel to exactly zero.
    """
    ur, uinv = _segments(u_idx)
    ir, iinv = _segments(i_idx)
    u_cnt = np.bincount(uinv, minlength=ur.size).astype(np.float64)
    i_cnt = np.bincount(iinv, minlength=ir.size).astype(np.float64)

    scale = 1.0 / n
    gu = (_seg_sum(uinv, ur.size, u_fac) + l2 * u_cnt[:, None] * params.user_factors[ur]) * scale
    gi = (_seg_sum(iinv, ir.size, i_fac) + l2 * i_cnt[:, None] * params.item_factors[ir]) * scale
    if not params.has_biases:
        return SparseGrad(ur, gu, ir, gi)
    gbu = (_seg_sum(uinv, ur.size, u_coef) + l2 * u_cnt * params.user_bias[ur]) * scale
    gbi = (_seg_sum(iinv, ir.size, i_coef) + l2 * i_cnt * params.item_bias[ir]) * scale
    return SparseGrad(ur, gu, ir, gi, gbu, gbi, float(g_sum * scale))


def _point_terms(params: MFParams, batch: PointBatch):
    logits = score(params, batch.users, batch.items)
    g = sigmoid(logits) - batch.labels
    return np.atleast_1d(logits), np.atleast_1d(g)


def _pair_terms(params: MFParams, batch: PairBatch):
    diff = np.atleast_1d(score(params, batch.users, batch.pos) - score(params, batch.users, batch.neg))
    g = -sigmoid(-diff)
    return diff, np.atleast_1d(g)


def batch_loss(params: MFParams, batch, l2: float = 0.0) -> float:
    """Mean per-sample loss of a point or pair batch, L2 terms included."""
    n = len(batch)
    if n == 0:
        return 0.0
    sq = lambda a, idx: (a[idx] ** 2).sum(axis=-1) if a.ndim > 1 else a[idx] ** 2
    if isinstance(batch, PointBatch):
        logits, _ = _point_terms(params, batch)
        data = point_loss(logits, batch.labels)
        reg = sq(params.user_factors, batch.users) + sq(params.item_factors, batch.items)
        if params.has_biases:
            reg = reg + sq(params.user_bias, batch.users) + sq(params.item_bias, batch.items)
    else:
        diff, _ = _pair_terms(params, batch)
        data = pair_loss(diff, 0.0)
        reg = (sq(params.user_factors, batch.users) + sq(params.item_factors, batch.pos)
               + sq(params.item_factors, batch.neg))
        if params.has_biases:
            reg = reg + (sq(params.user_bias, batch.users) + sq(params.item_bias, batch.pos)
                         + sq(params.item_bias, batch.neg))
    return float(np.mean(data + 0.5 * l2 * reg))


def batch_grad(params: MFParams, batch, l2: float = 0.0) -> SparseGrad:
    """Analytic gradient of :func:`batch_loss`."""
    n = len(batch)
    if isinstance(batch, PointBatch):
        _, g = _point_terms(params, batch)
        P = params.user_factors[batch.users]
        Q = params.item_factors[batch.items]
        return _assemble(params, n,
                         batch.users, g, g[:, None] * Q,
                         batch.items, g, g[:, None] * P,
                         g.sum(), l2)
    _, g = _pair_terms(params, batch)
    P = params.user_factors[batch.users]
    Qi = params.item_factors[batch.pos]
    Qj = params.item_factors[batch.neg]
    # user bias and global bias cancel inside the score difference
    items = np.concatenate([batch.pos, batch.neg])
    item_coef = np.concatenate([g, -g])
    item_fac = np.concatenate([g[:, None] * P, -g[:, None] * P])
    return _assemble(params, n,
                     batch.users, np.zeros(n), g[:, None] * (Qi - Qj),
                     items, item_coef, item_fac, 0.0, l2)


def point_grad(params: MFParams, sample: PointSample, l2: float = 0.0) -> SparseGrad:
    return batch_grad(params, PointBatch.from_samples([sample]), l2)


def pair_grad(params: MFParams, triple: PairTriple, l2: float = 0.0) -> SparseGrad:
    if triple.i == triple.j:
        raise ValueError("positive and negative item must differ")
    return batch_grad(params, PairBatch.from_triples([triple]), l2)


def sgd_step(params: MFParams, batch, learning_rate: float, l2: float = 0.0) -> float:
    """One in-place SGD update; returns the batch loss before the update."""
    loss = batch_loss(params, batch, l2)
    grad = batch_grad(params, batch, l2)
    params.user_factors[grad.user_rows] -= learning_rate * grad.user_factors
    params.item_factors[grad.item_rows] -= learning_rate * grad.item_factors
    if params.has_biases:
        params.user_bias[grad.user_rows] -= learning_rate * grad.user_bias
        params.item_bias[grad.item_rows] -= learning_rate * grad.item_bias
        params.global_bias -= learning_rate * grad.global_bias
    return loss


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------

def _point_batch_arrays(u, i, lab) -> PointBatch:
    return PointBatch(u, i, lab.astype(np.float64))


def _make_batch(matrix: InteractionMatrix, cfg: TrainConfig, rng: np.random.Generator):
    """One training batch plus ``(attempted, completed)`` completion counts."""
    sc = cfg.sampler
    obj = cfg.objective
    if obj == "point_classic":
        pu, pi = draw_positives(matrix, cfg.batch_positives, rng)
        nu, ni = draw_negatives(matrix, cfg.batch_positives * cfg.neg_per_pos, sc.retry_cap, rng)
        lab = np.concatenate([np.ones(pu.size), np.zeros(nu.size)])
        return PointBatch(np.concatenate([pu, nu]), np.concatenate([pi, ni]), lab), 0, 0
    if obj == "pair_classic":
        u, i, j = draw_pair_classic(matrix, cfg.batch_positives, sc.retry_cap, rng)
        return PairBatch(u, i, j), 0, 0
    if obj == "point_fs":
        g = point_group_arrays(matrix, cfg.batch_positives, cfg.neg_per_pos, sc, rng,
                               cfg.fs_mix_ratio)
        f = g.found
        lab = g.label
        users = np.concatenate([g.u, g.u_tilde[f], g.u_tilde[f], g.u[f]])
        items = np.concatenate([g.i, g.i_tilde[f], g.i[f], g.i_tilde[f]])
        labels = np.concatenate([lab, lab[f], 1 - lab[f], 1 - lab[f]]).astype(np.float64)
        return PointBatch(users, items, labels), g.attempted, g.attempted - g.failed
    g = pair_group_arrays(matrix, cfg.batch_positives, sc, rng, cfg.fs_mix_ratio)
    f = g.found
    users = np.concatenate([g.u, g.u_tilde[f]])
    pos = np.concatenate([g.i, g.j[f]])
    neg = np.concatenate([g.j, g.i[f]])
    return PairBatch(users, pos, neg), g.attempted, g.attempted - g.failed


def train(matrix: InteractionMatrix, cfg: TrainConfig, checkpoint_path=None,
          params: MFParams | None = None) -> tuple[MFParams, TrainReport]:
    """Mini-batch SGD over sampled batches.

    An epoch is ``ceil(n_interactions / batch_positives)`` batches. Under the
    fair-sampling objectives every base and its completion land in the same
    batch; a base whose completion fails still trains on its own.

    The sampler stream and the initial parameters are seeded from
    ``cfg.seed`` via labelled sub-seeds, so a run is reproducible from the
    master seed alone.
    """
    if matrix.n_interactions == 0:
        raise ConfigError("cannot train on an empty interaction matrix")
    t0 = time.perf_counter()
    rng = derive_rng(cfg.seed, "train.sampler")
    if params is None:
        params = init(matrix.n_users, matrix.n_items,
                      replace(cfg.model, seed=derive_seed(cfg.seed, "train.init")))
    report = TrainReport(cfg.objective)
    n_batches = math.ceil(matrix.n_interactions / cfg.batch_positives)

    for epoch in range(cfg.epochs):
        total = 0.0
        for _ in range(n_batches):
            try:
                batch, attempted, completed = _make_batch(matrix, cfg, rng)
            except SamplerExhaustedError as exc:
                report.diagnostic = f"sampler exhausted in epoch {epoch}: {exc}"
                report.wall_time = time.perf_counter() - t0
                exc.report = report
                raise
            report.groups_attempted += attempted
            report.groups_completed += completed
            report.n_samples += len(batch)
            report.n_batches += 1
            # overflow is caught below as divergence, not warned about
            with np.errstate(over="ignore", invalid="ignore"):
                loss = sgd_step(params, batch, cfg.learning_rate, cfg.l2)
            if not math.isfinite(loss):
                report.diagnostic = f"non-finite loss in epoch {epoch}, batch {report.n_batches}"
                report.wall_time = time.perf_counter() - t0
                raise DivergenceError(report.diagnostic, report)
            total += loss
        if not params.is_finite():
            report.diagnostic = f"non-finite parameters after epoch {epoch}"
            report.wall_time = time.perf_counter() - t0
            raise DivergenceError(report.diagnostic, report)
        report.loss_curve.append(total / n_batches)
        _log.debug("epoch %d: %s loss %.6f", epoch, cfg.objective, report.loss_curve[-1])

    report.wall_time = time.perf_counter() - t0
    if checkpoint_path is not None:
        save_checkpoint(params, checkpoint_path)
        report.final_params_ref = str(checkpoint_path)
    return params, report


def ideal_loss_eval(world, params: MFParams, mode: str = "point", sample_budget: int = 100_000,
                    seed: int = 0) -> float:
    """Monte-Carlo estimate of the per-sample loss against relevance R.

    ``point``: uniform cells labelled by R. ``pair``: uniform triples
    ``(u, i, j)`` restricted to ``R[u, i] = 1, R[u, j] = 0``. Labels come
    from the realized R when the world kept it, else from Bernoulli draws
    of the relevance probabilities.
    """
    if sample_budget < 1:
        raise ConfigError("sample_budget must be >= 1")
    if mode not in ("point", "pair"):
        raise ConfigError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    nu, ni = world.relevance_prob.shape

    def label(u, i):
        if world.r_realized is not None:
            return world.r_realized[u, i].astype(np.float64)
        return (rng.random(u.shape) < world.relevance_prob[u, i]).astype(np.float64)

    if mode == "point":
        u = rng.integers(0, nu, sample_budget)
        i = rng.integers(0, ni, sample_budget)
        return float(np.mean(point_loss(score(params, u, i), label(u, i))))

    total, got = 0.0, 0
    for _ in range(10_000):
        if got >= sample_budget:
            break
        m = 2 * (sample_budget - got) + 64
        u = rng.integers(0, nu, m)
        i = rng.integers(0, ni, m)
        j = rng.integers(0, ni, m)
        keep = (label(u, i) == 1) & (label(u, j) == 0)
        u, i, j = u[keep][:sample_budget - got], i[keep][:sample_budget - got], j[keep][:sample_budget - got]
        total += float(pair_loss(score(params, u, i), score(params, u, j)).sum())
        got += u.size
    if got == 0:
        raise ConfigError("world has no (relevant, irrelevant) item pairs")
    return total / got
