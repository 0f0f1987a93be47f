"""Training-sample construction: classic point-wise and pair-wise samplers
and the fair-sampling completions.

A point-wise base ``(u, i)`` is completed by a partner ``(u~, i~)`` with the
same label and two cross samples ``(u~, i)`` and ``(u, i~)`` with the
opposite label, so each user and item in the group is seen once as a
positive and once as a negative. A pair-wise base ``(u, i, j)`` is completed
by the mirrored triple ``(u~, j, i)``.

All samplers are rejection samplers bounded by ``retry_cap`` rounds. The
array-level functions (``draw_*``, ``complete_*_arrays``) do the work for a
whole batch at once; the object-level functions wrap them.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np

from .dataset import InteractionMatrix
from .errors import ConfigError, ContractError, SamplerExhaustedError

__all__ = [
    "PointSample",
    "PointGroup",
    "PairTriple",
    "PairGroup",
    "SamplerConfig",
    "GroupBatch",
    "sample_point_batch_classic",
    "complete_point_group",
    "sample_pair_batch_classic",
    "complete_pair_mirror",
    "sample_point_groups",
    "sample_pair_groups",
    "verify_group",
    "fairness_tally",
    "draw_positives",
    "draw_negatives",
    "draw_pair_classic",
    "complete_point_arrays",
    "complete_pair_arrays",
    "point_group_arrays",
    "pair_group_arrays",
]


@dataclass(frozen=True)
class PointSample:
    u: int
    i: int
    label: int


@dataclass(frozen=True)
class PointGroup:
    base: PointSample
    partner: PointSample
    cross_a: PointSample
    cross_b: PointSample

    def samples(self) -> tuple[PointSample, ...]:
        return (self.base, self.partner, self.cross_a, self.cross_b)


@dataclass(frozen=True)
class PairTriple:
    u: int
    i: int
    j: int


@dataclass(frozen=True)
class PairGroup:
    base: PairTriple
    mirror: PairTriple

    def samples(self) -> tuple[PairTriple, ...]:
        return (self.base, self.mirror)


Group = Union[PointGroup, PairGroup]


@dataclass(frozen=True)
class SamplerConfig:
    retry_cap: int = 64
    neg_per_pos: int = 1
    on_failure: Literal["skip", "resample_base"] = "skip"
    seed: int = 0

    def __post_init__(self):
        if self.retry_cap < 1:
            raise ConfigError("retry_cap must be >= 1")
        if self.neg_per_pos < 0:
            raise ConfigError("neg_per_pos must be >= 0")
        if self.on_failure not in ("skip", "resample_base"):
            raise ConfigError(f"unknown on_failure policy {self.on_failure!r}")


@dataclass
class GroupBatch:
    """Completed groups plus the bookkeeping needed to report skip rates."""

    groups: list = field(default_factory=list)
    attempted: int = 0
    failed: int = 0

    @property
    def completion_rate(self) -> float:
        return 1.0 - self.failed / self.attempted if self.attempted else 1.0

    def __iter__(self):
        # allows ``groups, attempted, failed = batch``
        return iter((self.groups, self.attempted, self.failed))


# --------------------------------------------------------------------------
# array-level samplers
# --------------------------------------------------------------------------

def draw_positives(matrix: InteractionMatrix, n: int, rng: np.random.Generator):
    """``n`` pairs drawn uniformly (with replacement) from the interaction list."""
    if matrix.n_interactions == 0:
        raise SamplerExhaustedError("matrix has no interactions")
    idx = rng.integers(0, matrix.n_interactions, size=n)
    return matrix.users[idx], matrix.items[idx]


def draw_negatives(matrix: InteractionMatrix, n: int, retry_cap: int, rng: np.random.Generator):
    """``n`` cells ``(u, i)`` with uniform user and item, redrawn while ``Y[u, i] = 1``."""
    users = np.empty(n, dtype=np.int64)
    items = np.empty(n, dtype=np.int64)
    pending = np.arange(n)
    for _ in range(retry_cap):
        if pending.size == 0:
            break
        u = rng.integers(0, matrix.n_users, size=pending.size)
        i = rng.integers(0, matrix.n_items, size=pending.size)
        ok = ~matrix.contains(u, i)
        users[pending[ok]] = u[ok]
        items[pending[ok]] = i[ok]
        pending = pending[~ok]
    if pending.size:
        raise SamplerExhaustedError(
            f"{pending.size} negative draws exceeded retry_cap={retry_cap}")
    return users, items


def _draw_negative_items(matrix, users, retry_cap, rng):
    """One item per user with ``Y[u, j] = 0``; returns ``(j, ok)``."""
    j = np.full(users.size, -1, dtype=np.int64)
    pending = np.arange(users.size)
    for _ in range(retry_cap):
        if pending.size == 0:
            break
        cand = rng.integers(0, matrix.n_items, size=pending.size)
        ok = ~matrix.contains(users[pending], cand)
        j[pending[ok]] = cand[ok]
        pending = pending[~ok]
    found = np.ones(users.size, dtype=bool)
    found[pending] = False
    return j, found


def draw_pair_classic(matrix: InteractionMatrix, n: int, retry_cap: int, rng: np.random.Generator):
    """``n`` triples ``(u, i, j)`` with ``Y[u, i] = 1`` and ``Y[u, j] = 0``.

    A base whose negative draw exhausts ``retry_cap`` is discarded and a
    fresh ``(u, i)`` is drawn in its place.
    """
    if matrix.n_interactions == 0:
        raise SamplerExhaustedError("matrix has no interactions")
    if not np.any(matrix.user_degree()[matrix.users] < matrix.n_items):
        raise SamplerExhaustedError("every interacting user has a full row")
    out_u = np.empty(n, dtype=np.int64)
    out_i = np.empty(n, dtype=np.int64)
    out_j = np.empty(n, dtype=np.int64)
    pending = np.arange(n)
    while pending.size:
        u, i = draw_positives(matrix, pending.size, rng)
        j, ok = _draw_negative_items(matrix, u, retry_cap, rng)
        sel = pending[ok]
        out_u[sel], out_i[sel], out_j[sel] = u[ok], i[ok], j[ok]
        pending = pending[~ok]
    return out_u, out_i, out_j


def complete_point_arrays(matrix: InteractionMatrix, u, i, labels, retry_cap: int,
                          rng: np.random.Generator):
    """Find ``(u~, i~)`` for each point-wise base.

    Returns ``(u_tilde, i_tilde, found)``; entries where ``found`` is False
    hold -1.
    """
    u = np.asarray(u, dtype=np.int64)
    i = np.asarray(i, dtype=np.int64)
    labels = np.asarray(labels)
    ut = np.full(u.size, -1, dtype=np.int64)
    it = np.full(u.size, -1, dtype=np.int64)

    # positive bases: partner is another positive pair sharing neither index
    pending = np.flatnonzero(labels == 1)
    if pending.size and matrix.n_interactions:
        for _ in range(retry_cap):
            if pending.size == 0:
                break
            cu, ci = draw_positives(matrix, pending.size, rng)
            bu, bi = u[pending], i[pending]
            ok = (cu != bu) & (ci != bi)
            ok &= ~matrix.contains(cu, bi)
            ok &= ~matrix.contains(bu, ci)
            ut[pending[ok]] = cu[ok]
            it[pending[ok]] = ci[ok]
            pending = pending[~ok]

    # negative bases: u~ interacted with i, u interacted with i~, Y[u~, i~] = 0
    pending = np.flatnonzero(labels == 0)
    if pending.size:
        has = (matrix.item_degree()[i[pending]] > 0) & (matrix.user_degree()[u[pending]] > 0)
        pending = pending[has]
        for _ in range(retry_cap):
            if pending.size == 0:
                break
            cu, _ = matrix.random_neighbors("item_users", i[pending], rng)
            ci, _ = matrix.random_neighbors("user_items", u[pending], rng)
            ok = ~matrix.contains(cu, ci)
            ut[pending[ok]] = cu[ok]
            it[pending[ok]] = ci[ok]
            pending = pending[~ok]

    return ut, it, ut >= 0


def complete_pair_arrays(matrix: InteractionMatrix, u, i, j, retry_cap: int,
                         rng: np.random.Generator):
    """Find a mirror user ``u~`` with ``Y[u~, j] = 1`` and ``Y[u~, i] = 0``.

    Returns ``(u_tilde, found)``.
    """
    u = np.asarray(u, dtype=np.int64)
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    ut = np.full(u.size, -1, dtype=np.int64)
    pending = np.arange(u.size)
    if pending.size:
        pending = pending[matrix.item_degree()[j] > 0]
    for _ in range(retry_cap):
        if pending.size == 0:
            break
        cu, _ = matrix.random_neighbors("item_users", j[pending], rng)
        ok = (cu != u[pending]) & ~matrix.contains(cu, i[pending])
        ut[pending[ok]] = cu[ok]
        pending = pending[~ok]
    return ut, ut >= 0


# --------------------------------------------------------------------------
# object-level API
# --------------------------------------------------------------------------

def _as_generator(rng, cfg: SamplerConfig) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(cfg.seed)


def sample_point_batch_classic(matrix: InteractionMatrix, batch_positives: int,
                               cfg: SamplerConfig = SamplerConfig(),
                               rng: np.random.Generator | None = None) -> list[PointSample]:
    """Uniform positives from Y plus ``neg_per_pos`` uniform negative cells each."""
    rng = _as_generator(rng, cfg)
    pu, pi = draw_positives(matrix, batch_positives, rng)
    nu, ni = draw_negatives(matrix, batch_positives * cfg.neg_per_pos, cfg.retry_cap, rng)
    return ([PointSample(int(a), int(b), 1) for a, b in zip(pu, pi)]
            + [PointSample(int(a), int(b), 0) for a, b in zip(nu, ni)])


def sample_pair_batch_classic(matrix: InteractionMatrix, batch: int,
                              cfg: SamplerConfig = SamplerConfig(),
                              rng: np.random.Generator | None = None) -> list[PairTriple]:
    rng = _as_generator(rng, cfg)
    u, i, j = draw_pair_classic(matrix, batch, cfg.retry_cap, rng)
    return [PairTriple(int(a), int(b), int(c)) for a, b, c in zip(u, i, j)]


def _point_group(u, i, label, ut, it) -> PointGroup:
    return PointGroup(PointSample(u, i, label), PointSample(ut, it, label),
                      PointSample(ut, i, 1 - label), PointSample(u, it, 1 - label))


def complete_point_group(matrix: InteractionMatrix, base: PointSample,
                         cfg: SamplerConfig = SamplerConfig(),
                         rng: np.random.Generator | None = None) -> PointGroup | None:
    """Complete one point-wise base, or return None when no partner was found."""
    rng = _as_generator(rng, cfg)
    if not _in_range(matrix, base.u, base.i):
        raise ContractError(f"base {base} out of range")
    if base.label not in (0, 1) or matrix.contains(base.u, base.i) != bool(base.label):
        raise ContractError(f"base {base} disagrees with the matrix")
    ut, it, found = complete_point_arrays(matrix, [base.u], [base.i], [base.label],
                                          cfg.retry_cap, rng)
    if not found[0]:
        return None
    return _point_group(base.u, base.i, base.label, int(ut[0]), int(it[0]))


def complete_pair_mirror(matrix: InteractionMatrix, base: PairTriple,
                         cfg: SamplerConfig = SamplerConfig(),
                         rng: np.random.Generator | None = None) -> PairGroup | None:
    rng = _as_generator(rng, cfg)
    if not _valid_triple(matrix, base):
        raise ContractError(f"base {base} is not a valid (positive, negative) triple")
    ut, found = complete_pair_arrays(matrix, [base.u], [base.i], [base.j], cfg.retry_cap, rng)
    if not found[0]:
        return None
    return PairGroup(base, PairTriple(int(ut[0]), base.j, base.i))


@dataclass
class PointGroupArrays:
    """A point-wise batch of bases with their completions, as flat arrays.

    ``want`` marks bases selected for completion, ``found`` those completed.
    """

    u: np.ndarray
    i: np.ndarray
    label: np.ndarray
    u_tilde: np.ndarray
    i_tilde: np.ndarray
    want: np.ndarray
    found: np.ndarray
    attempted: int
    failed: int


@dataclass
class PairGroupArrays:
    u: np.ndarray
    i: np.ndarray
    j: np.ndarray
    u_tilde: np.ndarray
    want: np.ndarray
    found: np.ndarray
    attempted: int
    failed: int


def point_group_arrays(matrix: InteractionMatrix, batch_positives: int, neg_per_pos: int,
                       cfg: SamplerConfig, rng: np.random.Generator,
                       mix_ratio: float = 1.0) -> PointGroupArrays:
    """Draw classic point-wise bases and complete a ``mix_ratio`` share of them.

    With ``on_failure="resample_base"`` a base whose completion fails is
    replaced by a fresh base of the same label, up to ``retry_cap`` rounds.
    """
    pu, pi = draw_positives(matrix, batch_positives, rng)
    nu, ni = draw_negatives(matrix, batch_positives * neg_per_pos, cfg.retry_cap, rng)
    u = np.concatenate([pu, nu])
    i = np.concatenate([pi, ni])
    lab = np.concatenate([np.ones(pu.size, np.int64), np.zeros(nu.size, np.int64)])
    want = np.ones(u.size, dtype=bool) if mix_ratio >= 1.0 else rng.random(u.size) < mix_ratio
    ut = np.full(u.size, -1, dtype=np.int64)
    it = np.full(u.size, -1, dtype=np.int64)
    found = np.zeros(u.size, dtype=bool)

    todo = np.flatnonzero(want)
    a, b, f = complete_point_arrays(matrix, u[todo], i[todo], lab[todo], cfg.retry_cap, rng)
    ut[todo], it[todo], found[todo] = a, b, f
    attempted, failed = int(todo.size), int((~f).sum())

    if cfg.on_failure == "resample_base":
        for _ in range(cfg.retry_cap):
            miss = np.flatnonzero(want & ~found)
            if miss.size == 0:
                break
            miss = np.concatenate([miss[lab[miss] == 1], miss[lab[miss] == 0]])
            npos = int(lab[miss].sum())
            ru, ri = draw_positives(matrix, npos, rng)
            su, si = draw_negatives(matrix, miss.size - npos, cfg.retry_cap, rng)
            u[miss] = np.concatenate([ru, su])
            i[miss] = np.concatenate([ri, si])
            a, b, f = complete_point_arrays(matrix, u[miss], i[miss], lab[miss], cfg.retry_cap, rng)
            ut[miss], it[miss], found[miss] = a, b, f
            attempted += int(miss.size)
            failed += int((~f).sum())

    return PointGroupArrays(u, i, lab, ut, it, want, found, attempted, failed)


def pair_group_arrays(matrix: InteractionMatrix, batch: int, cfg: SamplerConfig,
                      rng: np.random.Generator, mix_ratio: float = 1.0) -> PairGroupArrays:
    u, i, j = draw_pair_classic(matrix, batch, cfg.retry_cap, rng)
    want = np.ones(u.size, dtype=bool) if mix_ratio >= 1.0 else rng.random(u.size) < mix_ratio
    ut = np.full(u.size, -1, dtype=np.int64)
    found = np.zeros(u.size, dtype=bool)

    todo = np.flatnonzero(want)
    ut[todo], found[todo] = complete_pair_arrays(matrix, u[todo], i[todo], j[todo], cfg.retry_cap, rng)
    attempted, failed = int(todo.size), int((~found[todo]).sum())

    if cfg.on_failure == "resample_base":
        for _ in range(cfg.retry_cap):
            miss = np.flatnonzero(want & ~found)
            if miss.size == 0:
                break
            u[miss], i[miss], j[miss] = draw_pair_classic(matrix, miss.size, cfg.retry_cap, rng)
            ut[miss], found[miss] = complete_pair_arrays(matrix, u[miss], i[miss], j[miss],
                                                         cfg.retry_cap, rng)
            attempted += int(miss.size)
            failed += int((~found[miss]).sum())

    return PairGroupArrays(u, i, j, ut, want, found, attempted, failed)


def sample_point_groups(matrix: InteractionMatrix, batch_positives: int,
                        cfg: SamplerConfig = SamplerConfig(),
                        rng: np.random.Generator | None = None) -> GroupBatch:
    """Draw a classic point-wise batch and complete every base.

    Only complete groups are returned; ``attempted`` and ``failed`` count
    completion attempts so the caller can report the skip rate.
    """
    rng = _as_generator(rng, cfg)
    g = point_group_arrays(matrix, batch_positives, cfg.neg_per_pos, cfg, rng)
    f = g.found
    groups = [_point_group(int(a), int(b), int(c), int(d), int(e))
              for a, b, c, d, e in zip(g.u[f], g.i[f], g.label[f], g.u_tilde[f], g.i_tilde[f])]
    return GroupBatch(groups, g.attempted, g.failed)


def sample_pair_groups(matrix: InteractionMatrix, batch: int,
                       cfg: SamplerConfig = SamplerConfig(),
                       rng: np.random.Generator | None = None) -> GroupBatch:
    rng = _as_generator(rng, cfg)
    g = pair_group_arrays(matrix, batch, cfg, rng)
    f = g.found
    groups = [PairGroup(PairTriple(int(a), int(b), int(c)), PairTriple(int(d), int(c), int(b)))
              for a, b, c, d in zip(g.u[f], g.i[f], g.j[f], g.u_tilde[f])]
    return GroupBatch(groups, g.attempted, g.failed)


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------

def _in_range(matrix, u, i) -> bool:
    return 0 <= u < matrix.n_users and 0 <= i < matrix.n_items


def _valid_triple(matrix, t: PairTriple) -> bool:
    return (_in_range(matrix, t.u, t.i) and _in_range(matrix, t.u, t.j) and t.i != t.j
            and (t.u, t.i) in matrix and (t.u, t.j) not in matrix)


def _label_ok(matrix, s: PointSample) -> bool:
    return _in_range(matrix, s.u, s.i) and s.label in (0, 1) and ((s.u, s.i) in matrix) == bool(s.label)


def verify_group(matrix: InteractionMatrix, group: Group) -> bool:
    """Check every Y-condition of a group by direct membership queries."""
    if isinstance(group, PointGroup):
        b, p, a, c = group.samples()
        shape = (p.u == a.u and p.i == c.i and a.i == b.i and c.u == b.u
                 and p.u != b.u and p.i != b.i
                 and p.label == b.label and a.label == 1 - b.label and c.label == 1 - b.label)
        return bool(shape and all(_label_ok(matrix, s) for s in group.samples()))
    if isinstance(group, PairGroup):
        b, m = group.base, group.mirror
        shape = m.i == b.j and m.j == b.i and m.u != b.u
        return bool(shape and _valid_triple(matrix, b) and _valid_triple(matrix, m))
    return False


def fairness_tally(groups) -> dict[str, Counter]:
    """Count how often each user and item fills a positive and a negative role.

    Point groups: label-1 / label-0 appearances per user and per item.
    Pair groups: positive-slot / negative-slot appearances per item.
    """
    tally = {k: Counter() for k in ("user_pos", "user_neg", "item_pos", "item_neg")}
    for g in groups:
        if isinstance(g, PointGroup):
            for s in g.samples():
                side = "pos" if s.label == 1 else "neg"
                tally[f"user_{side}"][s.u] += 1
                tally[f"item_{side}"][s.i] += 1
        else:
            for t in g.samples():
                tally["item_pos"][t.i] += 1
                tally["item_neg"][t.j] += 1
    return tally
