"""Two-step exposure simulator with known ground-truth relevance.

A pair is interacted with only when it is both relevant and observed:
``P(Y=1) = theta_u * theta_i * p**(alpha + 1)`` where ``p = P(R=1)``. The
realized Y is always a subset of the realized R.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import InteractionMatrix, write_pairs
from .errors import ConfigError

__all__ = [
    "SyntheticConfig",
    "SyntheticWorld",
    "generate_world",
    "exposure_prob",
    "interaction_prob",
    "relevance_holdout",
    "holdout_positives",
    "write_world",
]


@dataclass(frozen=True)
class SyntheticConfig:
    n_users: int = 200
    n_items: int = 300
    latent_dim: int = 4
    alpha: float = 1.0
    user_propensity_skew: float = 0.0
    item_propensity_skew: float = 1.0
    propensity_ceiling: float = 1.0
    seed: int = 0
    # std of the latent factors, per coordinate, scaled by 1/sqrt(latent_dim)
    latent_scale: float = 3.0
    # realized R is kept only below this many cells
    r_cell_budget: int = 10**6

    def __post_init__(self):
        if self.n_users < 1 or self.n_items < 1 or self.latent_dim < 1:
            raise ConfigError("n_users, n_items and latent_dim must be >= 1")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if self.user_propensity_skew < 0 or self.item_propensity_skew < 0:
            raise ConfigError("propensity skews must be non-negative")
        if not 0 < self.propensity_ceiling <= 1:
            raise ConfigError("propensity_ceiling must lie in (0, 1]")
        if self.latent_scale < 0:
            raise ConfigError("latent_scale must be non-negative")


@dataclass
class SyntheticWorld:
    relevance_prob: np.ndarray
    theta_user: np.ndarray
    theta_item: np.ndarray
    alpha: float
    y: InteractionMatrix
    r_realized: np.ndarray | None
    config: SyntheticConfig | None = None

    @property
    def n_users(self) -> int:
        return self.relevance_prob.shape[0]

    @property
    def n_items(self) -> int:
        return self.relevance_prob.shape[1]


def _power_law(n: int, skew: float, rng: np.random.Generator) -> np.ndarray:
    ranks = np.empty(n, dtype=np.float64)
    ranks[rng.permutation(n)] = np.arange(1, n + 1)
    return ranks ** -skew


def interaction_prob(relevance_prob, theta_user, theta_item, alpha) -> np.ndarray:
    return np.outer(theta_user, theta_item) * relevance_prob ** (alpha + 1.0)


def generate_world(config: SyntheticConfig) -> SyntheticWorld:
    rng = np.random.default_rng(config.seed)
    scale = config.latent_scale / np.sqrt(config.latent_dim)
    x = rng.normal(0.0, scale, size=(config.n_users, config.latent_dim))
    y = rng.normal(0.0, scale, size=(config.n_items, config.latent_dim))
    relevance = 1.0 / (1.0 + np.exp(-(x @ y.T)))
    # keep strictly inside (0, 1)
    tiny = np.finfo(np.float64).tiny
    relevance = np.clip(relevance, tiny, 1.0 - np.finfo(np.float64).epsneg)

    theta_u = _power_law(config.n_users, config.user_propensity_skew, rng)
    theta_i = _power_law(config.n_items, config.item_propensity_skew, rng)
    # joint rescale so the largest exposure probability equals the ceiling;
    # this also bounds P(Y=1) = exposure * relevance by the ceiling
    peak = (np.outer(theta_u, theta_i) * relevance ** config.alpha).max()
    c = np.sqrt(config.propensity_ceiling / peak)
    theta_u = theta_u * c
    theta_i = theta_i * c

    p_obs = np.outer(theta_u, theta_i) * relevance ** config.alpha
    r = rng.random(relevance.shape) < relevance
    o = rng.random(relevance.shape) < p_obs
    yu, yi = np.nonzero(r & o)
    ymat = InteractionMatrix(yu, yi, config.n_users, config.n_items)

    keep_r = relevance.size <= config.r_cell_budget
    return SyntheticWorld(relevance, theta_u, theta_i, float(config.alpha), ymat,
                          r.astype(np.int8) if keep_r else None, config)


def exposure_prob(world: SyntheticWorld, u: int, i: int) -> float:
    """``P(O=1 | R=1) = theta_u * theta_i * P(R=1)**alpha``."""
    if not (0 <= u < world.n_users and 0 <= i < world.n_items):
        raise IndexError(f"pair ({u}, {i}) out of range")
    p = world.relevance_prob[u, i]
    return float(world.theta_user[u] * world.theta_item[i] * p ** world.alpha)


def relevance_holdout(world: SyntheticWorld, per_user: int, seed: int,
                      train: InteractionMatrix | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per user, ``per_user`` catalog items drawn uniformly without
    replacement among items outside the user's training row, each labelled
    with its realized relevance.

    When the world dropped its realized R, labels are fresh Bernoulli draws
    from ``relevance_prob``.
    """
    train = world.y if train is None else train
    if per_user < 0 or per_user > world.n_items:
        raise ConfigError("per_user must lie in [0, n_items]")
    rng = np.random.default_rng(seed)
    out = []
    for u in range(world.n_users):
        seen = train.user_items(u)
        eligible = np.setdiff1d(np.arange(world.n_items), seen, assume_unique=True)
        if per_user > eligible.size:
            raise ConfigError(
                f"user {u}: per_user={per_user} exceeds {eligible.size} items outside training")
        items = np.sort(rng.choice(eligible, size=per_user, replace=False))
        if world.r_realized is not None:
            labels = world.r_realized[u, items].astype(np.int8)
        else:
            labels = (rng.random(per_user) < world.relevance_prob[u, items]).astype(np.int8)
        out.append((items, labels))
    return out


def holdout_positives(holdout) -> list[np.ndarray]:
    """Relevant items of a labelled holdout, the sets that ranking metrics consume."""
    return [items[labels == 1] for items, labels in holdout]


def write_world(world: SyntheticWorld, holdout, directory, manifest_extra: dict | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    write_pairs(os.path.join(directory, "train.tsv"), world.y.users, world.y.items)
    with open(os.path.join(directory, "ideal_test.tsv"), "w", encoding="utf-8") as fh:
        for u, (items, labels) in enumerate(holdout):
            for i, lab in zip(items.tolist(), labels.tolist()):
                fh.write(f"{u}\t{i}\t{lab}\n")
    for name, vec in (("theta_user.tsv", world.theta_user), ("theta_item.tsv", world.theta_item)):
        with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
            fh.writelines(f"{n}\t{v!r}\n" for n, v in enumerate(vec.tolist()))
    info = {
        "kind": "synth",
        "n_users": world.n_users,
        "n_items": world.n_items,
        "n_train": world.y.n_interactions,
        "expected_interactions": float(interaction_prob(
            world.relevance_prob, world.theta_user, world.theta_item, world.alpha).sum()),
        # multiplier applied jointly to the raw power-law vectors (max 1 each)
        "theta_rescale": float(world.theta_user.max() * world.theta_item.max()),
        "config": asdict(world.config) if world.config else None,
    }
    if manifest_extra:
        info.update(manifest_extra)
    with open(os.path.join(directory, "synth.json"), "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_synth(directory):
    """Load a synth directory as ``(train_matrix, labelled_holdout, info)``."""
    from .dataset import read_pairs

    with open(os.path.join(directory, "synth.json"), encoding="utf-8") as fh:
        info = json.load(fh)
    n_users, n_items = info["n_users"], info["n_items"]
    train = InteractionMatrix(*read_pairs(os.path.join(directory, "train.tsv")), n_users, n_items)
    rows = [([], []) for _ in range(n_users)]
    arr = np.loadtxt(os.path.join(directory, "ideal_test.tsv"), dtype=np.int64, delimiter="\t", ndmin=2)
    for u, i, lab in arr.tolist():
        rows[u][0].append(i)
        rows[u][1].append(lab)
    holdout = [(np.array(a, dtype=np.int64), np.array(b, dtype=np.int8)) for a, b in rows]
    return train, holdout, info
