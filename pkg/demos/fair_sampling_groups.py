"""
Fair sampling groups
====================

A classic batch draws positives from Y, so a popular item shows up mostly
as a positive. Completing each sample into a fair-sampling group gives every
user and item as many positive as negative appearances, and the gradient
that would push propensity-like bias terms cancels exactly.
"""

import numpy as np

from fairsampling.model import ModelConfig, init
from fairsampling.sampling import (SamplerConfig, fairness_tally, sample_pair_groups,
                                   sample_point_groups)
from fairsampling.synthworld import SyntheticConfig, generate_world
from fairsampling.training import pair_batch_from_groups, point_batch_from_groups, sgd_step

y = generate_world(SyntheticConfig(seed=0)).y
rng = np.random.default_rng(0)

batch = sample_point_groups(y, 64, SamplerConfig(), rng)
print(f"point groups: {len(batch.groups)} of {batch.attempted} completed")
g = batch.groups[0]
print("one group:", [(s.u, s.i, s.label) for s in g.samples()])

top = int(np.argmax(y.item_degree()))
t_fs = fairness_tally(batch.groups)
bases = [g.base for g in batch.groups if g.base.i == top]
print(f"most popular item {top}: groups +{t_fs['item_pos'][top]}/-{t_fs['item_neg'][top]}, "
      f"bases alone +{sum(b.label for b in bases)}/-{sum(1 - b.label for b in bases)}")

# a bias-only model is a pure propensity probe
for label, groups, to_batch in (("point", batch.groups, point_batch_from_groups),
                                ("pair", sample_pair_groups(y, 64, rng=rng).groups, pair_batch_from_groups)):
    for classic in (True, False):
        p = init(y.n_users, y.n_items, ModelConfig(use_biases=True, bias_only=True))
        sgd_step(p, to_batch(groups, classic=classic), learning_rate=1.0)
        moved = max(np.abs(p.user_bias).max(), np.abs(p.item_bias).max(), abs(p.global_bias))
        print(f"{label:>5} {'classic' if classic else 'fair':>7}: largest bias after one step {moved:.3g}")
