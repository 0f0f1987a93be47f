"""
Exposure bias in a simulated world
==================================

Interactions need both relevance and exposure. Popular items are shown far
more often, so the observed matrix Y over-represents them even though the
relevance matrix R does not favour them at all.
"""

import numpy as np

from fairsampling.synthworld import SyntheticConfig, generate_world

world = generate_world(SyntheticConfig(seed=0))
print(world.y)

# relevance per item is flat across the propensity ranking ...
order = np.argsort(-world.theta_item)
relevant_per_item = world.r_realized.sum(axis=0)[order]
observed_per_item = world.y.item_degree()[order]

for name, lo, hi in (("top 10%", 0, 30), ("middle", 120, 180), ("bottom 10%", 270, 300)):
    print(f"{name:>10}: mean relevant users {relevant_per_item[lo:hi].mean():6.1f}"
          f"   mean interactions {observed_per_item[lo:hi].mean():5.2f}")

# ... while the interaction counts follow the exposure skew
print("share of interactions on the top 10% most exposed items:",
      round(observed_per_item[:30].sum() / world.y.n_interactions, 3))
print("items never interacted with:", int((world.y.item_degree() == 0).sum()))
