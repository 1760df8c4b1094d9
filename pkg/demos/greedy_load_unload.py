"""
Greedy learning on load-unload
==============================

A two-state controller has to remember whether it is carrying a load.
After every episode the learner climbs the normalized estimate built from
all episodes so far, then runs the improved policy.
"""

import numpy as np

from pomdp_nis.experiments import optimal_load_unload
from pomdp_nis.learn import LearnerConfig, greedy_learn
from pomdp_nis.oracle import exact_return, exact_returns
from pomdp_nis.world import build_load_unload

world = build_load_unload()
best = exact_return(world, optimal_load_unload(world))
print(f"best achievable return over {world.horizon} steps: {best:.2f}")

log = greedy_learn(world, LearnerConfig(kind="normalized", trials=40, n_mem=2, seed=1))
exact = exact_returns(world, log.policies)
for k in range(0, 40, 5):
    print(f"trial {k + 1:3d}: observed {log.returns[k]:5.1f}  exact value of policy {exact[k]:6.2f}")

# memory usage of the final controller: how often it switches register
print("final memory transition probabilities (obs, from, to):")
print(np.round(log.final_policy.mem_probs, 2))
