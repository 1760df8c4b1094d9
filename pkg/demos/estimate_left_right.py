"""
Evaluating policies you never ran
=================================

Collect a few episodes on the left-right corridor with one policy, then
estimate the return of other policies from that data alone and compare
with the exact values.
"""

import numpy as np

from pomdp_nis.estimator import dataset_from, effective_sample_size, estimate
from pomdp_nis.experiments import reactive_point
from pomdp_nis.oracle import exact_return
from pomdp_nis.world import build_left_right, sample_episodes

world = build_left_right()
rng = np.random.default_rng(0)

# a reactive policy is two numbers: P(left | left half), P(left | right half)
sampler = reactive_point(0.4, 0.6)
episodes = sample_episodes(world, sampler, rng, 20)
data = dataset_from([sampler] * len(episodes), episodes)
print("mean return of the data:", data.returns.mean())

for point in [(0.3, 0.9), (0.4, 0.5), (0.9, 0.1), (0.1, 0.9)]:
    target = reactive_point(*point)
    print(
        f"target {point}: exact {exact_return(world, target):7.3f}  "
        f"unnormalized {estimate(data, target, 'unnormalized'):9.3f}  "
        f"normalized {estimate(data, target, 'normalized'):7.3f}  "
        f"effective trials {effective_sample_size(data, target):5.2f}"
    )

# The normalized estimate always stays between the smallest and largest
# observed return. The unnormalized one drifts toward zero for targets whose
# histories are unlikely under the sampler, and is unbiased only on average
# over many datasets.
