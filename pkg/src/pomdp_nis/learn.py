"""Learning loops: greedy estimator climbing, random policy choice, REINFORCE."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .estimator import Dataset, EstimateKind, TrialRecord, estimate, estimate_grad
from .policy import FscPolicy, weighted_grad_arrays
from .search import ClimbOptions, climb
from .world import Pomdp, sample_episodes, with_external_memory


# Climb settings for the per-trial greedy step. The logit box keeps every
# action probability above about 0.25% so old trials never become weightless,
# and the near-zero tolerance lets the search follow gradients whose size is
# far below one (only their direction is used).
GREEDY_CLIMB = ClimbOptions(max_iterations=10, gradient_tolerance=1e-300, logit_bound=3.0)


@dataclass(frozen=True)
class LearnerConfig:
    kind: EstimateKind = EstimateKind.NORMALIZED
    trials: int = 50
    n_mem: int = 1
    climb: ClimbOptions = GREEDY_CLIMB
    seed: int = 0
    initial_policy: Optional[FscPolicy] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", EstimateKind(self.kind))
        if self.kind is EstimateKind.NAIVE:
            raise ValueError("greedy learning uses the unnormalized or normalized estimator")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass(frozen=True)
class ReinforceConfig:
    base_rate: float = 0.1
    decay: str = "constant"  # "constant" or "inverse" (rate / k)
    baseline: str = "running-mean"  # or "none"
    memory: str = "explicit"  # or "external"
    n_mem: int = 1
    trials: int = 500
    seed: int = 0
    initial_policy: Optional[FscPolicy] = None

    def __post_init__(self):
        if not self.base_rate > 0:
            raise ValueError("base_rate must be positive")
        if self.decay not in ("constant", "inverse"):
            raise ValueError(f"unknown decay {self.decay!r}")
        if self.baseline not in ("none", "running-mean"):
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if self.memory not in ("explicit", "external"):
            raise ValueError(f"unknown memory mode {self.memory!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    def rate(self, k: int) -> float:
        return self.base_rate if self.decay == "constant" else self.base_rate / k


@dataclass
class TrialStats:
    trial: int
    ret: float
    estimate: float
    grad_norm: float
    climb_iters: int


@dataclass
class TrialLog:
    """Trials in execution order plus per-trial diagnostics."""

    records: list[TrialRecord]
    stats: list[TrialStats]
    final_policy: FscPolicy
    world: Pomdp

    @property
    def returns(self) -> np.ndarray:
        return np.array([r.ret for r in self.records])

    @property
    def policies(self) -> list[FscPolicy]:
        return [r.policy for r in self.records]


def _rng(seed, rng):
    return rng if rng is not None else np.random.default_rng(seed)


def greedy_learn(
    model: Pomdp, config: LearnerConfig, rng: Optional[np.random.Generator] = None
) -> TrialLog:
    """Act, record the trial, climb the estimate from the current policy, repeat."""
    rng = _rng(config.seed, rng)
    policy = config.initial_policy or FscPolicy.uniform(
        model.n_obs, model.n_actions, config.n_mem)
    data = Dataset()
    records, stats = [], []
    for k in range(1, config.trials + 1):
        h = sample_episodes(model, policy, rng, 1)[0]
        rec = TrialRecord(policy, h)
        data.append(rec)
        records.append(rec)

        def objective(theta, base=policy):
            v, g = estimate_grad(data, base.with_flat(theta), config.kind)
            return v, g.flat()

        def value(theta, base=policy):
            return estimate(data, base.with_flat(theta), config.kind)

        res = climb(objective, policy, config.climb, value)
        stats.append(TrialStats(k, rec.ret, res.value, res.grad_norm, res.iterations))
        policy = res.policy
    return TrialLog(records, stats, policy, model)


def random_policy(n_obs: int, n_actions: int, n_mem: int, rng: np.random.Generator) -> FscPolicy:
    """Every table row drawn uniformly from the probability simplex."""
    pa = rng.dirichlet(np.ones(n_actions), size=(n_obs, n_mem))
    pm = rng.dirichlet(np.ones(n_mem), size=(n_obs, n_mem))
    with np.errstate(divide="ignore"):
        return FscPolicy(np.log(pa), np.log(pm))


def random_learn(
    model: Pomdp, trials: int, n_mem: int = 1, seed: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> TrialLog:
    """Draw every trial's policy uniformly at random, ignoring returns."""
    rng = _rng(seed, rng)
    records, stats = [], []
    policy = None
    for k in range(1, trials + 1):
        policy = random_policy(model.n_obs, model.n_actions, n_mem, rng)
        h = sample_episodes(model, policy, rng, 1)[0]
        records.append(TrialRecord(policy, h))
        stats.append(TrialStats(k, records[-1].ret, float("nan"), float("nan"), 0))
    return TrialLog(records, stats, policy, model)


def reinforce_learn(
    model: Pomdp, config: ReinforceConfig, rng: Optional[np.random.Generator] = None
) -> TrialLog:
    """Likelihood-ratio updates from the latest episode only.

    In external mode the memory register becomes part of the observation
    and the action, and the policy is reactive on that product world.
    """
    rng = _rng(config.seed, rng)
    if config.memory == "external":
        world = with_external_memory(model, config.n_mem)
        n_mem = 1
    else:
        world, n_mem = model, config.n_mem
    policy = config.initial_policy or FscPolicy.uniform(world.n_obs, world.n_actions, n_mem)
    records, stats = [], []
    total = 0.0
    for k in range(1, config.trials + 1):
        h = sample_episodes(world, policy, rng, 1)[0]
        rec = TrialRecord(policy, h)
        records.append(rec)
        b = total / (k - 1) if config.baseline == "running-mean" and k > 1 else 0.0
        _, g = weighted_grad_arrays(policy, h.obs[None, :], h.act[None, :], np.ones(1))
        step = config.rate(k) * (rec.ret - b)
        stats.append(TrialStats(k, rec.ret, float("nan"), g.max_norm(), 0))
        policy = policy.with_flat(policy.flat() + step * g.flat())
        total += rec.ret
    return TrialLog(records, stats, policy, world)
