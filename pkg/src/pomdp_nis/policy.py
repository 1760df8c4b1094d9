"""Finite-state-controller policies with softmax-parameterized tables.

A controller with ``n_mem`` memory states picks an action from
``pi_a(x, m, .)`` and, independently, its next memory state from
``pi_m(x, m, .)``. With ``n_mem == 1`` it is a reactive policy.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.special import softmax

from . import _kernels
from .world import History, InvalidModelError


@dataclass(frozen=True, eq=False)
class FscPolicy:
    act_logits: np.ndarray  # [x, m, a]
    mem_logits: np.ndarray  # [x, m, m']
    init_mem: Optional[np.ndarray] = None

    def __post_init__(self):
        act = np.array(self.act_logits, dtype=float)
        mem = np.array(self.mem_logits, dtype=float)
        if act.ndim != 3 or mem.ndim != 3:
            raise InvalidModelError("logit tensors must be 3-dimensional")
        X, M, _ = act.shape
        if mem.shape != (X, M, M):
            raise InvalidModelError(
                f"mem_logits has shape {mem.shape}, expected {(X, M, M)}"
            )
        if self.init_mem is None:
            init = np.zeros(M)
            init[0] = 1.0
        else:
            init = np.array(self.init_mem, dtype=float)
        if init.shape != (M,) or np.any(init < 0) or abs(init.sum() - 1.0) > 1e-12:
            raise InvalidModelError(f"init_mem must be a distribution over {M} states")
        for arr in (act, mem, init):
            arr.setflags(write=False)
        object.__setattr__(self, "act_logits", act)
        object.__setattr__(self, "mem_logits", mem)
        object.__setattr__(self, "init_mem", init)

    @classmethod
    def uniform(cls, n_obs: int, n_actions: int, n_mem: int = 1) -> "FscPolicy":
        return cls(np.zeros((n_obs, n_mem, n_actions)), np.zeros((n_obs, n_mem, n_mem)))

    @classmethod
    def random(
        cls, n_obs: int, n_actions: int, n_mem: int, rng: np.random.Generator,
        scale: float = 1.0,
    ) -> "FscPolicy":
        return cls(
            scale * rng.standard_normal((n_obs, n_mem, n_actions)),
            scale * rng.standard_normal((n_obs, n_mem, n_mem)),
        )

    @classmethod
    def from_probs(
        cls, act_probs, mem_probs=None, init_mem=None
    ) -> "FscPolicy":
        """Build from probability tables (entries must be positive)."""
        act_probs = np.asarray(act_probs, dtype=float)
        if act_probs.ndim == 2:
            act_probs = act_probs[:, None, :]
        X, M, _ = act_probs.shape
        if mem_probs is None:
            mem_probs = np.ones((X, M, M)) / M
        return cls(np.log(act_probs), np.log(np.asarray(mem_probs, float)), init_mem)

    @property
    def n_obs(self) -> int:
        return self.act_logits.shape[0]

    @property
    def n_mem(self) -> int:
        return self.act_logits.shape[1]

    @property
    def n_actions(self) -> int:
        return self.act_logits.shape[2]

    @cached_property
    def act_probs(self) -> np.ndarray:
        return softmax(self.act_logits, axis=-1)

    @cached_property
    def mem_probs(self) -> np.ndarray:
        return softmax(self.mem_logits, axis=-1)

    @property
    def n_free_params(self) -> int:
        """Independent probabilities: each softmax row of width k has k - 1."""
        X, M, A = self.act_logits.shape
        return X * M * (A - 1) + X * M * (M - 1)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.act_logits.ravel(), self.mem_logits.ravel()])

    def with_flat(self, theta: np.ndarray) -> "FscPolicy":
        k = self.act_logits.size
        return FscPolicy(
            np.reshape(theta[:k], self.act_logits.shape),
            np.reshape(theta[k:], self.mem_logits.shape),
            self.init_mem,
        )

    def same_as(self, other: "FscPolicy") -> bool:
        return (
            np.array_equal(self.act_logits, other.act_logits)
            and np.array_equal(self.mem_logits, other.mem_logits)
            and np.array_equal(self.init_mem, other.init_mem)
        )


@dataclass(frozen=True, eq=False)
class PolicyGradient:
    """Partials of a scalar with respect to ``act_logits`` and ``mem_logits``."""

    act: np.ndarray
    mem: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.act.ravel(), self.mem.ravel()])

    def max_norm(self) -> float:
        return float(max(np.max(np.abs(self.act)), np.max(np.abs(self.mem))))


class PolicyActor:
    """Adapts an FscPolicy to the ``sample_episode`` actor protocol."""

    def __init__(self, policy: FscPolicy):
        self.policy = policy
        self.m = 0

    def reset(self, rng: np.random.Generator) -> None:
        self.m = int(_kernels.draw(self.policy.init_mem, rng.random()))

    def act(self, x: int, rng: np.random.Generator) -> int:
        a, self.m = step(self.policy, x, self.m, rng)
        return a


def step(policy: FscPolicy, x: int, m: int, rng: np.random.Generator) -> tuple[int, int]:
    """Draw an action and the next memory state for observation x in memory m."""
    a = int(_kernels.draw(policy.act_probs[x, m], rng.random()))
    m_next = int(_kernels.draw(policy.mem_probs[x, m], rng.random()))
    return a, m_next


def _check(policy: FscPolicy, obs: np.ndarray, act: np.ndarray) -> None:
    if obs.size and (obs.max() >= policy.n_obs or act.max() >= policy.n_actions):
        raise InvalidModelError(
            f"history indices exceed policy dimensions "
            f"({policy.n_obs} observations, {policy.n_actions} actions)"
        )


def stack(histories: Sequence[History]) -> tuple[np.ndarray, np.ndarray]:
    """Stack equal-length histories into ``(obs, act)`` int arrays."""
    obs = np.ascontiguousarray(np.stack([h.obs for h in histories]))
    act = np.ascontiguousarray(np.stack([h.act for h in histories]))
    return obs, act


def log_likelihood_arrays(policy: FscPolicy, obs: np.ndarray, act: np.ndarray) -> np.ndarray:
    """log A for stacked histories; the vectorized form of ``log_likelihood``."""
    _check(policy, obs, act)
    if policy.n_mem == 1:
        return np.log(policy.act_probs[obs, 0, act]).sum(axis=1)
    return _kernels.forward(policy.act_probs, policy.mem_probs, policy.init_mem, obs, act)


def log_likelihood(policy: FscPolicy, h: History) -> float:
    """log A(h, pi): log-probability of h's actions given its observations."""
    obs, act = h.obs[None, :], h.act[None, :]
    _check(policy, obs, act)
    return float(
        _kernels.forward(policy.act_probs, policy.mem_probs, policy.init_mem, obs, act)[0]
    )


def weighted_grad_arrays(
    policy: FscPolicy, obs: np.ndarray, act: np.ndarray, coef: np.ndarray
) -> tuple[np.ndarray, PolicyGradient]:
    """Per-history log A and ``sum_i coef[i] * d log A_i / d logits``."""
    _check(policy, obs, act)
    g_act = np.zeros(policy.act_logits.shape)
    g_mem = np.zeros(policy.mem_logits.shape)
    ll = _kernels.forward_backward(
        policy.act_probs, policy.mem_probs, policy.init_mem, obs, act,
        np.ascontiguousarray(coef, dtype=float), g_act, g_mem,
    )
    return ll, PolicyGradient(g_act, g_mem)


def log_likelihood_grad(policy: FscPolicy, h: History) -> tuple[float, PolicyGradient]:
    ll, grad = weighted_grad_arrays(policy, h.obs[None, :], h.act[None, :], np.ones(1))
    return float(ll[0]), grad


def likelihood_batch(policies: Sequence[FscPolicy], h: History) -> np.ndarray:
    return np.array([log_likelihood(p, h) for p in policies])
