"""Tabular POMDP worlds, episode simulation and the two benchmark worlds.

Time is 1-based in the docs and 0-based in storage: ``History.obs[0]`` is
the first observation. The reward for step t is ``reward[s_t, a_t, s_{t+1}]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol

import numpy as np

from . import _kernels

_TOL = 1e-12


class InvalidModelError(ValueError):
    """Raised when a Pomdp or History breaks one of its invariants."""


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pomdp:
    """Tabular world: ``trans[s, a, s']``, ``obs[s, x]``, ``reward[s, a, s']``."""

    n_states: int
    n_obs: int
    n_actions: int
    horizon: int
    start: np.ndarray
    trans: np.ndarray
    obs: np.ndarray
    reward: np.ndarray
    name: str = "world"

    def __post_init__(self):
        for attr in ("start", "trans", "obs", "reward"):
            object.__setattr__(self, attr, _frozen(getattr(self, attr), float))

    def expected_reward(self) -> np.ndarray:
        """Mean immediate reward of each (s, a) pair."""
        return np.einsum("ijk,ijk->ij", self.trans, self.reward)

    def same_as(self, other: "Pomdp") -> bool:
        return (
            self.name == other.name
            and (self.n_states, self.n_obs, self.n_actions, self.horizon)
            == (other.n_states, other.n_obs, other.n_actions, other.horizon)
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("start", "trans", "obs", "reward")
            )
        )


@dataclass(frozen=True, eq=False)
class History:
    """One episode as seen by the agent.

    ``states`` holds s_1..s_{T+1} when the episode was simulated with
    ``keep_states=True``. Estimators never read it.
    """

    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    states: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "obs", _frozen(self.obs, np.int64))
        object.__setattr__(self, "act", _frozen(self.act, np.int64))
        object.__setattr__(self, "rew", _frozen(self.rew, float))
        if self.states is not None:
            object.__setattr__(self, "states", _frozen(self.states, np.int64))
        n = len(self.obs)
        if n < 1 or len(self.act) != n or len(self.rew) != n:
            raise InvalidModelError(
                f"history sequences must share a positive length, got "
                f"obs={len(self.obs)} act={len(self.act)} rew={len(self.rew)}"
            )
        if self.states is not None and len(self.states) != n + 1:
            raise InvalidModelError(
                f"state sequence has length {len(self.states)}, expected {n + 1}"
            )

    @property
    def horizon(self) -> int:
        return len(self.obs)

    def same_as(self, other: "History") -> bool:
        return (
            np.array_equal(self.obs, other.obs)
            and np.array_equal(self.act, other.act)
            and np.array_equal(self.rew, other.rew)
        )


def validate(model: Pomdp) -> Pomdp:
    """Return ``model`` unchanged if every invariant holds, else raise."""
    S, X, A = model.n_states, model.n_obs, model.n_actions
    if min(S, X, A) < 1:
        raise InvalidModelError(f"counts must be positive, got S={S} X={X} A={A}")
    if model.horizon < 1:
        raise InvalidModelError(f"horizon must be >= 1, got {model.horizon}")
    shapes = {
        "start": (model.start.shape, (S,)),
        "trans": (model.trans.shape, (S, A, S)),
        "obs": (model.obs.shape, (S, X)),
        "reward": (model.reward.shape, (S, A, S)),
    }
    for key, (got, want) in shapes.items():
        if got != want:
            raise InvalidModelError(f"{key} has shape {got}, expected {want}")
    for key in ("start", "trans", "obs"):
        arr = getattr(model, key)
        bad = np.argwhere(arr < 0)
        if len(bad):
            idx = "".join(f"[{i}]" for i in bad[0])
            raise InvalidModelError(f"{key}{idx} is negative ({arr[tuple(bad[0])]})")
    if not np.all(np.isfinite(model.reward)):
        raise InvalidModelError("reward contains non-finite entries")
    total = model.start.sum()
    if abs(total - 1.0) > _TOL:
        raise InvalidModelError(f"start sums to {total:.12g}")
    for key in ("trans", "obs"):
        arr = getattr(model, key)
        sums = arr.sum(axis=-1)
        bad = np.argwhere(np.abs(sums - 1.0) > _TOL)
        if len(bad):
            idx = "".join(f"[{i}]" for i in bad[0])
            raise InvalidModelError(f"{key}{idx} sums to {sums[tuple(bad[0])]:.12g}")
    return model


def episode_return(h: History) -> float:
    return float(np.sum(h.rew))


class Actor(Protocol):
    """Anything that picks actions and keeps its own internal state."""

    def reset(self, rng: np.random.Generator) -> None: ...

    def act(self, x: int, rng: np.random.Generator) -> int: ...


def _draw(p: np.ndarray, rng: np.random.Generator) -> int:
    return int(_kernels.draw(p, rng.random()))


def sample_episode(
    model: Pomdp, actor: Actor, rng: np.random.Generator, keep_states: bool = False
) -> History:
    """Run one episode of ``actor`` in ``model``."""
    T = model.horizon
    obs = np.empty(T, dtype=np.int64)
    act = np.empty(T, dtype=np.int64)
    rew = np.empty(T)
    states = np.empty(T + 1, dtype=np.int64)
    s = _draw(model.start, rng)
    actor.reset(rng)
    for t in range(T):
        states[t] = s
        x = _draw(model.obs[s], rng)
        a = actor.act(x, rng)
        s_next = _draw(model.trans[s, a], rng)
        obs[t], act[t], rew[t] = x, a, model.reward[s, a, s_next]
        s = s_next
    states[T] = s
    return History(obs, act, rew, states if keep_states else None)


def sample_episodes(
    model: Pomdp, policy, rng: np.random.Generator, count: int, keep_states: bool = False
) -> list[History]:
    """Simulate ``count`` independent episodes of an ``FscPolicy``.

    Uses the compiled simulator; equal seeds give identical histories.
    """
    obs, act, rew, states = simulate_arrays(model, policy, rng, count)
    return [
        History(obs[i], act[i], rew[i], states[i] if keep_states else None)
        for i in range(count)
    ]


def simulate_arrays(model: Pomdp, policy, rng: np.random.Generator, count: int):
    """Batched simulation returning raw ``(obs, act, rew, states)`` arrays."""
    if (policy.n_obs, policy.n_actions) != (model.n_obs, model.n_actions):
        raise InvalidModelError(
            f"policy is {policy.n_obs}x{policy.n_actions}, world is "
            f"{model.n_obs}x{model.n_actions}"
        )
    T = model.horizon
    u = rng.random((count, 2 + 4 * T))
    return _kernels.simulate(
        model.start, model.trans, model.obs, model.reward,
        policy.act_probs, policy.mem_probs, policy.init_mem, T, u,
    )


def build_load_unload(horizon: int = 100) -> Pomdp:
    """Nine-state cart world with one unit of reward per delivered load.

    States 0..4 are positions 1..5 while loaded, 5..8 are positions 2..5
    while unloaded. The agent observes only the position.
    """
    n_pos = 5

    def index(pos: int, loaded: bool) -> int:
        return pos if loaded else n_pos + pos - 1

    S, X, A = 9, n_pos, 2
    trans = np.zeros((S, A, S))
    reward = np.zeros((S, A, S))
    obs = np.zeros((S, X))
    for pos in range(n_pos):
        for loaded in (True, False):
            if pos == 0 and not loaded:
                continue
            s = index(pos, loaded)
            obs[s, pos] = 1.0
            for a, step in ((0, -1), (1, 1)):
                new_pos = min(max(pos + step, 0), n_pos - 1)
                new_loaded = loaded or new_pos == 0
                r = 0.0
                if new_pos == n_pos - 1 and new_loaded:
                    new_loaded, r = False, 1.0
                s_next = index(new_pos, new_loaded)
                trans[s, a, s_next] = 1.0
                reward[s, a, s_next] = r
    start = np.zeros(S)
    start[index(0, True)] = 1.0
    return Pomdp(S, X, A, horizon, start, trans, obs, reward, name="load-unload")


def build_left_right(
    reward_states: Iterable[int] = (0, 7), slip: float = 0.0, horizon: int = 100
) -> Pomdp:
    """Eight-state chain observed only as left half / right half.

    Action 0 moves left, action 1 moves right; with probability ``slip``
    the move fails. Entering a state in ``reward_states`` pays 1.
    """
    reward_states = sorted(set(int(s) for s in reward_states))
    if not reward_states:
        raise InvalidModelError("reward_states must not be empty")
    if reward_states[0] < 0 or reward_states[-1] > 7:
        raise InvalidModelError(f"reward_states {reward_states} outside 0..7")
    if not 0.0 <= slip < 0.5:
        raise InvalidModelError(f"slip must lie in [0, 0.5), got {slip}")
    S, X, A = 8, 2, 2
    trans = np.zeros((S, A, S))
    reward = np.zeros((S, A, S))
    for s in range(S):
        for a, step in ((0, -1), (1, 1)):
            target = min(max(s + step, 0), S - 1)
            trans[s, a, target] += 1.0 - slip
            trans[s, a, s] += slip
        for s_next in reward_states:
            if s_next != s:
                reward[s, :, s_next] = 1.0
    obs = np.zeros((S, X))
    obs[:4, 0] = 1.0
    obs[4:, 1] = 1.0
    start = np.zeros(S)
    start[3] = 1.0
    name = "left-right"
    if reward_states != [0, 7] or slip:
        name += f"[{','.join(map(str, reward_states))};slip={slip:g}]"
    return Pomdp(S, X, A, horizon, start, trans, obs, reward, name=name)


def with_external_memory(model: Pomdp, n_mem: int) -> Pomdp:
    """Product world where an n_mem-valued register is part of obs and action.

    State ``s * n_mem + m``, observation ``x * n_mem + m`` and action
    ``a * n_mem + m'`` (write m' to the register). A reactive policy on the
    product world is the external-memory agent.
    """
    S, X, A, M = model.n_states, model.n_obs, model.n_actions, n_mem
    trans = np.zeros((S, M, A, M, S, M))
    reward = np.zeros((S, M, A, M, S, M))
    obs = np.zeros((S, M, X, M))
    for m in range(M):
        obs[:, m, :, m] = model.obs
        for m_new in range(M):
            trans[:, m, :, m_new, :, m_new] = model.trans
            reward[:, m, :, m_new, :, m_new] = model.reward
    start = np.zeros((S, M))
    start[:, 0] = model.start
    return Pomdp(
        S * M, X * M, A * M, model.horizon,
        start.reshape(-1),
        trans.reshape(S * M, A * M, S * M),
        obs.reshape(S * M, X * M),
        reward.reshape(S * M, A * M, S * M),
        name=f"{model.name}+ext{M}",
    )
