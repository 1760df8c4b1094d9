"""Ground truth on small worlds.

Two independent routes to the bias and variance of the estimators:
closed-form moment sums over enumerated latent trajectories (``moments``)
and exhaustive enumeration of every dataset (``dataset_expectation``).
Sums are accumulated with ``math.fsum`` so results are order independent.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp

from .estimator import EstimateKind, difference_from_logs, estimate_from_logs
from .policy import FscPolicy, log_likelihood_arrays
from .world import InvalidModelError, Pomdp, simulate_arrays

DEFAULT_ATOM_CAP = 10**6
DEFAULT_DATASET_CAP = 10**7


class EnumerationTooLarge(RuntimeError):
    pass


def _tables(policies: Sequence[FscPolicy]):
    pa = np.stack([p.act_probs for p in policies])
    pm = np.stack([p.mem_probs for p in policies])
    init = np.stack([p.init_mem for p in policies])
    return pa, pm, init


def exact_returns(model: Pomdp, policies: Sequence[FscPolicy]) -> np.ndarray:
    """E[R | pi] for a batch of same-shaped policies, by forward DP over (s, m)."""
    for p in policies:
        if (p.n_obs, p.n_actions) != (model.n_obs, model.n_actions):
            raise InvalidModelError("policy dimensions do not match the world")
    pa, pm, init = _tables(policies)
    er = model.expected_reward()
    d = model.start[None, :, None] * init[:, None, :]  # [b, s, m]
    total = np.zeros(len(policies))
    for _ in range(model.horizon):
        # joint over (s, m, x, a) at this step
        joint = np.einsum("bsm,sx,bxma->bsmxa", d, model.obs, pa, optimize=True)
        total += np.einsum("bsmxa,sa->b", joint, er, optimize=True)
        d = np.einsum("bsmxa,bxmn,sat->btn", joint, pm, model.trans, optimize=True)
    return total


def exact_return(model: Pomdp, policy: FscPolicy) -> float:
    return float(exact_returns(model, [policy])[0])


@dataclass
class HistoryAtom:
    states: np.ndarray
    obs: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    prob_per_policy: np.ndarray
    ret: float


class AtomSet:
    """Every latent trajectory of a small world, as parallel arrays.

    ``prob[k, j]`` is p(atom k | policies[j]); ``log_world`` is log W(h).
    Indexing yields ``HistoryAtom`` views.
    """

    def __init__(self, states, obs, act, rew, log_world, log_agent):
        self.states, self.obs, self.act, self.rew = states, obs, act, rew
        self.log_world = log_world
        self.log_agent = log_agent  # [k, j]
        self.log_prob = log_world[:, None] + log_agent
        self.prob = np.exp(self.log_prob)
        self.returns = rew.sum(axis=1)

    def __len__(self) -> int:
        return len(self.returns)

    def __getitem__(self, k) -> HistoryAtom:
        return HistoryAtom(
            self.states[k], self.obs[k], self.act[k], self.rew[k],
            self.prob[k], float(self.returns[k]),
        )

    def __iter__(self):
        return (self[k] for k in range(len(self)))


def enumerate_atoms(
    model: Pomdp, policies: Sequence[FscPolicy], cap: int = DEFAULT_ATOM_CAP
) -> AtomSet:
    """All latent trajectories with non-zero world probability."""
    T = model.horizon
    states = np.flatnonzero(model.start > 0)[:, None]
    logw = np.log(model.start[states[:, 0]])
    obs = np.empty((len(states), 0), dtype=np.int64)
    act = np.empty((len(states), 0), dtype=np.int64)
    rew = np.empty((len(states), 0))
    # every (s, x, a, s') step with p(x|s) p(s'|s,a) > 0
    steps = [
        (s, x, a, s2, math.log(model.obs[s, x] * model.trans[s, a, s2]))
        for s in range(model.n_states)
        for x in range(model.n_obs)
        for a in range(model.n_actions)
        for s2 in range(model.n_states)
        if model.obs[s, x] > 0 and model.trans[s, a, s2] > 0
    ]
    by_state = [np.array([st for st in steps if st[0] == s], dtype=float).reshape(-1, 5)
                for s in range(model.n_states)]
    for t in range(T):
        fan = np.array([len(by_state[s]) for s in states[:, -1]])
        count = int(fan.sum())
        if count > cap:
            raise EnumerationTooLarge(
                f"world too large to enumerate: at least {count} atoms after "
                f"{t + 1} of {T} steps exceeds the cap of {cap}"
            )
        parent = np.repeat(np.arange(len(states)), fan)
        table = np.concatenate([by_state[s] for s in states[:, -1]]) if count else np.empty((0, 5))
        x, a, s2 = table[:, 1].astype(np.int64), table[:, 2].astype(np.int64), table[:, 3].astype(np.int64)
        r = model.reward[states[parent, -1], a, s2]
        states = np.concatenate([states[parent], s2[:, None]], axis=1)
        obs = np.concatenate([obs[parent], x[:, None]], axis=1)
        act = np.concatenate([act[parent], a[:, None]], axis=1)
        rew = np.concatenate([rew[parent], r[:, None]], axis=1)
        logw = logw[parent] + table[:, 4]
    obs, act = np.ascontiguousarray(obs), np.ascontiguousarray(act)
    log_agent = np.stack([log_likelihood_arrays(p, obs, act) for p in policies], axis=1) \
        if policies else np.empty((len(logw), 0))
    return AtomSet(states, obs, act, rew, logw, log_agent)


@dataclass
class MomentReport:
    """Bias and variance ingredients of the difference estimators.

    Matrices are indexed ``[X][Y]`` with 0 = target A and 1 = target B.
    The normalized predictions describe the numerator form of D_N.
    ``var_dn`` carries the truncated formula including its
    ``-3 (R_A - R_B) b / n`` term; ``var_dn_leading`` omits that term.
    """

    n: int
    R_A: float
    R_B: float
    b_AB: float
    s2: list
    s2bar: list
    eta2: list
    eta2bar: list
    mean_du: float
    mean_dn: float
    var_du: float
    var_dn: float
    var_dn_leading: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _pair_sum(F, G, P) -> float:
    """sum_{h,g} F(h) G(g) pbar(h, g), with pbar(h, g) = mean_j p_j(h) p_j(g)."""
    return math.fsum((F @ P[:, j]) * (G @ P[:, j]) for j in range(P.shape[1])) / P.shape[1]


def moments(
    model: Pomdp,
    samplers: Sequence[FscPolicy],
    pi_a: FscPolicy,
    pi_b: FscPolicy,
    n: int,
    cap: int = DEFAULT_ATOM_CAP,
) -> MomentReport:
    """Closed-form moments for datasets of size n drawn from ``samplers``.

    Only the relative frequencies in ``samplers`` matter; trial i of a
    size-n dataset is assumed to use ``samplers[i % len(samplers)]``.
    The double sums over atom pairs factor through the sampler index.
    """
    if not samplers:
        raise ValueError("samplers must not be empty")
    atoms = enumerate_atoms(model, list(samplers) + [pi_a, pi_b], cap)
    k = len(samplers)
    P = atoms.prob[:, :k]
    pbar = P.mean(axis=1)
    R = atoms.returns
    pX = (atoms.prob[:, k], atoms.prob[:, k + 1])
    w = [p / pbar for p in pX]
    RX = [math.fsum(R * p) for p in pX]

    def s2(cx, cy, X, Y):
        return math.fsum((R - cx) * (R - cy) * pX[X] * pX[Y] / pbar)

    def eta2(cx, cy, X, Y):
        return _pair_sum((R - cx) * w[X], (R - cy) * w[Y], P)

    idx = ((0, 0), (0, 1)), ((1, 0), (1, 1))
    S2 = [[s2(0, 0, X, Y) for X, Y in row] for row in idx]
    S2b = [[s2(RX[X], RX[Y], X, Y) for X, Y in row] for row in idx]
    E2 = [[eta2(0, 0, X, Y) for X, Y in row] for row in idx]
    E2b = [[eta2(RX[X], RX[Y], X, Y) for X, Y in row] for row in idx]
    b = _pair_sum(R * w[0], w[1], P) - _pair_sum(w[0], R * w[1], P)

    def combo(M):
        return M[0][0] - 2 * M[0][1] + M[1][1]

    diff = RX[0] - RX[1]
    var_du = (combo(S2) - combo(E2)) / n
    leading = (combo(S2b) - combo(E2b)) / n
    return MomentReport(
        n=n, R_A=RX[0], R_B=RX[1], b_AB=b,
        s2=S2, s2bar=S2b, eta2=E2, eta2bar=E2b,
        mean_du=diff, mean_dn=diff - b / n,
        var_du=var_du,
        var_dn=leading - 3.0 * diff * b / n,
        var_dn_leading=leading,
    )


TargetSpec = Union[FscPolicy, tuple]


def dataset_expectation(
    model: Pomdp,
    samplers: Sequence[FscPolicy],
    target: TargetSpec,
    kind=EstimateKind.UNNORMALIZED,
    cap: int = DEFAULT_DATASET_CAP,
    atom_cap: int = DEFAULT_ATOM_CAP,
    chunk: int = 1 << 16,
    form: str = "ratio",
) -> tuple[float, float]:
    """Exact mean and variance of a statistic over every possible dataset.

    Trial i is drawn from ``samplers[i]``. ``target`` is either a policy
    (the estimate at that policy) or a pair ``(pi_a, pi_b)`` (the
    difference estimator, with ``form`` as in ``difference_from_logs``).
    """
    kind = EstimateKind(kind)
    pair = isinstance(target, tuple)
    targets = list(target) if pair else [target]
    n = len(samplers)
    if n < 1:
        raise ValueError("need at least one sampler")
    atoms = enumerate_atoms(model, list(samplers) + targets, atom_cap)
    K = len(atoms)
    total = K**n
    if total > cap:
        raise EnumerationTooLarge(
            f"{K}^{n} = {total} datasets exceeds the cap of {cap}"
        )
    la = atoms.log_agent
    # log sum_j A(h, pi_j) over this dataset's samplers depends only on the atom
    log_mix = logsumexp(la[:, :n], axis=1)
    R = atoms.returns
    cols = np.arange(n)

    def chunks():
        for start in range(0, total, chunk):
            flat = np.arange(start, min(start + chunk, total))
            idx = np.stack(np.unravel_index(flat, (K,) * n), axis=1)  # [c, n]
            logp = np.sum(atoms.log_prob[idx, cols], axis=1)
            if pair:
                stat = difference_from_logs(
                    R[idx], la[idx, n], la[idx, n + 1], log_mix[idx], kind, form)
            else:
                stat = estimate_from_logs(
                    R[idx], la[idx, n], log_mix[idx], kind, la[idx, cols])
            yield np.exp(logp), stat

    mean = math.fsum(math.fsum(p * s) for p, s in chunks())
    var = math.fsum(math.fsum(p * (s - mean) ** 2) for p, s in chunks())
    return mean, var


@dataclass
class BiasVarianceTable:
    ns: np.ndarray
    mean: np.ndarray
    std: np.ndarray  # nan when fewer than two replications
    kind: str
    replications: int


def empirical_bias_variance(
    model: Pomdp,
    samplers: Union[FscPolicy, Sequence[FscPolicy]],
    pi_a: FscPolicy,
    pi_b: FscPolicy,
    n_max: int,
    replications: int,
    kind,
    rng: np.random.Generator,
    ns: Optional[Sequence[int]] = None,
    form: str = "ratio",
) -> BiasVarianceTable:
    """Monte-Carlo mean and standard deviation of the difference estimate.

    Each replication draws ``n_max`` trials (trial i from
    ``samplers[i % len(samplers)]``); the size-n dataset is its first n
    trials. The draws depend only on ``rng``, not on ``kind``.
    """
    kind = EstimateKind(kind)
    if isinstance(samplers, FscPolicy):
        samplers = [samplers]
    ns = np.arange(1, n_max + 1) if ns is None else np.asarray(ns)
    k = len(samplers)
    which = np.arange(n_max) % k
    obs = np.empty((replications, n_max, model.horizon), dtype=np.int64)
    act = np.empty_like(obs)
    rets = np.empty((replications, n_max))
    for j in range(k):
        slots = np.flatnonzero(which == j)
        o, a, r, _ = simulate_arrays(model, samplers[j], rng, replications * len(slots))
        obs[:, slots] = o.reshape(replications, len(slots), -1)
        act[:, slots] = a.reshape(replications, len(slots), -1)
        rets[:, slots] = r.sum(axis=1).reshape(replications, len(slots))
    flat_o = obs.reshape(-1, model.horizon)
    flat_a = act.reshape(-1, model.horizon)

    def loglik(p):
        return log_likelihood_arrays(p, flat_o, flat_a).reshape(replications, n_max)

    L = np.stack([loglik(p) for p in samplers], axis=-1)  # [rep, i, j]
    la, lb = loglik(pi_a), loglik(pi_b)
    means, stds = [], []
    for n in ns:
        counts = np.bincount(which[:n], minlength=k)
        with np.errstate(divide="ignore"):
            log_mix = logsumexp(L[:, :n] + np.log(counts), axis=-1)
        d = difference_from_logs(rets[:, :n], la[:, :n], lb[:, :n], log_mix, kind, form)
        means.append(d.mean())
        stds.append(d.std(ddof=1) if replications > 1 else np.nan)
    return BiasVarianceTable(ns, np.array(means), np.array(stds), kind.value, replications)
