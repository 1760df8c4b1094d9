"""Importance-sampling return estimators over trials from many sampling policies.

For history i and target pi the mixture weight is

    u_i = A(h_i, pi) / sum_j A(h_i, pi_j)

(the world factor of p(h|pi) cancels). The unnormalized estimate is
``sum_i R_i u_i``, the normalized one divides by ``sum_i u_i``. All weights
are formed in log space: A(h, pi) is around 2**-100 at a horizon of 100.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .policy import (
    FscPolicy,
    PolicyGradient,
    log_likelihood_arrays,
    weighted_grad_arrays,
)
from .world import History, InvalidModelError, episode_return


class EstimateKind(str, enum.Enum):
    NAIVE = "naive"
    UNNORMALIZED = "unnormalized"
    NORMALIZED = "normalized"


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrialRecord:
    """The sampling policy of one trial, its history and its return."""

    policy: FscPolicy
    history: History
    ret: float = field(default=None)

    def __post_init__(self):
        actual = episode_return(self.history)
        if self.ret is None:
            object.__setattr__(self, "ret", actual)
        elif self.ret != actual:
            raise InvalidModelError(
                f"cached return {self.ret!r} differs from history return {actual!r}"
            )


class Dataset:
    """Append-only list of trials with a lazily filled likelihood cache.

    ``log_likelihoods()[i, j]`` is log A(h_i, pi_j). Appends take a lock;
    reads may run concurrently once the cache is filled.
    """

    def __init__(self, records: Iterable[TrialRecord] = ()):
        self._records: list[TrialRecord] = []
        self._lock = threading.RLock()
        self._obs = np.empty((0, 0), dtype=np.int64)
        self._act = np.empty((0, 0), dtype=np.int64)
        self._returns = np.empty(0)
        self._L = np.empty((0, 0))
        self._log_mix = np.empty(0)
        for r in records:
            self.append(r)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, i) -> TrialRecord:
        return self._records[i]

    @property
    def records(self) -> list[TrialRecord]:
        return list(self._records)

    def append(self, record: TrialRecord) -> None:
        with self._lock:
            if self._records:
                first = self._records[0]
                if record.history.horizon != first.history.horizon:
                    raise InvalidModelError(
                        f"history length {record.history.horizon} differs from "
                        f"dataset horizon {first.history.horizon}"
                    )
                if (record.policy.n_obs, record.policy.n_actions) != (
                    first.policy.n_obs, first.policy.n_actions
                ):
                    raise InvalidModelError("sampling policy dimensions differ")
            self._records.append(record)

    def _sync(self) -> None:
        with self._lock:
            n, done = len(self._records), self._L.shape[0]
            if n == done:
                return
            new = self._records[done:]
            obs = np.stack([r.history.obs for r in new])
            act = np.stack([r.history.act for r in new])
            if done:
                obs_all = np.concatenate([self._obs, obs])
                act_all = np.concatenate([self._act, act])
            else:
                obs_all, act_all = obs, act
            self._obs = np.ascontiguousarray(obs_all)
            self._act = np.ascontiguousarray(act_all)
            self._returns = np.concatenate([self._returns, [r.ret for r in new]])
            L = np.empty((n, n))
            L[:done, :done] = self._L
            for j in range(done):
                L[done:, j] = log_likelihood_arrays(self._records[j].policy, obs, act)
            for j in range(done, n):
                L[:, j] = log_likelihood_arrays(self._records[j].policy, self._obs, self._act)
            self._L = L
            self._log_mix = logsumexp(L, axis=1)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked ``(obs, act)`` of all histories."""
        self._sync()
        return self._obs, self._act

    @property
    def returns(self) -> np.ndarray:
        self._sync()
        return self._returns

    def log_likelihoods(self) -> np.ndarray:
        self._sync()
        return self._L

    def log_mixture(self) -> np.ndarray:
        """log sum_j A(h_i, pi_j) per history."""
        self._sync()
        return self._log_mix

    def log_target(self, target: FscPolicy) -> np.ndarray:
        if not len(self):
            raise EmptyDatasetError("dataset is empty")
        obs, act = self.arrays()
        return log_likelihood_arrays(target, obs, act)


def _kind(kind) -> EstimateKind:
    return EstimateKind(kind)


def estimate_from_logs(returns, log_target, log_mix, kind, log_own=None) -> np.ndarray:
    """Estimator values from per-trial log quantities.

    Arrays broadcast with the trial axis last, so a batch of datasets can be
    scored at once. ``log_own`` (log A under each trial's own sampler) is only
    needed for the naive estimator.
    """
    kind = _kind(kind)
    returns = np.asarray(returns, dtype=float)
    n = np.shape(log_target)[-1]
    if kind is EstimateKind.NAIVE:
        return np.sum(returns * np.exp(log_target - log_own), axis=-1) / n
    log_u = log_target - log_mix
    if kind is EstimateKind.UNNORMALIZED:
        return np.sum(returns * np.exp(log_u), axis=-1)
    w = np.exp(log_u - np.max(log_u, axis=-1, keepdims=True))
    # offset by the first return so equal returns reproduce it exactly
    ref = returns[..., :1]
    return ref[..., 0] + np.sum((returns - ref) * w, axis=-1) / np.sum(w, axis=-1)


def difference_from_logs(returns, log_a, log_b, log_mix, kind, form="ratio") -> np.ndarray:
    """Difference estimate between two targets on shared trials.

    For the normalized kind, ``form="ratio"`` gives the difference of the
    two normalized estimates, ``sum_i R_i (u_i^A / S_A - u_i^B / S_B)``
    with ``S`` the weight sum. ``form="numerator"`` gives that difference
    times ``S_A S_B``, i.e. ``U_A S_B - U_B S_A``: same sign, but its
    mean and variance have closed forms (see ``oracle.moments``).
    """
    kind = _kind(kind)
    returns = np.asarray(returns, dtype=float)
    if kind is EstimateKind.UNNORMALIZED:
        ua = np.exp(log_a - log_mix)
        ub = np.exp(log_b - log_mix)
        return np.sum(returns * (ua - ub), axis=-1)
    if kind is not EstimateKind.NORMALIZED:
        raise ValueError(f"difference is not defined for the {kind.value} estimator")
    if form == "ratio":
        return (estimate_from_logs(returns, log_a, log_mix, kind)
                - estimate_from_logs(returns, log_b, log_mix, kind))
    if form == "numerator":
        ua = np.exp(log_a - log_mix)
        ub = np.exp(log_b - log_mix)
        return (np.sum(returns * ua, axis=-1) * np.sum(ub, axis=-1)
                - np.sum(returns * ub, axis=-1) * np.sum(ua, axis=-1))
    raise ValueError(f"unknown difference form {form!r}")


def estimate(d: Dataset, target: FscPolicy, kind=EstimateKind.NORMALIZED) -> float:
    log_t = d.log_target(target)
    own = np.diag(d.log_likelihoods()) if _kind(kind) is EstimateKind.NAIVE else None
    return float(estimate_from_logs(d.returns, log_t, d.log_mixture(), kind, own))


def estimate_grad(
    d: Dataset, target: FscPolicy, kind=EstimateKind.NORMALIZED
) -> tuple[float, PolicyGradient]:
    """Estimate and its exact gradient with respect to the target's logits."""
    kind = _kind(kind)
    if not len(d):
        raise EmptyDatasetError("dataset is empty")
    obs, act = d.arrays()
    R = d.returns
    log_t = log_likelihood_arrays(target, obs, act)
    if kind is EstimateKind.NAIVE:
        r = np.exp(log_t - np.diag(d.log_likelihoods()))
        value = float(np.sum(R * r) / len(d))
        coef = R * r / len(d)
    elif kind is EstimateKind.UNNORMALIZED:
        u = np.exp(log_t - d.log_mixture())
        value = float(np.sum(R * u))
        coef = R * u
    else:
        log_u = log_t - d.log_mixture()
        w = np.exp(log_u - np.max(log_u))
        value = float(R[0] + np.sum((R - R[0]) * w) / np.sum(w))
        coef = w / np.sum(w) * (R - value)
    _, grad = weighted_grad_arrays(target, obs, act, coef)
    return value, grad


def difference(
    d: Dataset, target_a: FscPolicy, target_b: FscPolicy, kind, form: str = "ratio"
) -> float:
    """D_U or D_N between two targets on the same data."""
    return float(difference_from_logs(
        d.returns, d.log_target(target_a), d.log_target(target_b), d.log_mixture(),
        kind, form,
    ))


def weights(d: Dataset, target: FscPolicy) -> np.ndarray:
    """Normalized mixture weights ``u_i / sum u``."""
    log_u = d.log_target(target) - d.log_mixture()
    w = np.exp(log_u - logsumexp(log_u))
    return w


def effective_sample_size(d: Dataset, target: FscPolicy) -> float:
    w = weights(d, target)
    return float(1.0 / np.sum(w * w))


def dataset_from(policies: Sequence[FscPolicy], histories: Sequence[History]) -> Dataset:
    return Dataset(TrialRecord(p, h) for p, h in zip(policies, histories))
