"""JSON files for worlds and policies, and JSON-lines trial logs.

Floats are written with Python's shortest round-trip representation, so
``load(save(x))`` reproduces every number bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .estimator import TrialRecord
from .policy import FscPolicy
from .world import History, InvalidModelError, Pomdp, validate

PathLike = Union[str, Path]


class FormatError(ValueError):
    """A file that does not follow one of the formats in this module."""


def _field(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise FormatError(f"{where}: expected a JSON object, got {type(obj).__name__}")
    if key not in obj:
        raise FormatError(f"{where}: missing field {key!r}")
    return obj[key]


def _array(obj: dict, key: str, where: str, dtype=float, ndim=None) -> np.ndarray:
    try:
        arr = np.array(_field(obj, key, where), dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: field {key!r} is not a numeric array ({exc})") from None
    if ndim is not None and arr.ndim != ndim:
        raise FormatError(f"{where}: field {key!r} must be {ndim}-dimensional, got {arr.ndim}")
    return arr


# worlds

def world_to_dict(model: Pomdp) -> dict:
    return {
        "name": model.name,
        "n_states": model.n_states,
        "n_obs": model.n_obs,
        "n_actions": model.n_actions,
        "horizon": model.horizon,
        "start": model.start.tolist(),
        "trans": model.trans.tolist(),
        "obs": model.obs.tolist(),
        "reward": model.reward.tolist(),
    }


def world_from_dict(d: dict, where: str = "world") -> Pomdp:
    try:
        model = Pomdp(
            n_states=int(_field(d, "n_states", where)),
            n_obs=int(_field(d, "n_obs", where)),
            n_actions=int(_field(d, "n_actions", where)),
            horizon=int(_field(d, "horizon", where)),
            start=_array(d, "start", where, ndim=1),
            trans=_array(d, "trans", where, ndim=3),
            obs=_array(d, "obs", where, ndim=2),
            reward=_array(d, "reward", where, ndim=3),
            name=str(d.get("name", "world")),
        )
    except InvalidModelError as exc:
        raise InvalidModelError(f"{where}: {exc}") from None
    return validate(model)


def world_json(model: Pomdp) -> str:
    """Canonical serialization; also the input of the world hash in file headers."""
    return json.dumps(world_to_dict(model), sort_keys=True, separators=(",", ":"))


def save_world(model: Pomdp, path: PathLike) -> None:
    Path(path).write_text(json.dumps(world_to_dict(model)) + "\n")


def load_world(path: PathLike) -> Pomdp:
    return world_from_dict(_read_json(path), str(path))


# policies

def policy_to_dict(policy: FscPolicy) -> dict:
    return {
        "n_obs": policy.n_obs,
        "n_actions": policy.n_actions,
        "n_mem": policy.n_mem,
        "act_logits": policy.act_logits.tolist(),
        "mem_logits": policy.mem_logits.tolist(),
        "init_mem": policy.init_mem.tolist(),
    }


def policy_from_dict(d: dict, where: str = "policy") -> FscPolicy:
    act = _array(d, "act_logits", where, ndim=3)
    mem = _array(d, "mem_logits", where, ndim=3)
    init = _array(d, "init_mem", where, ndim=1) if "init_mem" in d else None
    declared = tuple(int(_field(d, k, where)) for k in ("n_obs", "n_mem", "n_actions"))
    if act.shape != declared:
        raise FormatError(
            f"{where}: act_logits has shape {act.shape}, declared (n_obs, n_mem, n_actions) = {declared}"
        )
    try:
        return FscPolicy(act, mem, init)
    except InvalidModelError as exc:
        raise FormatError(f"{where}: {exc}") from None


def save_policy(policy: FscPolicy, path: PathLike) -> None:
    Path(path).write_text(json.dumps(policy_to_dict(policy)) + "\n")


def load_policy(path: PathLike) -> FscPolicy:
    return policy_from_dict(_read_json(path), str(path))


# trial logs

def record_to_dict(k: int, record: TrialRecord) -> dict:
    h = record.history
    return {
        "trial": k,
        "policy": policy_to_dict(record.policy),
        "history": {"obs": h.obs.tolist(), "act": h.act.tolist(), "rew": h.rew.tolist()},
        "return": record.ret,
    }


def record_from_dict(d: dict, where: str) -> TrialRecord:
    policy = policy_from_dict(_field(d, "policy", where), f"{where}: policy")
    hd = _field(d, "history", where)
    hw = f"{where}: history"
    try:
        history = History(
            _array(hd, "obs", hw, dtype=np.int64, ndim=1),
            _array(hd, "act", hw, dtype=np.int64, ndim=1),
            _array(hd, "rew", hw, ndim=1),
        )
        return TrialRecord(policy, history, float(_field(d, "return", where)))
    except InvalidModelError as exc:
        raise FormatError(f"{where}: {exc}") from None


def save_trial_log(records: Iterable[TrialRecord], path: PathLike) -> None:
    with open(path, "w") as fh:
        for k, rec in enumerate(records, start=1):
            fh.write(json.dumps(record_to_dict(k, rec)) + "\n")


def load_trial_log(path: PathLike) -> list[TrialRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}: line {lineno}"
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{where}: malformed JSON ({exc.msg})") from None
            records.append(record_from_dict(d, where))
    return records


def _read_json(path: PathLike):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: malformed JSON ({exc.msg})") from None


def load(path: PathLike):
    """Load a world, a policy or a trial log, recognized by its content."""
    path = Path(path)
    if path.suffix == ".jsonl":
        return load_trial_log(path)
    d = _read_json(path)
    if isinstance(d, dict) and "trans" in d:
        return world_from_dict(d, str(path))
    if isinstance(d, dict) and "act_logits" in d:
        return policy_from_dict(d, str(path))
    raise FormatError(f"{path}: neither a world nor a policy")
