import json

import numpy as np
import pytest
from conftest import random_dataset, random_policy, random_world

from pomdp_nis.estimator import Dataset, estimate
from pomdp_nis.experiments import reactive_point
from pomdp_nis.io import (
    FormatError,
    load,
    load_policy,
    load_trial_log,
    load_world,
    save_policy,
    save_trial_log,
    save_world,
)
from pomdp_nis.learn import greedy_learn, LearnerConfig
from pomdp_nis.world import InvalidModelError, build_load_unload


def test_world_round_trip_is_exact(tmp_path, rng):
    for w in (build_load_unload(), random_world(rng, horizon=7)):
        save_world(w, tmp_path / "w.json")
        back = load_world(tmp_path / "w.json")
        for key in ("start", "trans", "obs", "reward"):
            assert np.array_equal(getattr(back, key), getattr(w, key))
        assert (back.n_states, back.n_obs, back.n_actions, back.horizon, back.name) == \
            (w.n_states, w.n_obs, w.n_actions, w.horizon, w.name)


def test_policy_round_trip_is_exact(tmp_path, rng):
    for p in (random_policy(rng, build_load_unload(), n_mem=3, scale=4.0),
              reactive_point(1.0, 0.25)):  # includes -inf logits
        save_policy(p, tmp_path / "p.json")
        back = load_policy(tmp_path / "p.json")
        assert np.array_equal(back.act_logits, p.act_logits)
        assert np.array_equal(back.mem_logits, p.mem_logits)
        assert np.array_equal(back.init_mem, p.init_mem)


def test_trial_log_round_trip_and_reestimate(tmp_path):
    lu = build_load_unload(horizon=40)
    log = greedy_learn(lu, LearnerConfig(trials=6, n_mem=2, seed=5))
    path = tmp_path / "trials.jsonl"
    save_trial_log(log.records, path)
    back = load_trial_log(path)
    assert len(back) == 6
    for a, b in zip(log.records, back):
        assert a.history.same_as(b.history) and a.ret == b.ret
        assert np.array_equal(a.policy.flat(), b.policy.flat())
    for kind in ("normalized", "unnormalized"):
        assert estimate(Dataset(back), log.final_policy, kind) == pytest.approx(
            estimate(Dataset(log.records), log.final_policy, kind), abs=1e-12)
    first = json.loads(path.read_text().splitlines()[0])
    assert set(first) == {"trial", "policy", "history", "return"} and first["trial"] == 1


def test_malformed_line_is_reported_with_its_number(tmp_path, rng):
    w = random_world(rng)
    path = tmp_path / "log.jsonl"
    save_trial_log(random_dataset(rng, w, 3).records, path)
    lines = path.read_text().splitlines()
    lines[1] = lines[1][:-5]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="line 2: malformed JSON"):
        load_trial_log(path)


def test_inconsistent_return_is_rejected(tmp_path, rng):
    w = random_world(rng)
    path = tmp_path / "log.jsonl"
    save_trial_log(random_dataset(rng, w, 1).records, path)
    d = json.loads(path.read_text())
    d["return"] += 1.0
    path.write_text(json.dumps(d) + "\n")
    with pytest.raises(FormatError, match="line 1"):
        load_trial_log(path)


def test_missing_fields_and_bad_worlds(tmp_path):
    (tmp_path / "p.json").write_text(json.dumps({"act_logits": [[[0.0, 0.0]]]}))
    with pytest.raises(FormatError, match="missing field 'mem_logits'"):
        load(tmp_path / "p.json")
    d = {"n_states": 1, "n_obs": 1, "n_actions": 1, "horizon": 1,
         "start": [0.5], "trans": [[[1.0]]], "obs": [[1.0]], "reward": [[[0.0]]]}
    (tmp_path / "w.json").write_text(json.dumps(d))
    with pytest.raises(InvalidModelError, match="start sums to 0.5"):
        load(tmp_path / "w.json")
    (tmp_path / "x.json").write_text("[1, 2]")
    with pytest.raises(FormatError, match="neither a world nor a policy"):
        load(tmp_path / "x.json")


def test_load_dispatches_on_content(tmp_path, rng):
    w = random_world(rng)
    save_world(w, tmp_path / "a.json")
    save_policy(random_policy(rng, w), tmp_path / "b.json")
    save_trial_log(random_dataset(rng, w, 2).records, tmp_path / "c.jsonl")
    assert type(load(tmp_path / "a.json")).__name__ == "Pomdp"
    assert type(load(tmp_path / "b.json")).__name__ == "FscPolicy"
    assert len(load(tmp_path / "c.jsonl")) == 2
