import json

import numpy as np
import pytest

from pomdp_nis.cli import build_parser, main
from pomdp_nis.io import load_policy, load_trial_log, save_policy, save_world
from pomdp_nis.policy import FscPolicy
from pomdp_nis.world import build_left_right


def test_help_lists_every_subcommand(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for cmd in ("simulate", "oracle", "learn", "reinforce", "experiment", "validate"):
        assert cmd in out


def test_simulate_writes_a_trial_log(tmp_path, capsys):
    path = tmp_path / "eps.jsonl"
    assert main(["simulate", "--trials", "3", "--seed", "2", "--out", str(path)]) == 0
    assert len(load_trial_log(path)) == 3
    assert capsys.readouterr().out.count("episode") == 3


def test_oracle_exact_returns_and_moments(tmp_path, capsys):
    save_policy(FscPolicy.uniform(2, 2), tmp_path / "u.json")
    save_policy(FscPolicy.random(2, 2, 1, np.random.default_rng(0)), tmp_path / "r.json")
    assert main(["oracle", "--policy", str(tmp_path / "u.json")]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["world"] == "left-right" and len(data["exact_returns"]) == 1
    args = ["oracle", "--horizon", "4", "--policy", str(tmp_path / "u.json"),
            "--policy", str(tmp_path / "r.json"), "--sampler", str(tmp_path / "u.json"), "--n", "3"]
    assert main(args) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["n"] == 3 and rep["b_AB"] == pytest.approx(rep["R_A"] - rep["R_B"], abs=1e-12)


def test_learn_writes_outputs(tmp_path, capsys):
    out = tmp_path / "learn"
    args = ["learn", "--trials", "4", "--estimator", "unnormalized", "--out", str(out),
            "--max-iterations", "3", "--logit-bound", "0"]
    assert main(args) == 0
    assert len(load_trial_log(out / "trials.jsonl")) == 4
    assert load_policy(out / "final_policy.json").n_obs == 2
    text = (out / "trials.csv").read_text()
    assert "# method: greedy" in text and '"logit_bound": null' in text
    assert "final estimate" in capsys.readouterr().out


def test_reinforce_external_memory(tmp_path):
    out = tmp_path / "rf"
    args = ["reinforce", "--world", "load-unload", "--horizon", "20", "--trials", "5",
            "--memory-mode", "external", "--memory-states", "2", "--out", str(out)]
    assert main(args) == 0
    assert load_policy(out / "final_policy.json").n_obs == 10


def test_experiment_subcommand(tmp_path, capsys):
    out = tmp_path / "bv"
    args = ["experiment", "bias-variance", "--replications", "5", "--n-max", "4", "--out", str(out)]
    assert main(args) == 0
    assert (out / "bias_variance_normalized.csv").exists()
    assert "files under" in capsys.readouterr().out
    args = ["experiment", "leftright-compare", "--runs", "2", "--seeds", "1", "2", "--trials", "3",
            "--estimator", "normalized", "--out", str(tmp_path / "lr")]
    assert main(args) == 0
    assert not list((tmp_path / "lr" / "runs").glob("*unnormalized*"))


def test_validate_reports_and_errors(tmp_path, capsys):
    save_world(build_left_right(), tmp_path / "w.json")
    assert main(["validate", str(tmp_path / "w.json")]) == 0
    assert "8 states" in capsys.readouterr().out
    bad = json.loads((tmp_path / "w.json").read_text())
    bad["start"][3] = 0.5
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    assert main(["validate", str(tmp_path / "bad.json")]) == 1
    assert "start sums to 0.5" in capsys.readouterr().err
    assert main(["validate", str(tmp_path / "missing.json")]) == 1


def test_seed_mismatch_is_an_error(capsys):
    assert main(["experiment", "leftright-compare", "--runs", "3", "--seeds", "1"]) == 1
    assert "seeds" in capsys.readouterr().err


def test_parser_defaults():
    args = build_parser().parse_args(["learn"])
    assert args.world is None and args.seed == 0 and args.logit_bound == 3.0
