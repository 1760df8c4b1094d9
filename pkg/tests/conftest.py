import numpy as np
import pytest

from pomdp_nis.estimator import Dataset, TrialRecord
from pomdp_nis.policy import FscPolicy
from pomdp_nis.world import Pomdp, sample_episodes

# (criterion, passed, detail) lines collected by test_acceptance.py
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def random_world(rng, n_states=3, n_obs=2, n_actions=2, horizon=4, deterministic_obs=False):
    start = rng.dirichlet(np.ones(n_states))
    trans = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if deterministic_obs:
        obs = np.zeros((n_states, n_obs))
        obs[np.arange(n_states), np.arange(n_states) % n_obs] = 1.0
    else:
        obs = rng.dirichlet(np.ones(n_obs), size=n_states)
    reward = rng.normal(size=(n_states, n_actions, n_states))
    return Pomdp(n_states, n_obs, n_actions, horizon, start, trans, obs, reward, name="random")


def random_policy(rng, model, n_mem=1, scale=1.0):
    return FscPolicy.random(model.n_obs, model.n_actions, n_mem, rng, scale)


def random_dataset(rng, model, n, n_mem=1, scale=1.0):
    records = []
    for _ in range(n):
        p = random_policy(rng, model, n_mem, scale)
        records.append(TrialRecord(p, sample_episodes(model, p, rng, 1)[0]))
    return Dataset(records)


def toy_world():
    """Two states observed directly, stochastic moves, T = 2: 32 latent atoms."""
    trans = np.array([
        [[0.8, 0.2], [0.3, 0.7]],
        [[0.6, 0.4], [0.1, 0.9]],
    ])
    reward = np.array([
        [[1.0, 0.0], [0.5, 2.0]],
        [[-1.0, 0.3], [0.0, 1.5]],
    ])
    return Pomdp(2, 2, 2, 2, np.array([0.7, 0.3]), trans, np.eye(2), reward, name="toy")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy():
    return toy_world()
