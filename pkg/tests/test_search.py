import math

import numpy as np
import pytest

from pomdp_nis.estimator import Dataset, estimate, estimate_grad
from pomdp_nis.experiments import estimate_surface
from pomdp_nis.learn import random_learn
from pomdp_nis.policy import FscPolicy
from pomdp_nis.search import ClimbOptions, climb, golden_ratio_evaluations, golden_section
from pomdp_nis.world import build_left_right


def counted(f):
    calls = []

    def g(x):
        calls.append(x)
        return f(x)
    return g, calls


def test_golden_section_examples():
    x, _ = golden_section(lambda x: (x - 0.3) ** 2, (0.0, 1.0), 1e-8)
    assert x == pytest.approx(0.3, abs=1e-7)
    x, _ = golden_section(lambda x: x, (0.0, 1.0), 1e-8)
    assert x == pytest.approx(0.0, abs=1e-7)
    x, _ = golden_section(lambda x: x**4 - x, (0.0, 2.0), 1e-8)
    assert x == pytest.approx(0.25 ** (1 / 3), abs=1e-6)


def test_golden_section_rejects_bad_input():
    with pytest.raises(ValueError):
        golden_section(abs, (1.0, 0.0), 1e-3)
    with pytest.raises(ValueError):
        golden_section(abs, (0.0, 1.0), 0.0)


def test_golden_section_evaluation_budget():
    rng = np.random.default_rng(0)
    tol = 1e-6
    for _ in range(100):
        c, k, e = rng.uniform(-1, 2), rng.uniform(0.1, 10), rng.uniform(1, 3)
        f, calls = counted(lambda x, c=c, k=k, e=e: k * abs(x - c) ** e)
        x, _ = golden_section(f, (-1.0, 2.0), tol)
        assert len(calls) <= golden_ratio_evaluations(-1.0, 2.0, tol)
        assert abs(x - c) < 2 * tol


def quadratic(center):
    def objective(theta):
        d = theta - center
        return -float(d @ d), -2.0 * d
    return objective


def test_climb_finds_quadratic_maximum():
    start = FscPolicy.uniform(2, 3, 2)
    center = np.random.default_rng(1).uniform(-2, 2, start.flat().size)
    res = climb(quadratic(center), start)
    assert res.iterations <= 50
    np.testing.assert_allclose(res.policy.flat(), center, atol=1e-4)
    assert res.grad_norm < 1e-3


def test_climb_history_is_increasing():
    start = FscPolicy.uniform(2, 2, 2)
    center = np.random.default_rng(2).normal(size=start.flat().size)
    res = climb(quadratic(center), start, ClimbOptions(max_iterations=5))
    assert res.iterations <= 5
    assert all(b > a for a, b in zip(res.history, res.history[1:]))


def test_stationary_start_is_returned():
    start = FscPolicy.uniform(2, 2)
    res = climb(quadratic(start.flat()), start)
    assert res.iterations == 0
    np.testing.assert_array_equal(res.policy.flat(), start.flat())


def test_logit_bound_is_respected():
    start = FscPolicy.uniform(2, 2)
    center = np.full(start.flat().size, 10.0)
    res = climb(quadratic(center), start, ClimbOptions(logit_bound=3.0))
    np.testing.assert_allclose(res.policy.flat(), 3.0, atol=1e-3)
    assert np.max(np.abs(res.policy.flat())) <= 3.0


def test_options_validation():
    with pytest.raises(ValueError):
        ClimbOptions(max_iterations=0)
    with pytest.raises(ValueError):
        ClimbOptions(growth=1.0)
    with pytest.raises(ValueError):
        ClimbOptions(logit_bound=-1.0)


def test_climb_on_a_left_right_dataset():
    lr = build_left_right()
    log = random_learn(lr, 10, seed=4)
    data = Dataset(log.records)
    start = FscPolicy.uniform(2, 2)

    def objective(theta):
        v, g = estimate_grad(data, start.with_flat(theta), "normalized")
        return v, g.flat()

    res = climb(objective, start)
    assert res.value >= estimate(data, start) - 1e-12
    assert res.value == pytest.approx(estimate(data, res.policy), abs=1e-9)
    _, grid = estimate_surface(log, 10, "normalized", points=101)
    assert res.value >= float(np.max(grid)) - 0.5
    assert math.isfinite(res.grad_norm)
