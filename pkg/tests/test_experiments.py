import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from pomdp_nis.experiments import (
    ExperimentSpec,
    fmt,
    first_at,
    run,
    smooth,
    write_csv,
)
from pomdp_nis.io import save_world
from pomdp_nis.world import build_left_right


def read_csv(path):
    """(header dict, column names, rows as lists of strings)."""
    lines = Path(path).read_text().splitlines()
    head = {}
    while lines[0].startswith("#"):
        key, _, value = lines.pop(0)[2:].partition(": ")
        head[key] = value
    rows = list(csv.reader(io.StringIO("\n".join(lines))))
    return head, rows[0], rows[1:]


def snapshot(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


SMALL = {
    "bias-variance": dict(replications=40, n_max=10),
    "leftright-compare": dict(runs=3, trials=50),
    "loadunload-compare": dict(runs=2, trials=8, horizon=30, reinforce_trials=16),
}


@pytest.fixture(scope="module")
def outputs(tmp_path_factory):
    done = {}
    for exp, kw in SMALL.items():
        a, b = tmp_path_factory.mktemp(exp), tmp_path_factory.mktemp(exp)
        res = run(ExperimentSpec(exp, out=str(a), master_seed=3, **kw))
        run(ExperimentSpec(exp, out=str(b), master_seed=3, **kw))
        done[exp] = (res, a, b)
    return done


@pytest.mark.parametrize("exp", list(SMALL))
def test_reruns_are_byte_identical(outputs, exp):
    _, a, b = outputs[exp]
    sa, sb = snapshot(a), snapshot(b)
    assert sa.keys() == sb.keys() and len(sa) > 0
    for k in sa:
        assert sa[k] == sb[k], k


def test_headers_record_provenance(outputs):
    for exp, (res, root, _) in outputs.items():
        for path in res.files.values():
            if path.suffix != ".csv":
                continue
            head, _, _ = read_csv(path)
            for key in ("tool", "experiment", "master_seed", "world_sha256", "horizon", "climb"):
                assert key in head, (path, key)
            assert head["experiment"] == exp
            assert "climb" in head and json.loads(head["climb"])["max_iterations"] >= 1


def test_bias_variance_columns(outputs):
    res, root, _ = outputs["bias-variance"]
    for kind in ("normalized", "unnormalized"):
        head, cols, rows = read_csv(root / f"bias_variance_{kind}.csv")
        assert cols == ["n", "mean", "std", "kind", "target"]
        assert [int(r[0]) for r in rows] == list(range(1, 11))
        assert all(r[3] == kind for r in rows)
        assert head["difference_form"] == "ratio"
    # the full-length world is too large to enumerate
    assert res.summary["moments"].startswith("skipped")
    assert not (root / "bias_variance_moments.json").exists()


def test_bias_variance_moments_on_a_short_world(tmp_path):
    res = run(ExperimentSpec("bias-variance", horizon=4, replications=20, n_max=5, out=str(tmp_path)))
    reports = json.loads((tmp_path / "bias_variance_moments.json").read_text())["reports"]
    assert [r["n"] for r in reports] == [1, 2, 5]
    assert reports[0]["mean_du"] == pytest.approx(res.summary["true_difference"], abs=1e-12)


def test_leftright_files_and_summary(outputs):
    res, root, _ = outputs["leftright-compare"]
    head, cols, rows = read_csv(root / "leftright_summary.csv")
    assert cols[:4] == ["mode", "kind", "run", "seed"]
    assert len(rows) == 4 * 3  # greedy and random for each kind
    assert float(head["threshold"]) == pytest.approx(0.9 * float(head["grid_optimum"]))
    _, cols, rows = read_csv(root / "runs" / "leftright_greedy_normalized_run00_returns.csv")
    assert cols == ["trial", "return", "exact_return", "estimator_value", "grad_norm", "climb_iters"]
    assert len(rows) == 50
    _, cols, rows = read_csv(root / "runs" / "leftright_greedy_normalized_run00_surface_t05.csv")
    assert cols == ["p_left_left", "p_left_right", "estimate"] and len(rows) == 51 * 51
    assert set(res.summary["runs_reaching_by_trial10"]) == {
        "greedy-normalized", "greedy-unnormalized", "random-normalized", "random-unnormalized"}


def test_random_path_is_uniform(outputs):
    _, root, _ = outputs["leftright-compare"]
    values = []
    for i in range(3):
        _, _, rows = read_csv(root / "runs" / f"leftright_random_normalized_run{i:02d}_path.csv")
        values += [float(r[1]) for r in rows] + [float(r[2]) for r in rows]
    counts = np.histogram(values, bins=6, range=(0, 1))[0]
    assert stats.chisquare(counts).pvalue > 1e-3


def test_estimate_surface_tracks_exact_surface(outputs):
    _, root, _ = outputs["leftright-compare"]
    _, _, exact = read_csv(root / "leftright_exact_surface.csv")
    ex = np.array([float(r[2]) for r in exact])

    def r_of(mode, i):
        _, _, rows = read_csv(root / "runs" / f"leftright_{mode}_normalized_run{i:02d}_surface_t50.csv")
        return stats.pearsonr([float(r[2]) for r in rows], ex)[0]

    assert all(r_of("random", i) > 0.5 for i in range(3))
    assert np.median([r_of("greedy", i) for i in range(3)]) > 0.5


def test_loadunload_files(outputs):
    res, root, _ = outputs["loadunload-compare"]
    for tag in ("greedy", "reinforce"):
        _, cols, rows = read_csv(root / f"loadunload_{tag}_quantiles.csv")
        assert cols == ["trial", "min", "q1", "median", "q3", "max"]
        for r in rows:
            q = [float(v) for v in r[1:]]
            assert q == sorted(q)
    head, _, _ = read_csv(root / "loadunload_reinforce_quantiles.csv")
    assert "trailing mean" in head["smoothing"]
    _, _, grid = read_csv(root / "loadunload_reinforce_grid.csv")
    assert len(grid) == 8
    assert res.summary["optimum"] == pytest.approx(13 * 30 / 100, abs=1.0)
    assert (root / "runs" / "loadunload_greedy_run00.jsonl").exists()


def test_parallel_workers_match_serial(tmp_path):
    kw = dict(runs=2, trials=6)
    run(ExperimentSpec("leftright-compare", out=str(tmp_path / "a"), **kw))
    run(ExperimentSpec("leftright-compare", out=str(tmp_path / "b"), workers=2, **kw))
    assert snapshot(tmp_path / "a") == snapshot(tmp_path / "b")


def test_explicit_seeds(tmp_path):
    with pytest.raises(ValueError, match="got 2 seeds for 3 runs"):
        ExperimentSpec("leftright-compare", runs=3, seeds=(1, 2))
    spec = ExperimentSpec("leftright-compare", runs=2, seeds=(5, 6), trials=4, out=str(tmp_path))
    run(spec)
    head, _, _ = read_csv(tmp_path / "leftright_summary.csv")
    assert json.loads(head["seeds"]) == [5, 6]
    # a run's stream depends only on its own seed
    a = spec.run_rng(1, "greedy").random()
    b = ExperimentSpec("leftright-compare", runs=1, seeds=(6,)).run_rng(0, "greedy").random()
    assert a == b


def test_master_seed_streams_are_stable_when_runs_are_added():
    a = ExperimentSpec("bias-variance", runs=2).run_rng(1, "random").random()
    b = ExperimentSpec("bias-variance", runs=5).run_rng(1, "random").random()
    c = ExperimentSpec("bias-variance", runs=5).run_rng(1, "greedy").random()
    assert a == b != c


def test_spec_validation():
    with pytest.raises(ValueError, match="unknown experiment"):
        ExperimentSpec("fig9")
    with pytest.raises(ValueError):
        ExperimentSpec("custom", kinds=("naive",))
    with pytest.raises(ValueError):
        ExperimentSpec("custom", runs=0)
    with pytest.raises(ValueError, match="need a world"):
        run(ExperimentSpec("custom"))


def test_custom_world_from_file(tmp_path):
    save_world(build_left_right(horizon=10), tmp_path / "w.json")
    res = run(ExperimentSpec("custom", world=str(tmp_path / "w.json"), runs=2, trials=3,
                             out=str(tmp_path / "out")))
    _, cols, rows = read_csv(res.files["normalized_quantiles"])
    assert len(rows) == 3 and cols[0] == "trial"


def test_helpers(tmp_path):
    assert fmt(0.1) == "0.1" and fmt(np.float64(1 / 3)) == repr(1 / 3)
    assert fmt(True) == "1" and fmt(None) == "" and fmt(np.int64(4)) == "4"
    np.testing.assert_allclose(smooth(np.array([1.0, 2.0, 3.0, 4.0]), 2), [1.0, 1.5, 2.5, 3.5])
    assert first_at(np.array([0.0, 2.0, 3.0]), 2.0) == 2 and first_at(np.zeros(3), 1.0) is None
    p = write_csv(tmp_path / "x.csv", {"a": "b", "c": [1, 2]}, ("u", "v"), [(1, 0.5)])
    assert p.read_text() == "# a: b\n# c: [1, 2]\nu,v\n1,0.5\n"
