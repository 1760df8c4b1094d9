"""Seeded experiment runners that write plot-ready CSV files.

Every CSV starts with ``#`` lines recording the tool version, seeds, world
hash and all optimizer settings, and holds no timestamps, so a rerun with
the same master seed rewrites every file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .estimator import (
    Dataset,
    EstimateKind,
    estimate_from_logs,
)
from .io import load_world, save_trial_log, world_json
from .learn import (
    GREEDY_CLIMB,
    LearnerConfig,
    ReinforceConfig,
    TrialLog,
    greedy_learn,
    random_learn,
    reinforce_learn,
)
from .oracle import EnumerationTooLarge, empirical_bias_variance, exact_return, exact_returns, moments
from .policy import FscPolicy
from .search import ClimbOptions
from .world import Pomdp, build_left_right, build_load_unload, with_external_memory

EXPERIMENTS = ("bias-variance", "leftright-compare", "loadunload-compare", "custom")
BUILTIN_WORLDS: dict[str, Callable[..., Pomdp]] = {
    "left-right": build_left_right,
    "load-unload": build_load_unload,
}

# independent random streams per role within one run index
STREAMS = {"greedy": 0, "random": 1, "reinforce": 2, "bias-variance": 3, "ablation": 4}

GRID_CLIP = 1e-6  # keeps grid policies stochastic so every history has weight
SURFACE_POINTS = 51
SURFACE_TRIALS = (5, 10, 50)
OPTIMUM_POINTS = 101

BV_SAMPLER = (0.4, 0.6)
BV_TARGETS = ((0.3, 0.9), (0.4, 0.5))

REINFORCE_GRID = tuple(
    (rate, decay) for rate in (0.01, 0.05, 0.1, 0.5) for decay in ("constant", "inverse")
)


@dataclass(frozen=True)
class ExperimentSpec:
    """What to run and where to write it.

    ``seeds``, when given, holds one seed per run; otherwise run seeds are
    derived from ``master_seed`` so adding runs leaves earlier runs intact.
    Fields left at ``None`` take the experiment's own default.
    """

    experiment: str
    world: Optional[str] = None
    runs: int = 10
    seeds: Optional[tuple[int, ...]] = None
    master_seed: int = 0
    kinds: tuple[str, ...] = ("normalized", "unnormalized")
    out: str = "results"
    horizon: Optional[int] = None
    trials: Optional[int] = None
    n_mem: Optional[int] = None
    replications: int = 600
    n_max: int = 100
    climb: ClimbOptions = GREEDY_CLIMB
    reinforce_trials: int = 1000
    reinforce_memory: str = "external"
    smoothing: int = 10
    ablation: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.seeds is not None:
            object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
            if len(self.seeds) != self.runs:
                raise ValueError(f"got {len(self.seeds)} seeds for {self.runs} runs")
        kinds = tuple(EstimateKind(k).value for k in self.kinds)
        if not kinds or "naive" in kinds:
            raise ValueError("kinds must be a non-empty subset of {normalized, unnormalized}")
        object.__setattr__(self, "kinds", kinds)
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def run_rng(self, i: int, stream: str) -> np.random.Generator:
        key = STREAMS[stream]
        if self.seeds is not None:
            seq = np.random.SeedSequence(self.seeds[i], spawn_key=(key,))
        else:
            seq = np.random.SeedSequence(self.master_seed, spawn_key=(i, key))
        return np.random.default_rng(seq)

    def run_seed_label(self, i: int) -> str:
        return str(self.seeds[i]) if self.seeds is not None else f"{self.master_seed}/{i}"


@dataclass
class ExperimentResult:
    files: dict[str, Path]
    summary: dict = field(default_factory=dict)


# shared plumbing

def resolve_world(ref: str, horizon: Optional[int] = None) -> Pomdp:
    """A built-in world by name, or a world JSON file."""
    if ref in BUILTIN_WORLDS:
        return BUILTIN_WORLDS[ref](horizon=horizon or 100)
    model = load_world(ref)
    if horizon is not None and horizon != model.horizon:
        model = replace(model, horizon=horizon)
    return model


def world_sha256(model: Pomdp) -> str:
    return hashlib.sha256(world_json(model).encode()).hexdigest()


def fmt(v) -> str:
    """Shortest round-trip text for numbers; plain text otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header: dict, columns: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for k, v in header.items():
            text = v if isinstance(v, str) else json.dumps(v, sort_keys=True)
            fh.write(f"# {k}: {text}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def provenance(spec: ExperimentSpec, model: Pomdp, **extra) -> dict:
    head = {
        "tool": f"pomdp_nis {__version__}",
        "experiment": spec.experiment,
        "master_seed": spec.master_seed,
        "seeds": list(spec.seeds) if spec.seeds is not None else "derived from master_seed",
        "world": model.name,
        "world_sha256": world_sha256(model),
        "horizon": model.horizon,
        "estimators": list(spec.kinds),
        "climb": spec.climb.as_dict(),
    }
    head.update(extra)
    return head


def _map(fn, jobs, workers: int):
    if workers == 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def reactive_point(p_left_left: float, p_left_right: float, clip: float = 0.0) -> FscPolicy:
    """Left-right policy from P(left | left half) and P(left | right half)."""
    p = np.clip([p_left_left, p_left_right], clip, 1.0 - clip)
    probs = np.stack([p, 1.0 - p], axis=1)
    with np.errstate(divide="ignore"):
        return FscPolicy(np.log(probs)[:, None, :], np.zeros((2, 1, 1)))


def probability_grid(points: int, clip: float = GRID_CLIP) -> np.ndarray:
    return np.clip(np.linspace(0.0, 1.0, points), clip, 1.0 - clip)


def grid_policies(points: int) -> tuple[np.ndarray, list[FscPolicy]]:
    g = probability_grid(points)
    pp, qq = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([pp.ravel(), qq.ravel()], axis=1)
    return pts, [reactive_point(p, q) for p, q in pts]


def quantile_rows(curves: np.ndarray):
    """Per-trial (min, q1, median, q3, max) across runs (rows of ``curves``)."""
    q = np.quantile(curves, [0.0, 0.25, 0.5, 0.75, 1.0], axis=0)
    for t in range(curves.shape[1]):
        yield (t + 1, *q[:, t])


def smooth(returns: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean over the last ``window`` trials (fewer at the start)."""
    c = np.cumsum(np.concatenate([[0.0], returns]))
    k = np.arange(1, len(returns) + 1)
    lo = np.maximum(k - window, 0)
    return (c[k] - c[lo]) / (k - lo)


def first_at(curve: np.ndarray, threshold: float) -> Optional[int]:
    """1-based index of the first entry >= threshold, or None."""
    hit = np.flatnonzero(curve >= threshold)
    return int(hit[0]) + 1 if hit.size else None


def trial_rows(log: TrialLog, exact: np.ndarray):
    for s, e in zip(log.stats, exact):
        yield s.trial, s.ret, e, s.estimate, s.grad_norm, s.climb_iters


TRIAL_COLUMNS = ("trial", "return", "exact_return", "estimator_value", "grad_norm", "climb_iters")


# bias and variance of the difference estimators

def run_bias_variance(spec: ExperimentSpec) -> ExperimentResult:
    """Mean and spread of D_U and D_N against data size on left-right.

    Data come from the policy at probability point (0.4, 0.6); the
    difference is between (0.3, 0.9) and (0.4, 0.5). Both kinds see the
    same simulated data.
    """
    model = resolve_world(spec.world or "left-right", spec.horizon)
    if (model.n_obs, model.n_actions) != (2, 2):
        raise ValueError("bias-variance needs a world with 2 observations and 2 actions")
    out = Path(spec.out)
    sampler = reactive_point(*BV_SAMPLER)
    pa, pb = (reactive_point(*t) for t in BV_TARGETS)
    truth = exact_return(model, pa) - exact_return(model, pb)
    label = "({},{})-({},{})".format(*BV_TARGETS[0], *BV_TARGETS[1])
    files, summary = {}, {"true_difference": truth}
    for kind in spec.kinds:
        table = empirical_bias_variance(
            model, [sampler], pa, pb, spec.n_max, spec.replications, kind,
            spec.run_rng(0, "bias-variance"),
        )
        head = provenance(
            spec, model, estimator=kind, difference_form="ratio",
            sampler=list(BV_SAMPLER), targets=[list(t) for t in BV_TARGETS],
            replications=spec.replications, true_difference=truth,
        )
        rows = ((n, m, s, kind, label) for n, m, s in zip(table.ns, table.mean, table.std))
        files[kind] = write_csv(out / f"bias_variance_{kind}.csv", head,
                                ("n", "mean", "std", "kind", "target"), rows)
        summary[kind] = {"mean": table.mean.tolist(), "std": table.std.tolist()}
    try:
        ns = [n for n in (1, 2, 5, 10, 20, 50, 100) if n <= spec.n_max]
        reports = [asdict(moments(model, [sampler], pa, pb, n)) for n in ns]
    except EnumerationTooLarge as exc:
        summary["moments"] = f"skipped: {exc}"
    else:
        path = out / "bias_variance_moments.json"
        path.write_text(json.dumps({"world_sha256": world_sha256(model), "reports": reports},
                                   indent=2, sort_keys=True) + "\n")
        files["moments"] = path
    return ExperimentResult(files, summary)


# left-right: greedy versus random policy choice

def _greedy_job(job):
    model, kind, trials, n_mem, climb, rng = job
    return greedy_learn(model, LearnerConfig(kind=kind, trials=trials, n_mem=n_mem, climb=climb), rng)


def _random_job(job):
    model, trials, n_mem, rng = job
    return random_learn(model, trials, n_mem, rng=rng)


def _reinforce_job(job):
    model, config, rng = job
    return reinforce_learn(model, config, rng)


def reactive_counts(log: TrialLog) -> np.ndarray:
    """``C[i, x, a]``: how often trial i took action a after observation x."""
    w = log.world
    C = np.zeros((len(log.records), w.n_obs, w.n_actions))
    for i, rec in enumerate(log.records):
        np.add.at(C[i], (rec.history.obs, rec.history.act), 1.0)
    return C


def estimate_surface(log: TrialLog, k: int, kind: str, points: int = SURFACE_POINTS):
    """Estimator values on a reactive probability grid from the first k trials."""
    pts, policies = grid_policies(points)
    logp = np.stack([p.act_probs[:, 0, :] for p in policies])  # [g, x, a]
    C = reactive_counts(log)[:k]
    log_target = np.einsum("gxa,ixa->gi", np.log(logp), C)
    data = Dataset(log.records[:k])
    values = estimate_from_logs(data.returns, log_target, data.log_mixture(), kind)
    return pts, values


def grid_optimum(model: Pomdp, points: int = OPTIMUM_POINTS) -> tuple[float, np.ndarray]:
    pts, policies = grid_policies(points)
    values = exact_returns(model, policies)
    best = int(np.argmax(values))
    return float(values[best]), pts[best]


def run_leftright(spec: ExperimentSpec) -> ExperimentResult:
    """Greedy climbing of each estimator against random policy choice."""
    model = resolve_world(spec.world or "left-right", spec.horizon)
    if (model.n_obs, model.n_actions) != (2, 2):
        raise ValueError("leftright-compare needs a world with 2 observations and 2 actions")
    trials = spec.trials or 50
    out = Path(spec.out)
    opt, arg = grid_optimum(model)
    threshold = 0.9 * opt
    base = dict(grid_optimum=opt, grid_optimum_point=arg.tolist(),
                grid_points=OPTIMUM_POINTS, grid_clip=GRID_CLIP, threshold=threshold,
                trials=trials)

    logs = {}
    for kind in spec.kinds:
        jobs = [(model, kind, trials, 1, spec.climb, spec.run_rng(i, "greedy"))
                for i in range(spec.runs)]
        logs[("greedy", kind)] = _map(_greedy_job, jobs, spec.workers)
    jobs = [(model, trials, 1, spec.run_rng(i, "random")) for i in range(spec.runs)]
    random_logs = _map(_random_job, jobs, spec.workers)
    for kind in spec.kinds:
        logs[("random", kind)] = random_logs

    files, summary_rows, reached = {}, [], {}
    pts, grid = grid_policies(SURFACE_POINTS)
    surf_exact = exact_returns(model, grid)
    files["exact_surface"] = write_csv(
        out / "leftright_exact_surface.csv", provenance(spec, model, **base),
        ("p_left_left", "p_left_right", "exact_return"),
        ((p, q, v) for (p, q), v in zip(pts, surf_exact)))
    for (mode, kind), run_logs in logs.items():
        count = 0
        for i, log in enumerate(run_logs):
            head = provenance(spec, model, estimator=kind, mode=mode, run=i,
                              run_seed=spec.run_seed_label(i), **base)
            exact = exact_returns(model, log.policies)
            stem = f"leftright_{mode}_{kind}_run{i:02d}"
            files[stem + "_returns"] = write_csv(
                out / "runs" / f"{stem}_returns.csv", head, TRIAL_COLUMNS,
                trial_rows(log, exact))
            probs = [p.act_probs[:, 0, 0] for p in log.policies]
            files[stem + "_path"] = write_csv(
                out / "runs" / f"{stem}_path.csv", head,
                ("trial", "p_left_left", "p_left_right"),
                ((t + 1, pr[0], pr[1]) for t, pr in enumerate(probs)))
            for k in SURFACE_TRIALS:
                if k > trials:
                    continue
                spts, vals = estimate_surface(log, k, kind)
                files[f"{stem}_surface{k}"] = write_csv(
                    out / "runs" / f"{stem}_surface_t{k:02d}.csv",
                    dict(head, surface_trials=k, surface_points=SURFACE_POINTS),
                    ("p_left_left", "p_left_right", "estimate"),
                    ((p, q, v) for (p, q), v in zip(spts, vals)))
            first = first_at(exact[:10], threshold)
            count += first is not None
            summary_rows.append((mode, kind, i, spec.run_seed_label(i), first,
                                 exact[min(9, trials - 1)], exact[-1]))
        reached[f"{mode}-{kind}"] = count
    files["summary"] = write_csv(
        out / "leftright_summary.csv", provenance(spec, model, **base),
        ("mode", "kind", "run", "seed", "first_trial_at_threshold",
         "exact_return_trial10", "exact_return_final"), summary_rows)
    return ExperimentResult(files, {"grid_optimum": opt, "threshold": threshold,
                                    "runs_reaching_by_trial10": reached})


# load-unload: greedy versus REINFORCE

def optimal_load_unload(model: Pomdp, sharpness: float = 50.0) -> FscPolicy:
    """Two-state controller for load-unload: memory 0 heads right, memory 1 left.

    At either end the action follows the observation, and memory switches
    to the direction just taken.
    """
    X = model.n_obs
    act = np.zeros((X, 2, 2))
    act[:, 0, 1] = act[:, 1, 0] = 1.0
    act[0, :, :] = [0.0, 1.0]
    act[X - 1, :, :] = [1.0, 0.0]
    mem = np.zeros((X, 2, 2))
    mem[:, 0, 0] = mem[:, 1, 1] = 1.0
    mem[0, :, :] = [1.0, 0.0]
    mem[X - 1, :, :] = [0.0, 1.0]
    return FscPolicy(sharpness * (2 * act - 1), sharpness * (2 * mem - 1))


def _curves(logs: Sequence[TrialLog]) -> tuple[np.ndarray, np.ndarray]:
    returns = np.array([log.returns for log in logs])
    exact = np.array([exact_returns(log.world, log.policies) for log in logs])
    return returns, exact


def run_loadunload(spec: ExperimentSpec) -> ExperimentResult:
    """Greedy normalized climbing with explicit memory against tuned REINFORCE.

    Threshold crossing is judged on the median, across runs, of the exact
    return of each trial's executed policy. The REINFORCE setting reported
    is the one from a small grid that crosses first.
    """
    model = resolve_world(spec.world or "load-unload", spec.horizon)
    trials = spec.trials or 100
    n_mem = spec.n_mem or 2
    kind = "normalized" if "normalized" in spec.kinds else spec.kinds[0]
    out = Path(spec.out)
    optimum = exact_return(model, optimal_load_unload(model)) if model.name == "load-unload" else None
    if optimum is None:
        raise ValueError("loadunload-compare needs the built-in load-unload world")
    threshold = 0.8 * optimum
    base = dict(optimum=optimum, threshold=threshold, n_mem=n_mem, init_mem=0,
                reinforce_grid=[list(g) for g in REINFORCE_GRID],
                reinforce_memory=spec.reinforce_memory,
                reinforce_trials=spec.reinforce_trials)
    files, summary = {}, {"optimum": optimum, "threshold": threshold}

    def emit(tag, logs, extra, smooth_window=None):
        returns, exact = _curves(logs)
        head = provenance(spec, model, **base, **extra)
        shown = returns
        if smooth_window:
            shown = np.array([smooth(r, smooth_window) for r in returns])
            head["smoothing"] = f"trailing mean over {smooth_window} trials"
        cols = ("trial", "min", "q1", "median", "q3", "max")
        files[f"{tag}_quantiles"] = write_csv(
            out / f"loadunload_{tag}_quantiles.csv", head, cols, quantile_rows(shown))
        files[f"{tag}_exact_quantiles"] = write_csv(
            out / f"loadunload_{tag}_exact_quantiles.csv", head, cols, quantile_rows(exact))
        for i, log in enumerate(logs):
            stem = f"loadunload_{tag}_run{i:02d}"
            rh = dict(head, run=i, run_seed=spec.run_seed_label(i))
            files[stem] = write_csv(out / "runs" / f"{stem}.csv", rh, TRIAL_COLUMNS,
                                    trial_rows(log, exact[i]))
            path = out / "runs" / f"{stem}.jsonl"
            save_trial_log(log.records, path)
            files[stem + "_log"] = path
        med = np.median(exact, axis=0)
        return first_at(med, threshold), med

    greedy_extra = dict(estimator=kind, trials=trials)
    jobs = [(model, kind, trials, n_mem, spec.climb, spec.run_rng(i, "greedy"))
            for i in range(spec.runs)]
    greedy_logs = _map(_greedy_job, jobs, spec.workers)
    g_first, g_med = emit("greedy", greedy_logs, greedy_extra)
    summary["greedy_first_trial"] = g_first
    summary["greedy_median_final"] = float(g_med[-1])

    # REINFORCE grid, every setting on the same run seeds
    grid_rows, best = [], None
    for rate, decay in REINFORCE_GRID:
        config = ReinforceConfig(base_rate=rate, decay=decay, memory=spec.reinforce_memory,
                                 n_mem=n_mem, trials=spec.reinforce_trials)
        jobs = [(model, config, spec.run_rng(i, "reinforce")) for i in range(spec.runs)]
        logs = _map(_reinforce_job, jobs, spec.workers)
        med = np.median(_curves(logs)[1], axis=0)
        first = first_at(med, threshold)
        grid_rows.append((rate, decay, spec.reinforce_memory, first, float(med.max()), float(med[-1])))
        key = (first if first is not None else math.inf, -float(med.max()))
        if best is None or key < best[0]:
            best = (key, config, logs)
    files["reinforce_grid"] = write_csv(
        out / "loadunload_reinforce_grid.csv",
        provenance(spec, model, **base),
        ("base_rate", "decay", "memory", "first_trial_at_threshold", "best_median", "final_median"),
        grid_rows)
    _, config, logs = best
    r_first, r_med = emit("reinforce", logs, dict(reinforce=asdict_config(config)),
                          smooth_window=spec.smoothing)
    summary["reinforce_config"] = asdict_config(config)
    summary["reinforce_first_trial"] = r_first
    summary["reinforce_median_final"] = float(r_med[-1])
    summary["reinforce_budget"] = spec.reinforce_trials

    rows = [("greedy", g_first, trials), ("reinforce", r_first, spec.reinforce_trials)]
    if spec.ablation:
        ext = with_external_memory(model, n_mem)
        ab_trials = 2 * trials
        jobs = [(ext, kind, ab_trials, 1, spec.climb, spec.run_rng(i, "ablation"))
                for i in range(spec.runs)]
        ab_logs = _map(_greedy_job, jobs, spec.workers)
        a_first, _ = emit("greedy_external", ab_logs, dict(greedy_extra, trials=ab_trials,
                                                           memory="external"))
        summary["greedy_external_first_trial"] = a_first
        rows.append(("greedy-external", a_first, ab_trials))
    files["summary"] = write_csv(
        out / "loadunload_summary.csv", provenance(spec, model, **base),
        ("method", "first_trial_median_at_threshold", "trial_budget"), rows)
    return ExperimentResult(files, summary)


def asdict_config(config: ReinforceConfig) -> dict:
    d = asdict(config)
    del d["initial_policy"], d["seed"]  # runs get their generator directly
    return d


# user-supplied world

def run_custom(spec: ExperimentSpec) -> ExperimentResult:
    """Greedy climbing of each requested estimator on any world."""
    if spec.world is None:
        raise ValueError("custom experiments need a world")
    model = resolve_world(spec.world, spec.horizon)
    trials = spec.trials or 50
    n_mem = spec.n_mem or 1
    out = Path(spec.out)
    files, summary = {}, {}
    for kind in spec.kinds:
        jobs = [(model, kind, trials, n_mem, spec.climb, spec.run_rng(i, "greedy"))
                for i in range(spec.runs)]
        logs = _map(_greedy_job, jobs, spec.workers)
        returns, exact = _curves(logs)
        head = provenance(spec, model, estimator=kind, trials=trials, n_mem=n_mem)
        cols = ("trial", "min", "q1", "median", "q3", "max")
        files[f"{kind}_quantiles"] = write_csv(
            out / f"custom_{kind}_quantiles.csv", head, cols, quantile_rows(returns))
        files[f"{kind}_exact_quantiles"] = write_csv(
            out / f"custom_{kind}_exact_quantiles.csv", head, cols, quantile_rows(exact))
        for i, log in enumerate(logs):
            stem = f"custom_{kind}_run{i:02d}"
            files[stem] = write_csv(out / "runs" / f"{stem}.csv",
                                    dict(head, run=i, run_seed=spec.run_seed_label(i)),
                                    TRIAL_COLUMNS, trial_rows(log, exact[i]))
        summary[kind] = {"median_final_exact": float(np.median(exact[:, -1]))}
    return ExperimentResult(files, summary)


RUNNERS = {
    "bias-variance": run_bias_variance,
    "leftright-compare": run_leftright,
    "loadunload-compare": run_loadunload,
    "custom": run_custom,
}


def run(spec: ExperimentSpec) -> ExperimentResult:
    return RUNNERS[spec.experiment](spec)
