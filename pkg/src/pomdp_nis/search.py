"""Golden-section line search and conjugate-gradient hill climbing."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .policy import FscPolicy

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0  # 0.618...


@dataclass(frozen=True)
class ClimbOptions:
    max_iterations: int = 100
    gradient_tolerance: float = 1e-6
    initial_step: float = 0.1
    growth: float = 2.0
    max_step: float = 50.0
    golden_tolerance: float = 1e-4
    restart_period: Optional[int] = None  # None: number of parameters
    logit_bound: Optional[float] = None  # box |theta_k| <= bound; None: unbounded

    def __post_init__(self):
        for key in ("max_iterations", "gradient_tolerance", "initial_step",
                    "max_step", "golden_tolerance"):
            if not getattr(self, key) > 0:
                raise ValueError(f"{key} must be positive")
        if self.growth <= 1.0:
            raise ValueError("growth must exceed 1")
        if self.restart_period is not None and self.restart_period < 1:
            raise ValueError("restart_period must be >= 1")
        if self.logit_bound is not None and not self.logit_bound > 0:
            raise ValueError("logit_bound must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


def golden_ratio_evaluations(lo: float, hi: float, tol: float) -> int:
    """Upper bound on evaluations used by ``golden_section``."""
    return math.ceil(math.log((hi - lo) / tol) / math.log(1.0 / INV_PHI)) + 2


def golden_section(f: Callable[[float], float], bracket: tuple[float, float], tol: float):
    """Minimize ``f`` on ``[lo, hi]`` by golden-ratio interval reduction.

    Returns ``(x, f(x))`` for the best interior point once the bracket is
    narrower than ``tol``.
    """
    lo, hi = map(float, bracket)
    if not lo < hi:
        raise ValueError(f"invalid bracket ({lo}, {hi})")
    if not tol > 0:
        raise ValueError("tol must be positive")
    c = hi - INV_PHI * (hi - lo)
    d = lo + INV_PHI * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - INV_PHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + INV_PHI * (hi - lo)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


@dataclass
class ClimbResult:
    policy: FscPolicy
    value: float
    grad_norm: float
    iterations: int
    history: list  # objective value at each accepted iterate


def _free(g, theta, opts: ClimbOptions):
    """Zero gradient components that push against an active bound."""
    if opts.logit_bound is None:
        return g
    b = opts.logit_bound
    blocked = ((theta >= b) & (g > 0)) | ((theta <= -b) & (g < 0))
    return np.where(blocked, 0.0, g)


Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


def _project(theta, opts: ClimbOptions):
    if opts.logit_bound is None:
        return theta
    return np.clip(theta, -opts.logit_bound, opts.logit_bound)


def _line_search(value, theta, f0, direction, opts: ClimbOptions):
    """Maximize value(P(theta + t * direction)) over t in [0, max_step].

    The bracket keeps growing across ties so that numerically flat
    stretches (weights far below machine precision) are crossed.
    """

    def at(t):
        return value(_project(theta + t * direction, opts))

    a, b = 0.0, opts.initial_step
    fb = at(b)
    if fb < f0:
        hi = b
        lo = 0.0
    else:
        c = min(b * opts.growth, opts.max_step)
        fc = at(c) if c > b else -math.inf
        while fc >= fb and c < opts.max_step:
            a, b, fb = b, c, fc
            c = min(c * opts.growth, opts.max_step)
            fc = at(c)
        if fc > fb:
            return c, fc
        lo, hi = a, c
    t, neg = golden_section(lambda s: -at(s), (lo, hi), opts.golden_tolerance)
    if fb > -neg and hi > b > lo:
        return b, fb
    return t, -neg


def climb(
    objective: Objective,
    start: FscPolicy,
    opts: ClimbOptions = ClimbOptions(),
    value: Optional[Callable[[np.ndarray], float]] = None,
) -> ClimbResult:
    """Maximize ``objective`` over the flattened logits of ``start``.

    Polak-Ribiere conjugate directions, each scaled to unit max-norm so
    only the gradient's direction matters; the step length comes from a
    doubling bracket followed by golden-section search. ``value`` is an
    optional cheaper value-only form of ``objective`` for the line search.
    """
    if value is None:
        def value(th):
            return objective(th)[0]

    theta = _project(start.flat(), opts)
    f, g = objective(theta)
    restart = opts.restart_period or theta.size
    direction = g.copy()
    g_prev = None
    history = [f]
    since_restart = 0
    failed = False
    it = 0
    while it < opts.max_iterations:
        g = _free(g, theta, opts)
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm < opts.gradient_tolerance:
            break
        if g_prev is not None and since_restart < restart and not failed:
            denom = float(g_prev @ g_prev)
            beta = max(0.0, float(g @ (g - g_prev)) / denom) if denom > 0 else 0.0
            direction = g + beta * direction
            if float(direction @ g) <= 0:
                direction = g.copy()
                since_restart = 0
        else:
            direction = g.copy()
            since_restart = 0
        direction = direction / np.max(np.abs(direction))
        t, f_new = _line_search(value, theta, f, direction, opts)
        it += 1
        if not f_new > f:
            if failed or since_restart == 0:
                break
            # retry once along the plain gradient
            failed = True
            continue
        failed = False
        theta = _project(theta + t * direction, opts)
        g_prev = g
        f, g = objective(theta)
        history.append(f)
        since_restart += 1
    g = _free(g, theta, opts)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    return ClimbResult(start.with_flat(theta), f, gnorm, it, history)
