"""Iterative refinement of performative control.

Both algorithms start from the optimal control of the noise-free system and
alternate two moves: fix the current control and build a confidence product
for the noise it induces, then fix that product and solve the robust min-max
problem for the next control.

* ``run_e_irpc`` calibrates each product empirically from freshly sampled
  trajectories (N_i per iteration from the configured schedule).
* ``run_i_irpc`` queries the ideal quantile oracle instead; it is fully
  deterministic and is the reference the empirical variant is compared to.

Iterations stop once the control stops moving (step norm below ``fix_tol``)
or at ``iters_max``.  Ideal runs additionally watch for non-contraction:
if step norms have not decreased over a trailing window the run is flagged
as diverged rather than left spinning.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from .conformal import Euclidean, build_confidence_product, ideal_confidence_product
from .dynamics import sample_noise_batch
from .errors import ConvergenceError, InsufficientSamplesError, NonContractionError, SamplingError
from .history import IterationHistory, IterationRecord
from .solver import RobustProblem, SolverConfig
from .types import SystemModel

__all__ = [
    "Constant",
    "Theoretical",
    "RunConfig",
    "GridSpec",
    "sample_schedule_theoretical",
    "solve_nominal",
    "run_e_irpc",
    "run_i_irpc",
    "estimate_u_ps",
    "StableControl",
    "grid_search_u_po",
    "GridSearchResult",
]

_DIVERGENCE_WINDOW = 20


# ---------------------------------------------------------------------------
# schedules and run configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    """Fixed calibration sample count per iteration."""

    N: int

    def size(self, i, p, T):
        return self.N


@dataclass(frozen=True)
class Theoretical:
    """Iteration-indexed sample sizes from the finite-sample analysis."""

    lam: float
    beta: float
    eps_t: tuple
    delta: float
    c: float = 1.0

    def size(self, i, p, T):
        return sample_schedule_theoretical(
            self.lam, self.beta, self.eps_t, self.delta, p, T, i, self.c
        )


Schedule = Union[Constant, Theoretical]


@dataclass(frozen=True)
class RunConfig:
    p: float = 0.1
    schedule: Schedule = Constant(999)
    fix_tol: float = 1e-8
    iters_max: int = 100
    solver: SolverConfig = field(default_factory=SolverConfig)
    score: object = field(default_factory=Euclidean)
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if self.fix_tol <= 0:
            raise ValueError("fix_tol must be positive")
        if self.iters_max < 1:
            raise ValueError("iters_max must be >= 1")


def _schedule_factor(lam, beta, eps_t, delta, T):
    sq = float(np.sum(np.square(np.asarray(eps_t, dtype=float))))
    return 4.0 * lam * lam * T ** 3 / (beta * beta * delta * delta * sq)


def sample_schedule_theoretical(lam, beta, eps_t, delta, p, T, i, c=1.0):
    """Per-iteration sample size N_i implied by the finite-sample bound.

    N_i = ceil(c * 4 lam^2 T^3 / (beta^2 delta^2 sum eps_t^2)
                 * |log(6 p / (pi^2 i^2 T^2))|).

    The logarithm's argument is below one for typical inputs, so its absolute
    value is used; the hidden constant of the bound is exposed as ``c``.
    """
    if min(lam, beta, delta, p) <= 0 or i < 1 or T < 1 or c <= 0:
        raise ValueError("all schedule inputs must be positive and i >= 1")
    factor = _schedule_factor(lam, beta, eps_t, delta, T)
    logterm = abs(math.log(6.0 * p / (math.pi ** 2 * i * i * T * T)))
    return int(math.ceil(c * factor * logterm))


# ---------------------------------------------------------------------------
# nominal initialization
# ---------------------------------------------------------------------------


def solve_nominal(model: SystemModel, loss, solver_cfg: SolverConfig = None,
                  problem: RobustProblem = None):
    """Optimal open-loop control of the noise-free system; returns (T, m)."""
    cfg = solver_cfg or SolverConfig()
    prob = problem or RobustProblem(model, loss)
    return prob.outer_min(np.zeros(model.T), cfg).u


# ---------------------------------------------------------------------------
# the refinement loops
# ---------------------------------------------------------------------------


def _iteration_seed(master_seed, i):
    ss = np.random.SeedSequence([int(master_seed), int(i)])
    return int(ss.generate_state(1, np.uint64)[0])


def _run_loop(model, noise, loss, cfg: RunConfig, ideal: bool, u_init=None,
              detect_divergence=None) -> IterationHistory:
    prob = RobustProblem(model, loss, cfg.score)
    history = IterationHistory(
        algorithm="i_irpc" if ideal else "e_irpc",
        n=model.n, m=model.m, T=model.T, p=cfg.p, master_seed=cfg.master_seed,
    )
    if detect_divergence is None:
        detect_divergence = ideal

    t0 = time.perf_counter()
    if u_init is None:
        u = solve_nominal(model, loss, cfg.solver, problem=prob)
        init_value = prob.inner_max(np.zeros(model.T), u, cfg.solver).value
    else:
        u = model.project(np.asarray(u_init, dtype=float))
        init_value = prob.evaluate(u, np.zeros((model.T, model.n)))
    history.records.append(
        IterationRecord(i=0, u=u, radii=None, inner_value=init_value,
                        step_norm=None, N_i=0, seed=None,
                        wall_time=time.perf_counter() - t0)
    )

    steps = []
    for i in range(1, cfg.iters_max + 1):
        t0 = time.perf_counter()
        try:
            if ideal:
                conf = ideal_confidence_product(model, noise, u, cfg.p)
                N_i, seed_i = 0, None
            else:
                N_i = cfg.schedule.size(i, cfg.p, model.T)
                seed_i = _iteration_seed(cfg.master_seed, i)
                batch = sample_noise_batch(model, noise, u, N_i, seed_i,
                                           workers=cfg.workers)
                conf = build_confidence_product(batch, cfg.score, cfg.p)
        except (InsufficientSamplesError, SamplingError) as exc:
            exc.history = history
            raise
        try:
            sol = prob.outer_min(conf.radii, cfg.solver, v0=u)
        except ConvergenceError as exc:
            if ideal and exc.best is not None:
                # a robust subproblem ran out of iterations: report the run
                # as non-contracting rather than crash the deterministic loop
                sol = exc.best
                step = float(np.linalg.norm(sol.u - u))
                history.records.append(
                    IterationRecord(i=i, u=sol.u, radii=conf.radii,
                                    inner_value=sol.value, step_norm=step,
                                    N_i=N_i, seed=seed_i,
                                    wall_time=time.perf_counter() - t0)
                )
                history.diverged = True
                history.stop_reason = "solver_stall"
                return history
            exc.history = history
            raise
        step = float(np.linalg.norm(sol.u - u))
        u = sol.u
        steps.append(step)
        history.records.append(
            IterationRecord(i=i, u=u, radii=conf.radii, inner_value=sol.value,
                            step_norm=step, N_i=N_i, seed=seed_i,
                            wall_time=time.perf_counter() - t0)
        )
        if step <= cfg.fix_tol:
            history.converged = True
            history.stop_reason = "fix_tol"
            return history
        # cycling/divergence: the last window's best step made no progress
        # over the best step seen before it
        if (
            detect_divergence
            and len(steps) > _DIVERGENCE_WINDOW
            and min(steps[-_DIVERGENCE_WINDOW:]) >= min(steps[:-_DIVERGENCE_WINDOW])
        ):
            history.diverged = True
            history.stop_reason = "diverged"
            return history
    history.stop_reason = "iters_max"
    return history


def run_e_irpc(model, noise, loss, cfg: RunConfig, u_init=None) -> IterationHistory:
    """Empirical refinement: sample, calibrate, solve, repeat.

    Per-iteration sampling seeds derive from (master_seed, iteration), so a
    run is bit-reproducible for a fixed master seed and worker count has no
    effect on the result.
    """
    return _run_loop(model, noise, loss, cfg, ideal=False, u_init=u_init)


def run_i_irpc(model, noise, loss, cfg: RunConfig, u_init=None) -> IterationHistory:
    """Ideal refinement driven by the quantile oracle; deterministic."""
    return _run_loop(model, noise, loss, cfg, ideal=True, u_init=u_init)


# ---------------------------------------------------------------------------
# stable and optimal controls
# ---------------------------------------------------------------------------


@dataclass
class StableControl:
    u: np.ndarray
    residual: float
    history: IterationHistory


def estimate_u_ps(model, noise, loss, cfg: RunConfig = None, u_init=None) -> StableControl:
    """Run the ideal refinement to a tight fixed point.

    Returns the terminal iterate together with its stability residual: the
    distance the refinement operator moves it in one more application.
    Raises NonContractionError when the iteration fails to contract.
    """
    cfg = cfg or RunConfig()
    tight_solver = replace(cfg.solver, grad_tol=min(cfg.solver.grad_tol, 1e-10))
    tight = replace(cfg, fix_tol=1e-10, iters_max=10_000, solver=tight_solver)
    history = _run_loop(model, noise, loss, tight, ideal=True, u_init=u_init)
    if history.diverged or not history.converged:
        raise NonContractionError(
            f"ideal refinement did not contract (stopped: {history.stop_reason})",
            history=history,
        )
    u = history.final_u
    prob = RobustProblem(model, loss, cfg.score)
    conf = ideal_confidence_product(model, noise, u, cfg.p)
    u_next = prob.outer_min(conf.radii, tight_solver, v0=u).u
    return StableControl(u=u, residual=float(np.linalg.norm(u_next - u)), history=history)


@dataclass(frozen=True)
class GridSpec:
    points_per_axis: int = 41
    refinements: int = 2
    zoom: float = 10.0


@dataclass
class GridSearchResult:
    u: np.ndarray
    value: float
    cell_widths: np.ndarray   # final per-axis grid resolution


def grid_search_u_po(model, noise, loss, p, grid: GridSpec = None,
                     solver_cfg: SolverConfig = None) -> GridSearchResult:
    """Desk-scale oracle for the performatively optimal control.

    Evaluates h(u) = worst-case loss over the ideal confidence set induced by
    u itself on a dense grid over the control box, then refines the grid
    around the best cell.  Restricted to total control dimension m*T <= 3.
    """
    grid = grid or GridSpec()
    cfg = solver_cfg or SolverConfig()
    d = model.m * model.T
    if d > 3:
        raise ValueError(f"grid search supports m*T <= 3, got {d}")
    prob = RobustProblem(model, loss, Euclidean())
    lo = model.lower.ravel().copy()
    hi = model.upper.ravel().copy()

    def h(u_flat):
        u = u_flat.reshape(model.T, model.m)
        conf = ideal_confidence_product(model, noise, u, p)
        return prob.inner_max(conf.radii, u, cfg).value

    best_u, best_val = None, np.inf
    for _ in range(grid.refinements + 1):
        axes = [np.linspace(lo[j], hi[j], grid.points_per_axis) for j in range(d)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        for u_flat in mesh:
            val = h(u_flat)
            if val < best_val:
                best_val, best_u = val, u_flat.copy()
        span = (hi - lo) / grid.zoom
        lo = np.maximum(model.lower.ravel(), best_u - 0.5 * span)
        hi = np.minimum(model.upper.ravel(), best_u + 0.5 * span)
    widths = (hi - lo) / (grid.points_per_axis - 1)
    return GridSearchResult(best_u.reshape(model.T, model.m), best_val, widths)
