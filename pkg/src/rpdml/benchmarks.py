"""Scalar benchmark problem for convergence checks.

The 1x1 SPD manifold is the positive half-line, so points here are plain
positive floats.  The benchmark minimizes (x - target)^2 subject to
x - bound <= 0, whose constrained optimum sits on the boundary whenever
target > bound.  The proximal subproblem has a closed-form solution (a
quadratic in x after clearing denominators), which makes runs fast and
exactly reproducible.
"""

from __future__ import annotations

import math

import numpy as np

from .solver import BoundParams, RunTrace, SaddleProblem, SolverConfig, run

#: Defaults used by the convergence benchmark and its acceptance checks.
#: Starting at the unconstrained minimizer makes the dual do all the work;
#: eta0 = 2 gives the dual enough early momentum that the iterates oscillate
#: across the boundary, so feasible iterates exist throughout the run.
TOY_TARGET = 2.0
TOY_BOUND = 1.0
TOY_X0 = 2.0
TOY_ALPHA = 0.001
TOY_ETA0 = 2.0


def scalar_distance_sq(a: float, b: float) -> float:
    """LogDet divergence on the positive half-line: a/b - log(a/b) - 1."""
    r = a / b
    return r - math.log(r) - 1.0


def scalar_toy_problem(target: float = TOY_TARGET, bound: float = TOY_BOUND) -> SaddleProblem:
    """Constrained scalar problem min (x - target)^2 s.t. x <= bound, x > 0."""

    def objective(x: float) -> float:
        return (x - target) ** 2

    def constraints(x: float) -> np.ndarray:
        return np.array([x - bound])

    def inner_minimizer(x_t: float, lam: np.ndarray, eta: float, **_) -> float:
        # Stationarity of (x - target)^2 + lam (x - bound) + d2(x_t, x)/(2 eta)
        # multiplied through by x gives 2 x^2 + b x - 1/(2 eta) = 0.
        lam0 = float(lam[0])
        b = lam0 - 2.0 * target + 1.0 / (2.0 * eta * x_t)
        c = 1.0 / (2.0 * eta)
        return (-b + math.sqrt(b * b + 8.0 * c)) / 4.0

    return SaddleProblem(
        objective=objective,
        constraints=constraints,
        constraint_count=1,
        inner_minimizer=inner_minimizer,
        distance_sq=scalar_distance_sq,
    )


def grid_search_optimum(
    target: float = TOY_TARGET,
    bound: float = TOY_BOUND,
    hi: float = 3.0,
    resolution: float = 1e-4,
) -> float:
    """Brute-force optimum of the toy problem over the grid (0, hi]."""
    xs = np.arange(resolution, hi + resolution / 2, resolution)
    feasible = xs[xs <= bound]
    return float(np.min((feasible - target) ** 2))


def run_toy(T: int, alpha: float = TOY_ALPHA, eta0: float = TOY_ETA0, x0: float = TOY_X0) -> RunTrace:
    problem = scalar_toy_problem()
    config = SolverConfig(alpha=alpha, eta0=eta0, max_outer_iters=T)
    return run(problem, x0, config)


def convergence_rows(trace: RunTrace, f_star: float, alpha: float, x0: float = TOY_X0) -> list[dict]:
    """Trace rows augmented with a cumulative bound check.

    For every prefix [0..t] the row carries the guaranteed gap, computed from
    constants estimated over that prefix, and whether the observed minimum
    gap respects it.  Running statistics are maintained incrementally so the
    whole report is linear in the trace length.
    """
    problem = scalar_toy_problem()
    rows = []
    running_min = math.inf
    sum_eta = sum_eta_sq = 0.0
    max_abs_h = max_dual = 0.0
    best_feasible: tuple | None = None  # (objective, violation, t)
    least_violating: tuple | None = None  # (violation, objective, t)
    points: dict[int, float] = {}
    for t, rec in enumerate(trace.records):
        running_min = min(running_min, rec.objective)
        sum_eta += rec.eta
        sum_eta_sq += rec.eta ** 2
        max_abs_h = max(max_abs_h, float(np.max(np.abs(rec.h))))
        max_dual = max(max_dual, rec.dual_norm)
        points[t] = rec.point
        if rec.violation <= 1e-8:
            cand = (rec.objective, rec.violation, t)
            if best_feasible is None or cand < best_feasible:
                best_feasible = cand
        cand = (rec.violation, rec.objective, t)
        if least_violating is None or cand < least_violating:
            least_violating = cand
        best_t = best_feasible[2] if best_feasible is not None else least_violating[2]
        params = BoundParams(
            d0_sq=problem.distance_sq(points[best_t], x0),
            g=max_abs_h + alpha * max_dual,
            m=problem.constraint_count,
        )
        bound = (0.5 * params.d0_sq + 2.0 * params.m * params.g ** 2 * sum_eta_sq) / sum_eta
        row = rec.to_dict()
        row["min_gap"] = running_min - f_star
        row["bound"] = bound
        row["bound_ok"] = bool(running_min - f_star <= bound)
        rows.append(row)
    return rows
