"""Thin wrapper around the conic solver stack.

Clarabel is the primary backend (handles the exponential and PSD cones at
high accuracy).  A solve first runs at 1e-9 feasibility/gap tolerances and,
when the solver cannot certify that accuracy, is retried at progressively
looser tolerances so the reported status always certifies the returned
value; SCS is the last resort.  The achieved tolerance travels with the
value so certificates can pad accordingly instead of trusting optimism.
"""
from __future__ import annotations

import warnings
from typing import NamedTuple

import cvxpy as cp

from .errors import SolverFailure

# Additive pad applied to solver optima when quoting a rigorous upper bound;
# sized to dominate the strict gap tolerance while staying within the 1e-7
# certificate contract.
CERT_PAD = 5e-8


class SolveResult(NamedTuple):
    value: float
    tol: float  # tolerance level the solver certified


def _clarabel_opts(tol: float) -> dict:
    return {"tol_gap_abs": tol, "tol_gap_rel": tol, "tol_feas": tol}


DEFAULT_TOLS = (1e-9, 1e-8, 1e-7)
# Projections feed a ratio table whose certificate error grows like the
# square root of the objective gap, so they start two orders tighter.
PROJECTION_TOLS = (1e-12, 1e-11, 1e-10) + DEFAULT_TOLS


def solve_conic(
    problem: cp.Problem, context: str, tols: tuple[float, ...] = DEFAULT_TOLS
) -> SolveResult:
    """Solve and return (objective value, certified tolerance)."""
    statuses = []
    inaccurate_value = None
    for tol in tols:
        try:
            with warnings.catch_warnings():
                # the cascade handles reduced-accuracy statuses itself
                warnings.simplefilter("ignore", UserWarning)
                problem.solve(solver=cp.CLARABEL, **_clarabel_opts(tol))
        except cp.error.SolverError as exc:
            statuses.append(f"clarabel@{tol:g}: error {exc}")
            continue
        if problem.status == cp.OPTIMAL:
            return SolveResult(float(problem.value), tol)
        if problem.status == cp.OPTIMAL_INACCURATE and problem.value is not None:
            inaccurate_value = float(problem.value)
        statuses.append(f"clarabel@{tol:g}: {problem.status}")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            problem.solve(solver=cp.SCS, eps=1e-9, max_iters=200_000)
        if problem.status == cp.OPTIMAL:
            return SolveResult(float(problem.value), 1e-8)
        statuses.append(f"scs: {problem.status}")
    except cp.error.SolverError as exc:
        statuses.append(f"scs: error {exc}")
    if inaccurate_value is not None:
        # Clarabel's reduced-accuracy acceptance; treat as 1e-5-certified
        return SolveResult(inaccurate_value, 1e-5)
    raise SolverFailure(f"{context}: {'; '.join(statuses)}", status=statuses[-1])
