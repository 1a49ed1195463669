"""Information projection onto a hypothesis set and the ratio tables built
from it.

The weighted relative entropy from observed frequencies to the set is
minimized as a conic program (exponential cone for the log terms, plus the
set's simplex or PSD constraints).  The cellwise ratio frequencies/minimizer
then defines a data-driven Bell-like inequality whose set-wide expectation
is certified to be at most 1 before it may be used as a test statistic.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import cvxpy as cp
import numpy as np

from .errors import NumericalDegeneracy, SupportMismatch, ValidationError
from .scenario import (
    ALL_SETTINGS,
    N_CELLS,
    TABLE_SHAPE,
    Behavior,
    BellFunctional,
    InputDistribution,
    _frozen,
)
from .sets import (
    HypothesisSet,
    SetKind,
    _behavior_constraints,
    max_linear_functional,
    moment_structure,
)
from .solvers import PROJECTION_TOLS, solve_conic

LOG2 = math.log(2.0)


def kl_divergence(f: Behavior, p: Behavior, dist: InputDistribution) -> float:
    """Weighted KL divergence sum P_xy f log2(f/p), in bits.

    Uses the 0*log(0) = 0 convention; returns +inf when p vanishes on a cell
    where f (with positive setting weight) does not.
    """
    total = 0.0
    for x, y in ALL_SETTINGS:
        w = dist.p_xy[x, y]
        if w == 0.0:
            continue
        fv = f.p[x, y].reshape(-1)
        pv = p.p[x, y].reshape(-1)
        sup = fv > 0.0
        if np.any(pv[sup] == 0.0):
            return math.inf
        total += w * float(np.sum(fv[sup] * np.log2(fv[sup] / pv[sup])))
    return total


@dataclass(frozen=True)
class ProjectionResult:
    """Minimizer and divergence of the information projection."""

    minimizer: Behavior
    divergence_bits: float
    solver_gap: float
    n_iterations: int
    hypothesis: SetKind


class _ProjectionProblem(NamedTuple):
    problem: cp.Problem
    weights: cp.Parameter  # P_xy * f on the support cells
    p_expr: object  # cvxpy expression for the 16-cell behavior
    simplex: cp.Variable | None  # vertex weights, when the set is a polytope


@functools.lru_cache(maxsize=None)
def _projection_problem(kind: SetKind, support: tuple[bool, ...]) -> _ProjectionProblem:
    sup = np.flatnonzero(np.array(support))
    weights = cp.Parameter(sup.size, nonneg=True)
    simplex = None
    if kind in (SetKind.LOCAL, SetKind.NOSIGNALING):
        from .sets import hypothesis_set

        V = hypothesis_set(kind).vertex_list.matrix
        simplex = w = cp.Variable(V.shape[0], nonneg=True)
        p_expr = V.T @ w
        cons = [cp.sum(w) == 1]
    else:
        ms = moment_structure(kind)
        p_expr = cp.Variable(N_CELLS)
        u = cp.Variable(ms.n_free)
        cons = _behavior_constraints(p_expr) + [ms.gamma_expr(p_expr, u) >> 0]
    # minimizing -sum w_i log p_i is the divergence up to the data entropy,
    # which is constant in p
    objective = cp.Minimize(-cp.sum(cp.multiply(weights, cp.log(p_expr[sup]))))
    return _ProjectionProblem(cp.Problem(objective, cons), weights, p_expr, simplex)


# Fixed-point polish for polytope projections.  The conic solver's objective
# gap g allows O(sqrt(g)) relative error in the minimizer, which leaks
# linearly into the expectation certificate; the multiplicative update below
# drives every vertex's ratio expectation to within _POLISH_TOL of 1.
_POLISH_TOL = 1e-9
_POLISH_MAX_ITER = 20_000


def _polish_simplex(
    V: np.ndarray, w: np.ndarray, coef: np.ndarray, sup: np.ndarray
) -> np.ndarray:
    Vs = V[:, sup]
    w = np.maximum(w, 0.0)
    w /= w.sum()
    best_w, best_excess = w, math.inf
    for _ in range(_POLISH_MAX_ITER):
        p = np.maximum(Vs.T @ w, 1e-300)
        score = Vs @ (coef / p)
        excess = score.max() - 1.0
        if excess < best_excess:
            best_w, best_excess = w, excess
        if excess <= _POLISH_TOL:
            break
        w = w * score
        w /= w.sum()
    return best_w


def project_kl(
    f: Behavior,
    dist: InputDistribution,
    h: HypothesisSet,
    tol: float = 1e-9,
) -> ProjectionResult:
    """Minimize the weighted KL divergence from f over the hypothesis set."""
    setting_weight = dist.p_xy
    for x, y in ALL_SETTINGS:
        if setting_weight[x, y] > 0 and f.p[x, y].sum() <= 0:
            raise NumericalDegeneracy(
                f"frequencies have empty support at setting ({x},{y})"
            )
    f_flat = f.flat
    w_flat = np.repeat(setting_weight.reshape(4), 4)
    support = tuple(bool(v) for v in (f_flat > 0) & (w_flat > 0))
    prob = _projection_problem(h.kind, support)
    sup = np.array(support)
    prob.weights.value = (w_flat * f_flat)[sup]
    obj_value = solve_conic(
        prob.problem, f"project_kl onto {h.kind.value}", tols=PROJECTION_TOLS
    ).value
    if prob.simplex is not None:
        coef = (w_flat * f_flat)[sup]
        V = h.vertex_list.matrix
        w_star = _polish_simplex(V, np.asarray(prob.simplex.value), coef, np.flatnonzero(sup))
        p_star = (V.T @ w_star).reshape(TABLE_SHAPE)
        obj_value = -float(np.sum(coef * np.log(np.maximum(p_star.reshape(-1)[sup], 1e-300))))
    else:
        p_star = np.asarray(prob.p_expr.value).reshape(TABLE_SHAPE)
    # accept at the solver contract tolerance; renormalization is exact and
    # any residual ratio inflation is caught by certification
    minimizer = Behavior.from_solver(p_star, atol=1e-7)
    divergence = max(kl_divergence(f, minimizer, dist), 0.0)
    # objective is in nats and omits the constant sum w f log f term
    entropy_term = float(np.sum((w_flat * f_flat)[sup] * np.log(f_flat[sup])))
    solver_gap = abs((obj_value + entropy_term) / LOG2 - divergence)
    stats = prob.problem.solver_stats
    n_iter = int(stats.num_iters) if stats and stats.num_iters is not None else -1
    return ProjectionResult(minimizer, divergence, solver_gap, n_iter, h.kind)


@dataclass(frozen=True)
class RatioTable:
    """Nonnegative coefficients of a data-driven Bell-like inequality.

    After certification, the expectation sum P_xy * r * P is at most 1 for
    every behavior P in the hypothesis set; certified_bound records
    min(pre-certification maximum, 1).
    """

    r: np.ndarray
    certified_bound: float | None = None
    precertification_max: float | None = field(default=None, compare=False)

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if r.shape != TABLE_SHAPE:
            raise ValidationError(f"ratio table must have shape {TABLE_SHAPE}")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValidationError("ratio entries must be finite and nonnegative")
        object.__setattr__(self, "r", _frozen(r))

    def to_json_dict(self) -> dict:
        return {
            "r": {f"{x},{y}": self.r[x, y].tolist() for x, y in ALL_SETTINGS},
            "certified_bound": self.certified_bound,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "RatioTable":
        r = np.zeros(TABLE_SHAPE)
        for x, y in ALL_SETTINGS:
            r[x, y] = np.asarray(obj["r"][f"{x},{y}"], dtype=float)
        return cls(r, certified_bound=obj.get("certified_bound"))


def build_ratios(f: Behavior, proj: ProjectionResult) -> RatioTable:
    """Cellwise ratio frequencies/minimizer; zero-frequency cells get ratio 0."""
    p_star = proj.minimizer.p
    bad = (f.p > 1e-12) & (p_star <= 0.0)
    if np.any(bad):
        cells = [c for c in itertools.product(range(2), repeat=4) if bad[c]]
        raise SupportMismatch(
            f"projection minimizer vanishes on observed cells {cells}"
        )
    r = np.zeros(TABLE_SHAPE)
    sup = f.p > 0.0
    r[sup] = f.p[sup] / p_star[sup]
    return RatioTable(r)


def certify_ratios(
    rt: RatioTable, dist: InputDistribution, h: HypothesisSet
) -> RatioTable:
    """Rigorously enforce the set-wide expectation bound of at most 1.

    Computes a certified upper bound m on the expectation of the ratios over
    the hypothesis set; if m exceeds 1 the table is divided by m.  The
    pre-certification maximum is retained for diagnostics.
    """
    m = max_linear_functional(BellFunctional(rt.r), h, dist).upper_certificate
    if m > 1.0:
        return RatioTable(rt.r / m, certified_bound=1.0, precertification_max=m)
    return RatioTable(rt.r, certified_bound=m, precertification_max=m)
