"""The four convex correlation sets and the primitive queries on them.

LOCAL and NOSIGNALING are polytopes carried as explicit vertex lists;
the two outer approximations of the quantum set are carried as moment-matrix
completion problems (a 5x5 matrix over {1, A0, A1, B0, B1} and the 9x9
"level 1+AB" extension with the four products A_x B_y).  The three queries --
linear maximization, membership, and white-noise visibility -- are exact
vertex/LP computations for the polytopes and parameter-cached semidefinite
programs for the moment sets.
"""
from __future__ import annotations

import enum
import functools
import itertools
from dataclasses import dataclass
from typing import NamedTuple

import cvxpy as cp
import numpy as np
from scipy.optimize import linprog

from .errors import SolverFailure, ValidationError
from .scenario import (
    ALL_SETTINGS,
    N_CELLS,
    SCENARIO_222,
    TABLE_SHAPE,
    Behavior,
    BellFunctional,
    InputDistribution,
    Scenario,
    cell_index,
    is_nonsignaling,
    white_noise,
)
from .solvers import CERT_PAD, solve_conic

# Visibility is unbounded for behaviors indistinguishable from white noise;
# the search is capped here and the cap is part of the documented contract.
VISIBILITY_CAP = 1e6


class SetKind(enum.Enum):
    LOCAL = "local"
    NOSIGNALING = "ns"
    NPA1 = "q1"
    ALMOST_QUANTUM = "aq"

    @classmethod
    def parse(cls, name: str) -> "SetKind":
        for kind in cls:
            if kind.value == name:
                return kind
        raise ValidationError(
            f"unknown hypothesis set {name!r}; expected one of "
            f"{[k.value for k in cls]}"
        )


VERTEX_KINDS = (SetKind.LOCAL, SetKind.NOSIGNALING)
MOMENT_KINDS = (SetKind.NPA1, SetKind.ALMOST_QUANTUM)


@dataclass(frozen=True)
class VertexList:
    """Deduplicated extreme points of a correlation polytope."""

    vertices: tuple[Behavior, ...]

    @property
    def matrix(self) -> np.ndarray:
        """Stacked flat vertices, shape (n_vertices, 16)."""
        return np.array([v.flat for v in self.vertices])

    def __len__(self) -> int:
        return len(self.vertices)


def _deterministic_behavior(g: tuple[int, int], h: tuple[int, int]) -> Behavior:
    p = np.zeros(TABLE_SHAPE)
    for x, y in ALL_SETTINGS:
        p[x, y, g[x], h[y]] = 1.0
    return Behavior(p)


def _pr_variant(alpha: int, beta: int, gamma: int) -> Behavior:
    # a XOR b = x*y XOR alpha*x XOR beta*y XOR gamma on the support cells
    p = np.zeros(TABLE_SHAPE)
    for x, y, a, b in itertools.product(range(2), repeat=4):
        if (a ^ b) == ((x * y) ^ (alpha * x) ^ (beta * y) ^ gamma):
            p[x, y, a, b] = 0.5
    return Behavior(p)


@functools.lru_cache(maxsize=None)
def local_vertices(scenario: Scenario = SCENARIO_222) -> VertexList:
    """The 16 deterministic strategies, lexicographic in (g(0),g(1),h(0),h(1))."""
    scenario.require_222()
    verts = [
        _deterministic_behavior((g0, g1), (h0, h1))
        for g0, g1, h0, h1 in itertools.product(range(2), repeat=4)
    ]
    return VertexList(tuple(verts))


@functools.lru_cache(maxsize=None)
def nosignaling_vertices(scenario: Scenario = SCENARIO_222) -> VertexList:
    """The 16 local vertices followed by the 8 PR-type vertices.

    PR variants are ordered lexicographically in their sign labels
    (alpha, beta, gamma), where the support condition is
    a XOR b = x*y XOR alpha*x XOR beta*y XOR gamma.
    """
    scenario.require_222()
    verts = list(local_vertices(scenario).vertices)
    verts += [
        _pr_variant(alpha, beta, gamma)
        for alpha, beta, gamma in itertools.product(range(2), repeat=3)
    ]
    return VertexList(tuple(verts))


# ---------------------------------------------------------------------------
# Moment-matrix structures


@dataclass(frozen=True)
class MomentStructure:
    """An affine map from (behavior, free moments) to a symmetric matrix.

    gamma(p, u) = const + sum_k p[k]*coeff_p[k] + sum_m u[m]*coeff_free[m];
    the behavior is in the set iff some u makes gamma PSD (given that the
    behavior is nonsignaling, which the map presumes via averaged marginals).
    """

    dim: int
    n_free: int
    const: np.ndarray
    coeff_p: np.ndarray  # (16, dim, dim)
    coeff_free: np.ndarray  # (n_free, dim, dim)

    def gamma_numeric(self, p_flat: np.ndarray, u: np.ndarray) -> np.ndarray:
        return (
            self.const
            + np.tensordot(p_flat, self.coeff_p, axes=1)
            + np.tensordot(u, self.coeff_free, axes=1)
        )

    def gamma_expr(self, p_expr, u_expr):
        flat = (
            cp.Constant(self.const.reshape(-1))
            + self.coeff_p.reshape(N_CELLS, -1).T @ p_expr
            + self.coeff_free.reshape(self.n_free, -1).T @ u_expr
        )
        return cp.reshape(flat, (self.dim, self.dim), order="C")


class _StructureBuilder:
    def __init__(self, dim: int, n_free: int):
        self.dim = dim
        self.const = np.zeros((dim, dim))
        self.coeff_p = np.zeros((N_CELLS, dim, dim))
        self.coeff_free = np.zeros((n_free, dim, dim))
        self._seen: set[tuple[int, int]] = set()

    def _mark(self, i: int, j: int):
        key = (min(i, j), max(i, j))
        assert key not in self._seen, f"moment entry {key} assigned twice"
        self._seen.add(key)

    def set_const(self, i: int, j: int, val: float):
        self._mark(i, j)
        self.const[i, j] = val
        self.const[j, i] = val

    def set_p(self, i: int, j: int, vec: np.ndarray):
        self._mark(i, j)
        self.coeff_p[:, i, j] += vec
        if i != j:
            self.coeff_p[:, j, i] += vec

    def set_free(self, i: int, j: int, m: int):
        self._mark(i, j)
        self.coeff_free[m, i, j] = 1.0
        self.coeff_free[m, j, i] = 1.0

    def build(self) -> MomentStructure:
        return MomentStructure(
            self.dim, self.coeff_free.shape[0], self.const,
            self.coeff_p, self.coeff_free,
        )


def _vec_pa0(x: int) -> np.ndarray:
    # <Pi^A_x> as the y-averaged Alice marginal of outcome 0
    v = np.zeros(N_CELLS)
    for y in range(2):
        for b in range(2):
            v[cell_index(x, y, 0, b)] += 0.5
    return v


def _vec_pb0(y: int) -> np.ndarray:
    v = np.zeros(N_CELLS)
    for x in range(2):
        for a in range(2):
            v[cell_index(x, y, a, 0)] += 0.5
    return v


def _vec_p00(x: int, y: int) -> np.ndarray:
    v = np.zeros(N_CELLS)
    v[cell_index(x, y, 0, 0)] = 1.0
    return v


@functools.lru_cache(maxsize=None)
def npa1_structure() -> MomentStructure:
    """5x5 moment matrix over {1, A0, A1, B0, B1} with outcome-0 projectors.

    Free moments: <A0 A1> and <B0 B1>.
    """
    sb = _StructureBuilder(5, 2)
    sb.set_const(0, 0, 1.0)
    for x in range(2):
        sb.set_p(0, 1 + x, _vec_pa0(x))
        sb.set_p(1 + x, 1 + x, _vec_pa0(x))
    for y in range(2):
        sb.set_p(0, 3 + y, _vec_pb0(y))
        sb.set_p(3 + y, 3 + y, _vec_pb0(y))
    sb.set_free(1, 2, 0)
    sb.set_free(3, 4, 1)
    for x in range(2):
        for y in range(2):
            sb.set_p(1 + x, 3 + y, _vec_p00(x, y))
    return sb.build()


@functools.lru_cache(maxsize=None)
def almost_quantum_structure() -> MomentStructure:
    """9x9 moment matrix over {1, A0, A1, B0, B1, A0B0, A0B1, A1B0, A1B1}.

    Free moments (symmetrized real parts): <A0 A1>, <B0 B1>, <A0 A1 B_y> for
    each y, <A_x B0 B1> for each x, and the two four-point moments
    <A0 A1 B0 B1> and <A0 A1 B1 B0>.
    """
    sb = _StructureBuilder(9, 8)
    V_A, V_B = 0, 1
    T_A = {0: 2, 1: 3}  # <A0 A1 B_y>
    T_B = {0: 4, 1: 5}  # <A_x B0 B1>
    W = {0: 6, 1: 7}  # four-point moments, keyed by y of the row label

    def ci(x: int, y: int) -> int:
        return 5 + 2 * x + y

    sb.set_const(0, 0, 1.0)
    for x in range(2):
        sb.set_p(0, 1 + x, _vec_pa0(x))
        sb.set_p(1 + x, 1 + x, _vec_pa0(x))
    for y in range(2):
        sb.set_p(0, 3 + y, _vec_pb0(y))
        sb.set_p(3 + y, 3 + y, _vec_pb0(y))
    sb.set_free(1, 2, V_A)
    sb.set_free(3, 4, V_B)
    for x in range(2):
        for y in range(2):
            sb.set_p(1 + x, 3 + y, _vec_p00(x, y))
            sb.set_p(0, ci(x, y), _vec_p00(x, y))
            sb.set_p(ci(x, y), ci(x, y), _vec_p00(x, y))
    # rows A_x against columns A_x' B_y; with x != x' both entries reduce to
    # the symmetrized <A0 A1 B_y>
    for x in range(2):
        for xp in range(2):
            for y in range(2):
                if x == xp:
                    sb.set_p(1 + x, ci(xp, y), _vec_p00(x, y))
                else:
                    sb.set_free(1 + x, ci(xp, y), T_A[y])
    for y in range(2):
        for x in range(2):
            for yp in range(2):
                if y == yp:
                    sb.set_p(3 + y, ci(x, yp), _vec_p00(x, y))
                else:
                    sb.set_free(3 + y, ci(x, yp), T_B[x])
    for x, y, xp, yp in itertools.product(range(2), repeat=4):
        i, j = ci(x, y), ci(xp, yp)
        if i >= j:
            continue
        if x == xp and y == yp:
            continue
        if x == xp:
            sb.set_free(i, j, T_B[x])
        elif y == yp:
            sb.set_free(i, j, T_A[y])
        else:
            sb.set_free(i, j, W[y])
    return sb.build()


def moment_structure(kind: SetKind) -> MomentStructure:
    if kind is SetKind.NPA1:
        return npa1_structure()
    if kind is SetKind.ALMOST_QUANTUM:
        return almost_quantum_structure()
    raise ValidationError(f"{kind} is not moment-structured")


@dataclass(frozen=True)
class HypothesisSet:
    """A convex correlation set with a vertex or moment representation."""

    kind: SetKind
    scenario: Scenario = SCENARIO_222

    def __post_init__(self):
        self.scenario.require_222()

    @property
    def is_vertex_set(self) -> bool:
        return self.kind in VERTEX_KINDS

    @property
    def vertex_list(self) -> VertexList:
        if self.kind is SetKind.LOCAL:
            return local_vertices(self.scenario)
        if self.kind is SetKind.NOSIGNALING:
            return nosignaling_vertices(self.scenario)
        raise ValidationError(f"{self.kind} has no vertex representation")

    @property
    def moments(self) -> MomentStructure:
        return moment_structure(self.kind)


def hypothesis_set(kind: SetKind | str, scenario: Scenario = SCENARIO_222) -> HypothesisSet:
    if isinstance(kind, str):
        kind = SetKind.parse(kind)
    return HypothesisSet(kind, scenario)


# ---------------------------------------------------------------------------
# Shared linear-constraint blocks for behavior variables


def _normalization_rows() -> tuple[np.ndarray, np.ndarray]:
    rows = np.zeros((4, N_CELLS))
    for k, (x, y) in enumerate(ALL_SETTINGS):
        for a in range(2):
            for b in range(2):
                rows[k, cell_index(x, y, a, b)] = 1.0
    return rows, np.ones(4)


def _nonsignaling_rows() -> np.ndarray:
    rows = []
    for x in range(2):
        row = np.zeros(N_CELLS)
        for b in range(2):
            row[cell_index(x, 0, 0, b)] += 1.0
            row[cell_index(x, 1, 0, b)] -= 1.0
        rows.append(row)
    for y in range(2):
        row = np.zeros(N_CELLS)
        for a in range(2):
            row[cell_index(0, y, a, 0)] += 1.0
            row[cell_index(1, y, a, 0)] -= 1.0
        rows.append(row)
    return np.array(rows)


def _behavior_constraints(p_expr) -> list:
    a_norm, b_norm = _normalization_rows()
    a_ns = _nonsignaling_rows()
    return [p_expr >= 0, a_norm @ p_expr == b_norm, a_ns @ p_expr == 0]


# ---------------------------------------------------------------------------
# Parameter-cached moment-set programs


class _MaxProblem(NamedTuple):
    problem: cp.Problem
    coeffs: cp.Parameter


@functools.lru_cache(maxsize=None)
def _max_problem(kind: SetKind) -> _MaxProblem:
    ms = moment_structure(kind)
    coeffs = cp.Parameter(N_CELLS)
    p = cp.Variable(N_CELLS)
    u = cp.Variable(ms.n_free)
    cons = _behavior_constraints(p) + [ms.gamma_expr(p, u) >> 0]
    problem = cp.Problem(cp.Maximize(coeffs @ p), cons)
    return _MaxProblem(problem, coeffs)


class _MarginProblem(NamedTuple):
    problem: cp.Problem
    p: cp.Parameter
    t: cp.Variable


@functools.lru_cache(maxsize=None)
def _margin_problem(kind: SetKind) -> _MarginProblem:
    ms = moment_structure(kind)
    p = cp.Parameter(N_CELLS)
    u = cp.Variable(ms.n_free)
    t = cp.Variable()
    cons = [ms.gamma_expr(p, u) - t * np.eye(ms.dim) >> 0]
    problem = cp.Problem(cp.Maximize(t), cons)
    return _MarginProblem(problem, p, t)


class _VisibilityProblem(NamedTuple):
    problem: cp.Problem
    direction: cp.Parameter
    nu: cp.Variable


@functools.lru_cache(maxsize=None)
def _visibility_problem(kind: SetKind) -> _VisibilityProblem:
    ms = moment_structure(kind)
    direction = cp.Parameter(N_CELLS)
    nu = cp.Variable(nonneg=True)
    u = cp.Variable(ms.n_free)
    a_ns = _nonsignaling_rows()
    p_mix = white_noise().flat + cp.multiply(nu, direction)
    cons = [
        p_mix >= 0,
        a_ns @ p_mix == 0,
        ms.gamma_expr(p_mix, u) >> 0,
        nu <= VISIBILITY_CAP,
    ]
    problem = cp.Problem(cp.Maximize(nu), cons)
    return _VisibilityProblem(problem, direction, nu)


# ---------------------------------------------------------------------------
# The three queries


class MaxFunctionalResult(NamedTuple):
    value: float
    upper_certificate: float


def max_linear_functional(
    fn: BellFunctional,
    h: HypothesisSet,
    dist: InputDistribution,
) -> MaxFunctionalResult:
    """Maximize sum_cells fn * P_xy * P(a,b|x,y) (+ offset) over the set.

    For vertex sets the maximum over vertices is exact and is its own
    certificate.  For moment sets the solver optimum is padded by a fixed
    margin covering the pinned gap tolerance, so upper_certificate is a
    rigorous upper bound with upper_certificate - value <= 1e-7.
    """
    weighted = (fn.coefficients * dist.p_xy[:, :, None, None]).reshape(N_CELLS)
    if h.is_vertex_set:
        values = h.vertex_list.matrix @ weighted + fn.offset
        best = float(values.max())
        return MaxFunctionalResult(best, best)
    prob = _max_problem(h.kind)
    prob.coeffs.value = weighted
    res = solve_conic(prob.problem, f"max_linear_functional over {h.kind.value}")
    value = res.value + fn.offset
    pad = max(CERT_PAD, 10.0 * res.tol)
    return MaxFunctionalResult(value, value + pad)


class MembershipResult(NamedTuple):
    inside: bool
    margin: float


def membership(b: Behavior, h: HypothesisSet, tol: float = 1e-7) -> MembershipResult:
    """Decide membership of a behavior in the set.

    The margin is a signed feasibility measure, >= -tol inside: for vertex
    sets it is minus the best L-infinity reconstruction residual over convex
    vertex weights; for moment sets it is the largest attainable smallest
    eigenvalue of the moment matrix over free-moment completions (short-
    circuited to minus the nonsignaling violation when that already fails).
    """
    if h.is_vertex_set:
        V = h.vertex_list.matrix  # (n, 16)
        n = V.shape[0]
        # variables: [w (n), s]; minimize s subject to |V^T w - b| <= s
        c = np.zeros(n + 1)
        c[-1] = 1.0
        a_ub = np.block([
            [V.T, -np.ones((N_CELLS, 1))],
            [-V.T, -np.ones((N_CELLS, 1))],
        ])
        b_ub = np.concatenate([b.flat, -b.flat])
        a_eq = np.zeros((1, n + 1))
        a_eq[0, :n] = 1.0
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
                      bounds=[(0, None)] * n + [(0, None)], method="highs")
        if not res.success:
            raise SolverFailure(f"membership LP failed: {res.message}")
        s = float(res.fun)
        return MembershipResult(s <= tol, -s)
    ns = is_nonsignaling(b, tol)
    if not ns.ok:
        return MembershipResult(False, -ns.max_violation)
    prob = _margin_problem(h.kind)
    prob.p.value = b.flat
    margin = solve_conic(prob.problem, f"membership in {h.kind.value}").value
    return MembershipResult(margin >= -tol, margin)


def visibility(b: Behavior, h: HypothesisSet) -> float:
    """Largest nu >= 0 with nu*b + (1-nu)*white_noise inside the set.

    Values > 1 indicate the behavior itself lies strictly inside; the search
    is capped at VISIBILITY_CAP for behaviors equal to white noise.
    """
    if h.is_vertex_set:
        V = h.vertex_list.matrix
        n = V.shape[0]
        direction = b.flat - white_noise().flat
        # variables: [w (n), nu]; V^T w - nu*direction = white
        c = np.zeros(n + 1)
        c[-1] = -1.0
        a_eq = np.zeros((N_CELLS + 1, n + 1))
        a_eq[:N_CELLS, :n] = V.T
        a_eq[:N_CELLS, n] = -direction
        a_eq[N_CELLS, :n] = 1.0
        b_eq = np.concatenate([white_noise().flat, [1.0]])
        res = linprog(c, A_eq=a_eq, b_eq=b_eq,
                      bounds=[(0, None)] * n + [(0, VISIBILITY_CAP)],
                      method="highs")
        if not res.success:
            raise SolverFailure(f"visibility LP failed: {res.message}")
        return float(-res.fun)
    prob = _visibility_problem(h.kind)
    prob.direction.value = b.flat - white_noise().flat
    return solve_conic(prob.problem, f"visibility in {h.kind.value}").value
