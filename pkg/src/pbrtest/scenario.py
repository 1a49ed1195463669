"""Core data model for bipartite Bell scenarios.

Probability tables are dense numpy arrays indexed ``[x, y, a, b]`` (settings
first, outcomes last) and serialized row-major in that order.  All types are
immutable after construction and all operations are pure functions.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import UnsupportedScenario, ValidationError, ZeroCountSetting

# Tolerance for probability tables built by exact arithmetic; solver outputs
# are held to the looser SOLVER_ATOL before renormalization.
PROB_ATOL = 1e-12
SOLVER_ATOL = 1e-9

TABLE_SHAPE = (2, 2, 2, 2)
N_CELLS = 16


def cell_index(x: int, y: int, a: int, b: int) -> int:
    """Flat row-major index of the (x, y, a, b) cell."""
    return ((x * 2 + y) * 2 + a) * 2 + b


ALL_CELLS = tuple(itertools.product(range(2), repeat=4))
ALL_SETTINGS = tuple(itertools.product(range(2), repeat=2))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Scenario:
    """A Bell scenario: number of parties, inputs per party, outputs per input.

    v1 supports the (2,2,2) scenario end-to-end; other parameter choices are
    accepted as descriptions but rejected by every operation that needs the
    closed-form (2,2,2) machinery.
    """

    parties: int = 2
    inputs_per_party: tuple[int, ...] = (2, 2)
    outputs_per_input: tuple[int, ...] = (2, 2)

    def __post_init__(self):
        if self.parties < 1:
            raise ValidationError("parties must be >= 1")
        if len(self.inputs_per_party) != self.parties:
            raise ValidationError("inputs_per_party length must equal parties")
        if any(m < 1 for m in self.inputs_per_party):
            raise ValidationError("all input counts must be >= 1")
        if any(k < 1 for k in self.outputs_per_input):
            raise ValidationError("all output counts must be >= 1")

    @property
    def is_222(self) -> bool:
        return (
            self.parties == 2
            and self.inputs_per_party == (2, 2)
            and self.outputs_per_input == (2, 2)
        )

    def require_222(self) -> None:
        if not self.is_222:
            raise UnsupportedScenario(
                f"only the (2,2,2) scenario is supported, got {self}"
            )


SCENARIO_222 = Scenario()


@dataclass(frozen=True)
class InputDistribution:
    """The fixed distribution over measurement-setting pairs (x, y)."""

    p_xy: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p_xy, dtype=float)
        if p.shape != (2, 2):
            raise ValidationError(f"p_xy must have shape (2,2), got {p.shape}")
        if np.any(p < -PROB_ATOL):
            raise ValidationError("input distribution entries must be >= 0")
        if abs(p.sum() - 1.0) > PROB_ATOL:
            raise ValidationError("input distribution must sum to 1")
        object.__setattr__(self, "p_xy", _frozen(np.clip(p, 0.0, None)))

    @classmethod
    def uniform(cls) -> "InputDistribution":
        return cls(np.full((2, 2), 0.25))

    def to_list(self) -> list[list[float]]:
        return self.p_xy.tolist()


@dataclass(frozen=True)
class Behavior:
    """The full conditional distribution table P(a,b|x,y)."""

    p: np.ndarray
    atol: float = field(default=PROB_ATOL, compare=False)

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != TABLE_SHAPE:
            raise ValidationError(f"behavior must have shape {TABLE_SHAPE}")
        if np.any(p < -self.atol):
            raise ValidationError(
                f"behavior has negative entry {p.min():.3e} beyond tolerance"
            )
        sums = p.sum(axis=(2, 3))
        if np.max(np.abs(sums - 1.0)) > self.atol:
            raise ValidationError(
                "per-setting outcome distributions must sum to 1 "
                f"(max deviation {np.max(np.abs(sums - 1.0)):.3e})"
            )
        object.__setattr__(self, "p", _frozen(np.clip(p, 0.0, None)))

    @classmethod
    def from_solver(cls, p: np.ndarray, atol: float = SOLVER_ATOL) -> "Behavior":
        """Wrap a solver output: check at atol, then renormalize exactly."""
        p = np.asarray(p, dtype=float)
        if np.any(p < -atol):
            raise ValidationError(
                f"solver output has negative entry {p.min():.3e}"
            )
        sums = p.sum(axis=(2, 3))
        if np.max(np.abs(sums - 1.0)) > atol:
            raise ValidationError(
                f"solver output normalization off beyond {atol:g}"
            )
        p = np.clip(p, 0.0, None)
        p = p / p.sum(axis=(2, 3), keepdims=True)
        return cls(p)

    @property
    def flat(self) -> np.ndarray:
        return self.p.reshape(N_CELLS)

    def marginal_a(self) -> np.ndarray:
        """P_A(a|x,y) = sum_b P(a,b|x,y), shape (x, y, a)."""
        return self.p.sum(axis=3)

    def marginal_b(self) -> np.ndarray:
        """P_B(b|x,y) = sum_a P(a,b|x,y), shape (x, y, b)."""
        return self.p.sum(axis=2)

    def correlators(self) -> np.ndarray:
        """E_xy = sum_{a,b} (-1)^(a+b) P(a,b|x,y), shape (x, y)."""
        signs = np.array([[1.0, -1.0], [-1.0, 1.0]])
        return np.einsum("xyab,ab->xy", self.p, signs)

    def mix(self, other: "Behavior", weight: float) -> "Behavior":
        """Convex mixture weight*self + (1-weight)*other."""
        return Behavior(weight * self.p + (1.0 - weight) * other.p)

    def to_json_dict(self) -> dict:
        return {
            "scenario": [2, 2, 2],
            "p": {
                f"{x},{y}": self.p[x, y].tolist() for x, y in ALL_SETTINGS
            },
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Behavior":
        if obj.get("scenario") != [2, 2, 2]:
            raise UnsupportedScenario(
                f"behavior file scenario {obj.get('scenario')} is not [2,2,2]"
            )
        p = np.zeros(TABLE_SHAPE)
        for x, y in ALL_SETTINGS:
            key = f"{x},{y}"
            if key not in obj["p"]:
                raise ValidationError(f"behavior file missing setting {key}")
            p[x, y] = np.asarray(obj["p"][key], dtype=float)
        return cls(p, atol=SOLVER_ATOL)


def pr_box() -> Behavior:
    """The Popescu-Rohrlich box: P(a,b|x,y) = 1/2 if a XOR b = x*y."""
    p = np.zeros(TABLE_SHAPE)
    for x, y, a, b in ALL_CELLS:
        if (a ^ b) == (x * y):
            p[x, y, a, b] = 0.5
    return Behavior(p)


def white_noise() -> Behavior:
    """The uniform behavior: 1/4 on every outcome pair."""
    return Behavior(np.full(TABLE_SHAPE, 0.25))


@dataclass(frozen=True)
class CountsTable:
    """Nonnegative-integer event counts indexed (x, y, a, b)."""

    n: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n)
        if n.shape != TABLE_SHAPE:
            raise ValidationError(f"counts must have shape {TABLE_SHAPE}")
        if not np.issubdtype(n.dtype, np.integer):
            rounded = np.rint(n)
            if np.max(np.abs(n - rounded)) > 0:
                raise ValidationError("counts must be integers")
            n = rounded.astype(np.int64)
        if np.any(n < 0):
            raise ValidationError("counts must be nonnegative")
        object.__setattr__(self, "n", _frozen(n.astype(np.int64)))

    @property
    def n_xy(self) -> np.ndarray:
        """Trials per setting, shape (2,2)."""
        return self.n.sum(axis=(2, 3))

    @property
    def n_total(self) -> int:
        return int(self.n.sum())

    @classmethod
    def from_trials(cls, seq: "TrialSequence") -> "CountsTable":
        flat = ((seq.x * 2 + seq.y) * 2 + seq.a) * 2 + seq.b
        n = np.bincount(flat, minlength=N_CELLS).reshape(TABLE_SHAPE)
        return cls(n)

    def to_tsv(self) -> str:
        lines = ["x\ty\ta\tb\tn"]
        for x, y, a, b in ALL_CELLS:
            lines.append(f"{x}\t{y}\t{a}\t{b}\t{int(self.n[x, y, a, b])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "CountsTable":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].split() != ["x", "y", "a", "b", "n"]:
            raise ValidationError("counts file must start with header 'x y a b n'")
        n = np.full(TABLE_SHAPE, -1, dtype=np.int64)
        for ln in lines[1:]:
            parts = ln.split()
            if len(parts) != 5:
                raise ValidationError(f"malformed counts row: {ln!r}")
            x, y, a, b, cnt = (int(v) for v in parts)
            if not all(v in (0, 1) for v in (x, y, a, b)):
                raise ValidationError(f"counts row out of range: {ln!r}")
            if n[x, y, a, b] >= 0:
                raise ValidationError(f"duplicate counts cell ({x},{y},{a},{b})")
            n[x, y, a, b] = cnt
        if np.any(n < 0):
            raise ValidationError("counts file must list all 16 cells")
        return cls(n)


@dataclass(frozen=True)
class TrialSequence:
    """Time-ordered trial records (i, x, y, a, b), indices 1-based."""

    i: np.ndarray
    x: np.ndarray
    y: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        arrays = {}
        n = None
        for name in ("i", "x", "y", "a", "b"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.ndim != 1:
                raise ValidationError(f"trial field {name} must be 1-D")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise ValidationError("trial fields must have equal length")
            arrays[name] = _frozen(arr)
        if n and np.any(np.diff(arrays["i"]) <= 0):
            raise ValidationError("trial indices must be strictly increasing")
        if n and arrays["i"][0] < 1:
            raise ValidationError("trial indices are 1-based")
        for name in ("x", "y", "a", "b"):
            arr = arrays[name]
            if n and (arr.min() < 0 or arr.max() > 1):
                raise ValidationError(f"trial symbol {name} out of range for (2,2,2)")
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return int(self.i.size)

    @classmethod
    def from_outcomes(cls, x, y, a, b) -> "TrialSequence":
        n = len(x)
        return cls(np.arange(1, n + 1), x, y, a, b)

    def slice(self, start: int, stop: int) -> "TrialSequence":
        return TrialSequence(
            self.i[start:stop], self.x[start:stop], self.y[start:stop],
            self.a[start:stop], self.b[start:stop],
        )

    def to_jsonl(self) -> str:
        out = []
        for k in range(len(self)):
            out.append(json.dumps({
                "i": int(self.i[k]), "x": int(self.x[k]), "y": int(self.y[k]),
                "a": int(self.a[k]), "b": int(self.b[k]),
            }, separators=(",", ":")))
        return "\n".join(out) + ("\n" if out else "")

    @classmethod
    def from_jsonl(cls, text: str) -> "TrialSequence":
        recs = []
        for lineno, ln in enumerate(text.splitlines(), start=1):
            if not ln.strip():
                continue
            try:
                obj = json.loads(ln)
                recs.append((obj["i"], obj["x"], obj["y"], obj["a"], obj["b"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"bad trial record on line {lineno}: {exc}")
        if not recs:
            return cls(*(np.empty(0, dtype=np.int64) for _ in range(5)))
        cols = tuple(np.array(col, dtype=np.int64) for col in zip(*recs))
        return cls(*cols)


@dataclass(frozen=True)
class BellFunctional:
    """A linear functional on behaviors: sum of coefficients*p plus an offset."""

    coefficients: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != TABLE_SHAPE:
            raise ValidationError(f"coefficients must have shape {TABLE_SHAPE}")
        if not np.all(np.isfinite(c)) or not math.isfinite(self.offset):
            raise ValidationError("functional entries must be finite")
        object.__setattr__(self, "coefficients", _frozen(c))

    @property
    def flat(self) -> np.ndarray:
        return self.coefficients.reshape(N_CELLS)


class FrequencyResult(NamedTuple):
    behavior: Behavior
    fallback_settings: tuple[tuple[int, int], ...]


def frequencies_from_counts(
    counts: CountsTable, *, uniform_fallback: bool = False
) -> FrequencyResult:
    """Relative frequencies f(a,b|x,y) = n(a,b,x,y) / N_xy.

    Settings with N_xy = 0 either raise ZeroCountSetting or, with the fallback
    enabled, are filled with the uniform outcome distribution and flagged.
    """
    n_xy = counts.n_xy
    empty = [(x, y) for x, y in ALL_SETTINGS if n_xy[x, y] == 0]
    if empty and not uniform_fallback:
        raise ZeroCountSetting(f"settings with zero counts: {empty}")
    f = np.empty(TABLE_SHAPE)
    for x, y in ALL_SETTINGS:
        if n_xy[x, y] == 0:
            f[x, y] = 0.25
        else:
            f[x, y] = counts.n[x, y] / n_xy[x, y]
    return FrequencyResult(Behavior(f), tuple(empty))


class NonsignalingReport(NamedTuple):
    ok: bool
    max_violation: float


def is_nonsignaling(b: Behavior, tol: float = SOLVER_ATOL) -> NonsignalingReport:
    """Largest absolute violation of the marginal-equality conditions.

    Checks P_A(a|x,y) independence of y and P_B(b|x,y) independence of x.
    """
    ma = b.marginal_a()  # (x, y, a)
    mb = b.marginal_b()  # (x, y, b)
    viol = max(
        float(np.max(np.abs(ma[:, 0, :] - ma[:, 1, :]))),
        float(np.max(np.abs(mb[0, :, :] - mb[1, :, :]))),
    )
    return NonsignalingReport(viol <= tol, viol)


def bell_value(fn: BellFunctional, b: Behavior) -> float:
    """Evaluate a linear functional on a behavior."""
    return float(np.sum(fn.coefficients * b.p)) + fn.offset


def correlator_functional(signs: np.ndarray) -> BellFunctional:
    """Functional sum_xy signs[x,y] * E_xy expressed in (a,b,x,y) coefficients."""
    out_signs = np.array([[1.0, -1.0], [-1.0, 1.0]])  # (-1)^(a+b)
    coeffs = np.einsum("xy,ab->xyab", np.asarray(signs, dtype=float), out_signs)
    return BellFunctional(coeffs)


def chsh_functional() -> BellFunctional:
    """S = E00 + E01 + E10 - E11."""
    return correlator_functional(np.array([[1.0, 1.0], [1.0, -1.0]]))


def chsh_prime_functional() -> BellFunctional:
    """S' = -E00 + E01 + E10 + E11."""
    return correlator_functional(np.array([[-1.0, 1.0], [1.0, 1.0]]))


def chsh_slice_functional(theta: float) -> BellFunctional:
    """S*cos(theta) + S'*sin(theta) over the two CHSH parameters."""
    signs = (
        math.cos(theta) * np.array([[1.0, 1.0], [1.0, -1.0]])
        + math.sin(theta) * np.array([[-1.0, 1.0], [1.0, 1.0]])
    )
    return correlator_functional(signs)
