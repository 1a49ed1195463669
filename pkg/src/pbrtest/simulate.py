"""Hypothetical nonlocal sources and reproducible trial sampling.

Sources are convex mixtures of the PR box, white noise, and the 24
nonsignaling extreme points (canonical ordering: the 16 deterministic
vertices lexicographic in (g(0),g(1),h(0),h(1)), then the 8 PR variants
lexicographic in their (alpha,beta,gamma) sign labels).  Sampling uses
numpy's PCG64 generator with inverse-CDF draws over frozen cell orderings;
experiment e of a batch uses the derived seed ``seed XOR e``.
"""
from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .engine import AnalysisConfig, analyze_sequence
from .errors import ValidationError
from .scenario import (
    Behavior,
    InputDistribution,
    TrialSequence,
    pr_box,
    white_noise,
)
from .sets import nosignaling_vertices

RNG_FAMILY = "numpy PCG64"
SEED_DERIVATION = "seed XOR experiment_index"

P_BOUND_BINS = (1e-10, 1e-4, 1e-2, 1e-1)

MODE_IID = "iid"
MODE_TRIALWISE = "trialwise"


def canonical_noise_weights() -> np.ndarray:
    """Uniform weights over the 24 nonsignaling vertices."""
    return np.full(24, 1.0 / 24.0)


@dataclass(frozen=True)
class SourceSpec:
    """A simulated nonlocal source: PR/white-noise mixture plus vertex noise."""

    mode: str = MODE_IID
    v: float = 0.72
    epsilon: float = 0.01
    noise_weights: np.ndarray = field(default_factory=canonical_noise_weights)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (MODE_IID, MODE_TRIALWISE):
            raise ValidationError(f"mode must be iid or trialwise, got {self.mode!r}")
        if not (0.0 <= self.v <= 1.0):
            raise ValidationError("v must be in [0,1]")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ValidationError("epsilon must be in [0,1]")
        w = np.asarray(self.noise_weights, dtype=float)
        if w.shape != (24,):
            raise ValidationError("noise_weights must have 24 entries")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError("noise_weights must be a probability vector")
        w = np.ascontiguousarray(w)
        w.flags.writeable = False
        object.__setattr__(self, "noise_weights", w)
        object.__setattr__(self, "seed", int(self.seed))


def iso_source(v: float) -> Behavior:
    """v * PR + (1-v) * white noise."""
    if not (0.0 <= v <= 1.0):
        raise ValidationError("v must be in [0,1]")
    return pr_box().mix(white_noise(), v)


def mixed_source(
    v: float, epsilon: float, weights: np.ndarray | None = None
) -> Behavior:
    """(1-epsilon) * iso_source(v) + epsilon * sum_j weights_j * vertex_j."""
    if weights is None:
        weights = canonical_noise_weights()
    weights = np.asarray(weights, dtype=float)
    verts = nosignaling_vertices().matrix  # (24, 16)
    noise = (weights @ verts).reshape((2, 2, 2, 2))
    return Behavior((1.0 - epsilon) * iso_source(v).p + epsilon * noise)


def source_behavior(spec: SourceSpec) -> Behavior:
    """The (average) behavior of the source described by a SourceSpec."""
    return mixed_source(spec.v, spec.epsilon, spec.noise_weights)


def _setting_cdf(dist: InputDistribution) -> np.ndarray:
    return np.cumsum(dist.p_xy.reshape(4))


def _outcome_cdfs_iid(spec: SourceSpec) -> np.ndarray:
    """Cumulative outcome distribution per setting, shape (4, 4), (a,b) a-major."""
    p = source_behavior(spec).p.reshape(4, 4)
    return np.cumsum(p, axis=1)


def _outcome_cdfs_trialwise(spec: SourceSpec) -> np.ndarray:
    """Per-vertex cumulative outcome distributions, shape (24, 4, 4)."""
    iso = iso_source(spec.v).p.reshape(4, 4)
    verts = nosignaling_vertices().matrix.reshape(24, 4, 4)
    per_trial = (1.0 - spec.epsilon) * iso[None, :, :] + spec.epsilon * verts
    return np.cumsum(per_trial, axis=2)


def _invert_cdf(u: np.ndarray, cdf_rows: np.ndarray) -> np.ndarray:
    # smallest k with u < cdf[k]; cdf rows end at 1 up to roundoff
    return (u[:, None] >= cdf_rows[:, :-1]).sum(axis=1)


def sample_trials(
    spec: SourceSpec, dist: InputDistribution, n_trials: int
) -> TrialSequence:
    """Sample a full trial sequence, bit-exactly reproducible from the seed.

    Per trial the generator is consumed in a frozen order: one uniform for
    the setting pair, one for the vertex label (trialwise mode only), one for
    the outcome pair.
    """
    if n_trials < 1:
        raise ValidationError("n_trials must be >= 1")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    cols = 3 if spec.mode == MODE_TRIALWISE else 2
    u = rng.random((n_trials, cols))
    set_cdf = _setting_cdf(dist)
    settings = np.minimum(
        np.searchsorted(set_cdf, u[:, 0], side="right"), 3
    )
    if spec.mode == MODE_IID:
        cdfs = _outcome_cdfs_iid(spec)
        outcomes = _invert_cdf(u[:, 1], cdfs[settings])
    else:
        vert_cdf = np.cumsum(spec.noise_weights)
        verts = np.minimum(
            np.searchsorted(vert_cdf, u[:, 1], side="right"), 23
        )
        cdfs = _outcome_cdfs_trialwise(spec)
        outcomes = _invert_cdf(u[:, 2], cdfs[verts, settings])
    x, y = settings // 2, settings % 2
    a, b = outcomes // 2, outcomes % 2
    return TrialSequence.from_outcomes(x, y, a, b)


def draw_trial(
    spec: SourceSpec, dist: InputDistribution, rng: np.random.Generator
) -> tuple[int, int, int, int]:
    """Draw one (x, y, a, b) record, advancing the generator deterministically.

    Consumes the same uniforms in the same order as one row of
    sample_trials, so sequential draws reproduce the vectorized sampler.
    """
    cols = 3 if spec.mode == MODE_TRIALWISE else 2
    u = rng.random(cols)
    s = min(int(np.searchsorted(_setting_cdf(dist), u[0], side="right")), 3)
    if spec.mode == MODE_IID:
        row = _outcome_cdfs_iid(spec)[s]
        u_out = u[1]
    else:
        j = min(int(np.searchsorted(np.cumsum(spec.noise_weights), u[1], side="right")), 23)
        row = _outcome_cdfs_trialwise(spec)[j, s]
        u_out = u[2]
    out = int((u_out >= row[:-1]).sum())
    return s // 2, s % 2, out // 2, out % 2


@dataclass(frozen=True)
class BatchSummary:
    """Cumulative p-value-bound bins per hypothesis across a batch."""

    n_experiments: int
    n_total: int
    mode: str
    thresholds: tuple[float, ...]
    per_hypothesis: dict
    records: tuple[dict, ...]
    rng_family: str = RNG_FAMILY
    seed_derivation: str = SEED_DERIVATION
    base_seed: int = 0

    def to_json_dict(self) -> dict:
        return {
            "n_experiments": self.n_experiments,
            "n_total": self.n_total,
            "mode": self.mode,
            "thresholds": list(self.thresholds),
            "per_hypothesis": self.per_hypothesis,
            "rng_family": self.rng_family,
            "seed_derivation": self.seed_derivation,
            "base_seed": self.base_seed,
        }

    def render_table(self) -> str:
        """Cumulative-bin table: one row per hypothesis."""
        headers = [f"<= {t:g}" for t in self.thresholds] + ["trivial"]
        lines = ["hypothesis\t" + "\t".join(headers)]
        for name, row in self.per_hypothesis.items():
            cells = [f"{row['fraction_le'][f'{t:g}']:.3f}" for t in self.thresholds]
            cells.append(f"{row['fraction_trivial']:.3f}")
            lines.append(name + "\t" + "\t".join(cells))
        return "\n".join(lines)


def _run_one_experiment(args) -> list[dict]:
    spec, dist, n_total, cfgs, e = args
    exp_spec = replace(spec, seed=spec.seed ^ e)
    seq = sample_trials(exp_spec, dist, n_total)
    out = []
    for cfg in cfgs:
        report = analyze_sequence(seq, cfg)
        out.append({
            "experiment": e,
            "seed": exp_spec.seed,
            "hypothesis": report.hypothesis.value,
            "log10_t": report.log10_t,
            "p_bound": report.p_bound,
            "certified_bound": report.certified_bound,
            "precertification_max": report.precertification_max,
            "divergence_bits": report.divergence_bits,
            "ns_check_max_violation": report.ns_check_max_violation,
        })
    return out


def summarize_records(
    records: Sequence[dict],
    *,
    n_experiments: int,
    n_total: int,
    mode: str,
    base_seed: int,
) -> BatchSummary:
    per_hyp: dict = {}
    for rec in records:
        row = per_hyp.setdefault(rec["hypothesis"], {"p_bounds": []})
        row["p_bounds"].append(rec["p_bound"])
    summary_rows = {}
    for name, row in per_hyp.items():
        ps = np.array(row["p_bounds"])
        n = ps.size
        summary_rows[name] = {
            "n": int(n),
            "fraction_le": {
                f"{t:g}": float(np.mean(ps <= t)) for t in P_BOUND_BINS
            },
            "fraction_trivial": float(np.mean(ps == 1.0)),
            "smallest_p_bound": float(ps.min()),
        }
    return BatchSummary(
        n_experiments=n_experiments,
        n_total=n_total,
        mode=mode,
        thresholds=P_BOUND_BINS,
        per_hypothesis=summary_rows,
        records=tuple(records),
        base_seed=base_seed,
    )


def run_batch(
    spec: SourceSpec,
    dist: InputDistribution,
    n_experiments: int,
    n_total: int,
    cfgs: Sequence[AnalysisConfig],
    n_jobs: int = 1,
) -> BatchSummary:
    """Simulate and analyze a batch of independent Bell tests.

    Experiment e samples with derived seed ``spec.seed XOR e`` and runs each
    configured analysis; the summary is a deterministic reduction over
    experiment index regardless of execution order.
    """
    if n_experiments < 1:
        raise ValidationError("n_experiments must be >= 1")
    tasks = [(spec, dist, n_total, tuple(cfgs), e) for e in range(n_experiments)]
    if n_jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one_experiment, tasks, chunksize=1))
    else:
        results = [_run_one_experiment(t) for t in tasks]
    records = [rec for group in results for rec in group]
    return summarize_records(
        records,
        n_experiments=n_experiments,
        n_total=n_total,
        mode=spec.mode,
        base_seed=spec.seed,
    )
