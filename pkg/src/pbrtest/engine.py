"""The hypothesis-testing pipeline.

Train/test splitting, the log-domain test statistic, the p-value bound, and
the three analysis entry points (trial sequence, counts pair, block-adaptive).
The statistic is accumulated entirely in log10 domain; the product-form
statistic itself is never materialized.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BadSplit, ValidationError
from .projection import RatioTable, build_ratios, certify_ratios, project_kl
from .scenario import (
    Behavior,
    CountsTable,
    InputDistribution,
    TrialSequence,
    frequencies_from_counts,
    is_nonsignaling,
    white_noise,
)
from .sets import HypothesisSet, SetKind, hypothesis_set

# Exponent clamp keeping p_bound strictly positive in double precision.
_MAX_EXPONENT = 307.0


@dataclass(frozen=True)
class AnalysisConfig:
    """Declared configuration of one analysis run.

    The input distribution is an assumption recorded in every report, never
    estimated from the data.  eta=None resolves to the default shrinkage
    1/(n_est+1); n_est=None resolves to floor(N_total * train_fraction).
    """

    hypothesis: SetKind
    input_distribution: InputDistribution = field(
        default_factory=InputDistribution.uniform
    )
    n_est: int | None = None
    train_fraction: float = 0.5
    eta: float | None = None
    adaptive_block: int | None = None
    tol: float = 1e-9

    def __post_init__(self):
        if self.n_est is not None and self.n_est < 1:
            raise ValidationError("n_est must be >= 1")
        if not (0.0 < self.train_fraction < 1.0):
            raise ValidationError("train_fraction must be in (0,1)")
        if self.eta is not None and not (0.0 <= self.eta < 0.5):
            raise ValidationError("shrinkage eta must be in [0, 0.5)")
        if self.adaptive_block is not None and self.adaptive_block < 1:
            raise ValidationError("adaptive_block must be >= 1")

    def resolve_n_est(self, n_total: int) -> int:
        if self.n_est is not None:
            return self.n_est
        return max(1, int(math.floor(n_total * self.train_fraction)))

    def resolve_eta(self, n_est: int) -> float:
        if self.eta is not None:
            return self.eta
        return 1.0 / (n_est + 1)


@dataclass(frozen=True)
class AnalysisReport:
    """Everything a reader needs to audit one hypothesis test."""

    hypothesis: SetKind
    n_est: int
    n_test: int
    log10_t: float
    p_bound: float
    certified_bound: float
    divergence_bits: float
    ns_check_max_violation: float
    assumed_input_distribution: list[list[float]]
    shrinkage_eta: float
    adaptive_block: int | None
    precertification_max: float | None = None
    fallback_settings: tuple[tuple[int, int], ...] = ()
    counts_pair_mode: bool = False
    ratios: RatioTable | None = field(default=None, compare=False)

    def to_json_dict(self) -> dict:
        return {
            "hypothesis": self.hypothesis.value,
            "n_est": self.n_est,
            "n_test": self.n_test,
            "log10_t": self.log10_t,
            "p_bound": self.p_bound,
            "certified_bound": self.certified_bound,
            "divergence_bits": self.divergence_bits,
            "ns_check_max_violation": self.ns_check_max_violation,
            "assumed_input_distribution": self.assumed_input_distribution,
            "shrinkage_eta": self.shrinkage_eta,
            "adaptive_block": self.adaptive_block,
            "precertification_max": self.precertification_max,
            "fallback_settings": [list(s) for s in self.fallback_settings],
            "counts_pair_mode": self.counts_pair_mode,
        }


def split_trials(seq: TrialSequence, n_est: int) -> tuple[TrialSequence, TrialSequence]:
    """Order-preserving prefix/suffix split into training and test data."""
    if not (0 < n_est < len(seq)):
        raise BadSplit(
            f"n_est must satisfy 0 < n_est < {len(seq)}, got {n_est}"
        )
    return seq.slice(0, n_est), seq.slice(n_est, len(seq))


def log_statistic(rt: RatioTable, test: TrialSequence | CountsTable) -> float:
    """log10 of the product of ratio values over the test data.

    Returns -inf when a cell with positive test counts carries ratio zero.
    """
    if isinstance(test, TrialSequence):
        counts = CountsTable.from_trials(test)
    else:
        counts = test
    n = counts.n.astype(float)
    active = n > 0
    if np.any(active & (rt.r == 0.0)):
        return -math.inf
    return float(np.sum(n[active] * np.log10(rt.r[active])))


def p_bound(log10_t: float) -> float:
    """p-value upper bound min(1/t, 1) from the log10 statistic.

    Clamped to the smallest positive normal power of ten so the bound stays
    in (0, 1] even for statistics far beyond double-precision range.
    """
    if not (log10_t > 0.0):  # also covers nan/-inf -> trivial bound
        return 1.0
    return 10.0 ** (-min(log10_t, _MAX_EXPONENT))


def _train_frequencies(
    counts: CountsTable, cfg: AnalysisConfig, n_est: int
) -> tuple[Behavior, Behavior, float, tuple[tuple[int, int], ...], float]:
    """Frequencies, shrunk frequencies, eta, fallback flags, and NS violation."""
    freq, fallback = frequencies_from_counts(counts, uniform_fallback=True)
    ns = is_nonsignaling(freq)
    eta = cfg.resolve_eta(n_est)
    shrunk = freq.mix(white_noise(), 1.0 - eta) if eta > 0 else freq
    return freq, shrunk, eta, fallback, ns.max_violation


def _build_certified_ratios(
    shrunk: Behavior, cfg: AnalysisConfig, h: HypothesisSet
) -> tuple[RatioTable, float]:
    proj = project_kl(shrunk, cfg.input_distribution, h, tol=cfg.tol)
    rt = certify_ratios(build_ratios(shrunk, proj), cfg.input_distribution, h)
    return rt, proj.divergence_bits


def analyze_counts_pair(
    train: CountsTable, test: CountsTable, cfg: AnalysisConfig
) -> AnalysisReport:
    """Run the pipeline on a pre-aggregated train/test counts pair.

    Used when only per-cell totals are available; the report flags that the
    trial ordering was unavailable.  The input distribution is the declared
    assumption from the configuration.
    """
    h = hypothesis_set(cfg.hypothesis)
    n_est = train.n_total
    _, shrunk, eta, fallback, ns_viol = _train_frequencies(train, cfg, n_est)
    rt, divergence = _build_certified_ratios(shrunk, cfg, h)
    log10_t = log_statistic(rt, test)
    return AnalysisReport(
        hypothesis=cfg.hypothesis,
        n_est=n_est,
        n_test=test.n_total,
        log10_t=log10_t,
        p_bound=p_bound(log10_t),
        certified_bound=rt.certified_bound,
        divergence_bits=divergence,
        ns_check_max_violation=ns_viol,
        assumed_input_distribution=cfg.input_distribution.to_list(),
        shrinkage_eta=eta,
        adaptive_block=None,
        precertification_max=rt.precertification_max,
        fallback_settings=fallback,
        counts_pair_mode=True,
        ratios=rt,
    )


def analyze_sequence(seq: TrialSequence, cfg: AnalysisConfig) -> AnalysisReport:
    """Full pipeline on a time-ordered trial sequence.

    Split, train frequencies with shrinkage, information projection, ratio
    construction and certification, log statistic on the test trials, p-value
    bound.
    """
    if cfg.adaptive_block is not None:
        return block_adaptive_analyze(seq, cfg)
    n_est = cfg.resolve_n_est(len(seq))
    train, test = split_trials(seq, n_est)
    h = hypothesis_set(cfg.hypothesis)
    counts = CountsTable.from_trials(train)
    _, shrunk, eta, fallback, ns_viol = _train_frequencies(counts, cfg, n_est)
    rt, divergence = _build_certified_ratios(shrunk, cfg, h)
    log10_t = log_statistic(rt, test)
    return AnalysisReport(
        hypothesis=cfg.hypothesis,
        n_est=n_est,
        n_test=len(test),
        log10_t=log10_t,
        p_bound=p_bound(log10_t),
        certified_bound=rt.certified_bound,
        divergence_bits=divergence,
        ns_check_max_violation=ns_viol,
        assumed_input_distribution=cfg.input_distribution.to_list(),
        shrinkage_eta=eta,
        adaptive_block=None,
        precertification_max=rt.precertification_max,
        fallback_settings=fallback,
        ratios=rt,
    )


def block_adaptive_analyze(seq: TrialSequence, cfg: AnalysisConfig) -> AnalysisReport:
    """Rebuild the ratio table before each block of test trials.

    Block k's ratios are built from all trials strictly preceding the block
    and certified before the block's data is consumed, so validity of the
    accumulated statistic is preserved.
    """
    block = cfg.adaptive_block
    if block is None or block < 1:
        raise ValidationError("block_adaptive_analyze requires adaptive_block >= 1")
    n_est = cfg.resolve_n_est(len(seq))
    if not (0 < n_est < len(seq)):
        raise BadSplit(f"n_est must satisfy 0 < n_est < {len(seq)}, got {n_est}")
    h = hypothesis_set(cfg.hypothesis)
    n_total = len(seq)
    log10_t = 0.0
    first_divergence = None
    first_eta = None
    worst_certified = 1.0
    worst_precert = None
    fallback_all: set[tuple[int, int]] = set()
    ns_viol_first = None
    n_test = n_total - n_est
    start = n_est
    while start < n_total:
        stop = min(start + block, n_total)
        counts = CountsTable.from_trials(seq.slice(0, start))
        _, shrunk, eta, fallback, ns_viol = _train_frequencies(counts, cfg, start)
        rt, divergence = _build_certified_ratios(shrunk, cfg, h)
        log10_t += log_statistic(rt, seq.slice(start, stop))
        if first_divergence is None:
            first_divergence, first_eta, ns_viol_first = divergence, eta, ns_viol
        worst_certified = min(worst_certified, rt.certified_bound)
        if rt.precertification_max is not None:
            worst_precert = (
                rt.precertification_max
                if worst_precert is None
                else max(worst_precert, rt.precertification_max)
            )
        fallback_all.update(fallback)
        start = stop
    return AnalysisReport(
        hypothesis=cfg.hypothesis,
        n_est=n_est,
        n_test=n_test,
        log10_t=log10_t,
        p_bound=p_bound(log10_t),
        certified_bound=worst_certified,
        divergence_bits=first_divergence,
        ns_check_max_violation=ns_viol_first,
        assumed_input_distribution=cfg.input_distribution.to_list(),
        shrinkage_eta=first_eta,
        adaptive_block=block,
        precertification_max=worst_precert,
        fallback_settings=tuple(sorted(fallback_all)),
    )
