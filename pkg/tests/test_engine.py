import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pbrtest import (
    AnalysisConfig,
    CountsTable,
    InputDistribution,
    RatioTable,
    SetKind,
    SourceSpec,
    TrialSequence,
    analyze_counts_pair,
    analyze_sequence,
    block_adaptive_analyze,
    log_statistic,
    p_bound,
    sample_trials,
    split_trials,
)
from pbrtest.errors import BadSplit, ValidationError

UNIFORM = InputDistribution.uniform()


def sample(seed=0, n=2000, **spec_kwargs):
    return sample_trials(SourceSpec(seed=seed, **spec_kwargs), UNIFORM, n)


class TestAnalysisConfig:
    def test_defaults(self):
        cfg = AnalysisConfig(hypothesis=SetKind.LOCAL)
        assert cfg.resolve_n_est(1000) == 500
        assert cfg.resolve_eta(499) == pytest.approx(1.0 / 500.0)

    def test_explicit_n_est_wins(self):
        cfg = AnalysisConfig(hypothesis=SetKind.LOCAL, n_est=123)
        assert cfg.resolve_n_est(10_000) == 123

    def test_explicit_eta_wins(self):
        cfg = AnalysisConfig(hypothesis=SetKind.LOCAL, eta=0.01)
        assert cfg.resolve_eta(10) == 0.01

    def test_validation(self):
        with pytest.raises(ValidationError):
            AnalysisConfig(hypothesis=SetKind.LOCAL, n_est=0)
        with pytest.raises(ValidationError):
            AnalysisConfig(hypothesis=SetKind.LOCAL, train_fraction=1.0)
        with pytest.raises(ValidationError):
            AnalysisConfig(hypothesis=SetKind.LOCAL, eta=0.7)
        with pytest.raises(ValidationError):
            AnalysisConfig(hypothesis=SetKind.LOCAL, adaptive_block=0)


class TestSplitTrials:
    def test_prefix_suffix(self):
        seq = sample(n=100)
        train, test = split_trials(seq, 30)
        assert len(train) == 30 and len(test) == 70
        assert list(train.i) == list(range(1, 31))
        assert list(test.i) == list(range(31, 101))

    def test_bad_split_raises(self):
        seq = sample(n=10)
        for n_est in (0, 10, 11, -3):
            with pytest.raises(BadSplit):
                split_trials(seq, n_est)


class TestLogStatistic:
    def test_counts_equals_trialwise_sum(self):
        # aggregating the test trials into counts must not change the value
        rng = np.random.default_rng(1)
        seq = sample(seed=5, n=500)
        r = RatioTable(rng.random((2, 2, 2, 2)) + 0.2)
        per_trial = sum(
            math.log10(r.r[seq.x[k], seq.y[k], seq.a[k], seq.b[k]])
            for k in range(len(seq))
        )
        assert log_statistic(r, seq) == pytest.approx(per_trial, abs=1e-10)
        assert log_statistic(r, CountsTable.from_trials(seq)) == pytest.approx(
            per_trial, abs=1e-10
        )

    def test_zero_ratio_on_observed_cell(self):
        seq = sample(n=100)
        r = np.ones((2, 2, 2, 2))
        r[tuple(int(v[0]) for v in (seq.x, seq.y, seq.a, seq.b))] = 0.0
        assert log_statistic(RatioTable(r), seq) == -math.inf

    def test_zero_ratio_on_unobserved_cell_is_fine(self):
        seq = TrialSequence.from_outcomes([0, 0], [0, 0], [0, 0], [0, 0])
        r = np.ones((2, 2, 2, 2))
        r[1, 1, 1, 1] = 0.0
        r[0, 0, 0, 0] = 2.0
        assert log_statistic(RatioTable(r), seq) == pytest.approx(2 * math.log10(2))


class TestPBound:
    def test_trivial_cases(self):
        assert p_bound(0.0) == 1.0
        assert p_bound(-5.0) == 1.0
        assert p_bound(-math.inf) == 1.0
        assert p_bound(math.nan) == 1.0

    def test_basic_values(self):
        assert p_bound(2.0) == pytest.approx(1e-2)
        assert p_bound(10.0) == pytest.approx(1e-10)

    def test_clamped_far_beyond_double_range(self):
        p = p_bound(1e9)
        assert 0.0 < p <= 1e-300

    @given(st.floats(-100, 400), st.floats(0, 100))
    def test_monotone_nonincreasing(self, t, dt):
        assert p_bound(t + dt) <= p_bound(t)


class TestAnalyzeSequence:
    def test_deterministic(self):
        seq = sample(seed=9, n=3000)
        cfg = AnalysisConfig(hypothesis=SetKind.LOCAL)
        a = analyze_sequence(seq, cfg)
        b = analyze_sequence(seq, cfg)
        assert a.log10_t == b.log10_t
        assert a.p_bound == b.p_bound
        assert a.to_json_dict() == b.to_json_dict()

    def test_nonlocal_source_rejects_local(self):
        seq = sample(seed=2, n=4000, v=0.9, epsilon=0.0)
        rep = analyze_sequence(seq, AnalysisConfig(hypothesis=SetKind.LOCAL))
        assert rep.p_bound < 1e-6
        assert rep.log10_t > 6.0

    def test_ns_source_keeps_ns_trivial(self):
        seq = sample(seed=2, n=4000, v=0.9, epsilon=0.0)
        rep = analyze_sequence(seq, AnalysisConfig(hypothesis=SetKind.NOSIGNALING))
        assert rep.p_bound == 1.0

    def test_report_shape(self):
        seq = sample(seed=3, n=1000)
        rep = analyze_sequence(seq, AnalysisConfig(hypothesis=SetKind.NPA1))
        d = rep.to_json_dict()
        assert set(d) == {
            "hypothesis",
            "n_est",
            "n_test",
            "log10_t",
            "p_bound",
            "certified_bound",
            "divergence_bits",
            "ns_check_max_violation",
            "assumed_input_distribution",
            "shrinkage_eta",
            "adaptive_block",
            "precertification_max",
            "fallback_settings",
            "counts_pair_mode",
        }
        assert d["hypothesis"] == "q1"
        assert d["n_est"] == 500 and d["n_test"] == 500
        assert d["counts_pair_mode"] is False
        assert 0.0 < d["p_bound"] <= 1.0
        assert d["certified_bound"] <= 1.0 + 1e-12
        assert d["shrinkage_eta"] == pytest.approx(1.0 / 501.0)

    def test_train_fraction_controls_split(self):
        seq = sample(seed=3, n=1000)
        rep = analyze_sequence(
            seq, AnalysisConfig(hypothesis=SetKind.LOCAL, train_fraction=0.2)
        )
        assert rep.n_est == 200 and rep.n_test == 800

    def test_too_short_sequence(self):
        seq = sample(n=1)
        with pytest.raises(BadSplit):
            analyze_sequence(seq, AnalysisConfig(hypothesis=SetKind.LOCAL))


class TestAnalyzeCountsPair:
    def test_matches_sequence_analysis(self):
        # same data, aggregated: identical statistic and p-value bound
        seq = sample(seed=12, n=2000)
        cfg = AnalysisConfig(hypothesis=SetKind.LOCAL)
        rep_seq = analyze_sequence(seq, cfg)
        train, test = split_trials(seq, 1000)
        rep_cts = analyze_counts_pair(
            CountsTable.from_trials(train), CountsTable.from_trials(test), cfg
        )
        assert rep_cts.log10_t == pytest.approx(rep_seq.log10_t, abs=1e-10)
        assert rep_cts.p_bound == pytest.approx(rep_seq.p_bound, rel=1e-9)
        assert rep_cts.counts_pair_mode is True
        assert rep_cts.n_est == 1000 and rep_cts.n_test == 1000

    def test_zero_count_setting_fallback_recorded(self):
        n = np.zeros((2, 2, 2, 2), dtype=int)
        n[0, 0, 0, 0] = 50
        n[0, 1, 0, 0] = 50
        n[1, 0, 0, 0] = 50
        test = np.ones((2, 2, 2, 2), dtype=int)
        rep = analyze_counts_pair(
            CountsTable(n),
            CountsTable(test),
            AnalysisConfig(hypothesis=SetKind.LOCAL),
        )
        assert (1, 1) in rep.fallback_settings


class TestBlockAdaptive:
    def test_single_block_matches_fixed_split(self):
        seq = sample(seed=6, n=2000)
        fixed = analyze_sequence(seq, AnalysisConfig(hypothesis=SetKind.LOCAL))
        adaptive = analyze_sequence(
            seq, AnalysisConfig(hypothesis=SetKind.LOCAL, adaptive_block=1000)
        )
        assert adaptive.adaptive_block == 1000
        assert adaptive.log10_t == pytest.approx(fixed.log10_t, abs=1e-9)

    def test_multi_block_valid_report(self):
        seq = sample(seed=6, n=2000, v=0.9, epsilon=0.0)
        rep = analyze_sequence(
            seq, AnalysisConfig(hypothesis=SetKind.LOCAL, adaptive_block=250)
        )
        assert rep.n_est == 1000 and rep.n_test == 1000
        assert rep.certified_bound <= 1.0 + 1e-12
        assert 0.0 < rep.p_bound < 1e-4  # strongly nonlocal source

    def test_direct_entry_point_requires_block(self):
        seq = sample(n=100)
        with pytest.raises(ValidationError):
            block_adaptive_analyze(seq, AnalysisConfig(hypothesis=SetKind.LOCAL))
