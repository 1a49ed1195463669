"""Acceptance gate: one test per release criterion, with pinned tolerances.

The heavyweight batches (null validity and the two band-reproduction runs)
are computed once as module-scoped fixtures; the ratio-safety criterion
re-examines every record those batches produced.
"""
import math
import time

import numpy as np
import pytest

from pbrtest import (
    AnalysisConfig,
    Behavior,
    CountsTable,
    InputDistribution,
    RatioTable,
    SetKind,
    SourceSpec,
    bell_value,
    build_ratios,
    certify_ratios,
    chsh_functional,
    hypothesis_set,
    local_vertices,
    log_statistic,
    membership,
    mixed_source,
    nosignaling_vertices,
    pr_box,
    project_kl,
    run_batch,
    visibility,
    white_noise,
)
from test_projection import projection_oracle
from test_sets import enumerate_ns_vertices_oracle

UNIFORM = InputDistribution.uniform()

# a source strictly inside the local polytope: the canonical vertex noise
# averages to white noise, so this is the isotropic point at 0.99*0.45
LOCAL_SOURCE = dict(v=0.45, epsilon=0.01)

ALL_KINDS = (SetKind.LOCAL, SetKind.NOSIGNALING, SetKind.NPA1, SetKind.ALMOST_QUANTUM)


@pytest.fixture(scope="module")
def null_batch():
    cfgs = [AnalysisConfig(hypothesis=k) for k in ALL_KINDS]
    return run_batch(
        SourceSpec(seed=1000, **LOCAL_SOURCE), UNIFORM, 300, 10_000, cfgs, n_jobs=4
    )


# Split used for the band-reproduction runs.  2e5 training trials are plenty
# to stabilize the certified ratios at this scale, and the longer test stretch
# both sharpens the power against the almost-quantum hypothesis and gives the
# null drift of the nonsignaling statistic room to dominate its fluctuations,
# which is what makes most of those bounds come out exactly trivial.
BAND_TRAIN_FRACTION = 0.2


@pytest.fixture(scope="module")
def table1_batch():
    cfgs = [
        AnalysisConfig(
            hypothesis=SetKind.NOSIGNALING, train_fraction=BAND_TRAIN_FRACTION
        ),
        AnalysisConfig(
            hypothesis=SetKind.ALMOST_QUANTUM, train_fraction=BAND_TRAIN_FRACTION
        ),
    ]
    return run_batch(
        SourceSpec(seed=2000), UNIFORM, 100, 1_000_000, cfgs, n_jobs=4
    )


@pytest.fixture(scope="module")
def table2_batch():
    cfgs = [
        AnalysisConfig(
            hypothesis=SetKind.NOSIGNALING, train_fraction=BAND_TRAIN_FRACTION
        ),
        AnalysisConfig(
            hypothesis=SetKind.ALMOST_QUANTUM, train_fraction=BAND_TRAIN_FRACTION
        ),
    ]
    return run_batch(
        SourceSpec(mode="trialwise", seed=3000), UNIFORM, 100, 1_000_000, cfgs, n_jobs=4
    )


def test_criterion_1_vertex_correctness():
    start = time.monotonic()
    local = local_vertices()
    assert len(local) == 16
    chsh = [bell_value(chsh_functional(), v) for v in local.vertices]
    assert max(chsh) == pytest.approx(2.0, abs=1e-12)

    oracle = enumerate_ns_vertices_oracle()
    ns = nosignaling_vertices()
    assert len(ns) == 24
    ours = np.array(sorted(tuple(np.round(v, 9)) for v in ns.matrix))
    assert oracle.shape == (24, 16)
    assert np.allclose(oracle, ours, atol=1e-9)
    assert time.monotonic() - start < 1.0


def test_criterion_2_boundary_visibilities():
    start = time.monotonic()
    pr = pr_box()
    assert visibility(pr, hypothesis_set("local")) == pytest.approx(0.5, abs=1e-6)
    assert visibility(pr, hypothesis_set("q1")) == pytest.approx(0.70711, abs=1e-4)
    assert visibility(pr, hypothesis_set("aq")) == pytest.approx(0.70711, abs=1e-4)
    assert visibility(pr, hypothesis_set("ns")) == pytest.approx(1.0, abs=1e-9)
    assert time.monotonic() - start < 10.0


def test_criterion_3_projection_oracle_equivalence():
    start = time.monotonic()
    oracle = projection_oracle(pr_box(), local_vertices().matrix)
    ours = project_kl(pr_box(), UNIFORM, hypothesis_set("local"))
    assert ours.divergence_bits == pytest.approx(oracle, abs=1e-4)

    # interior points of the local polytope must project onto themselves
    rng = np.random.default_rng(42)
    verts = local_vertices().matrix
    h_local = hypothesis_set("local")
    for _ in range(50):
        w = rng.dirichlet(np.ones(16))
        interior = Behavior(
            (0.5 * w @ verts + 0.5 * white_noise().flat).reshape((2, 2, 2, 2))
        )
        res = project_kl(interior, UNIFORM, h_local)
        assert res.divergence_bits < 1e-8
    assert time.monotonic() - start < 120.0


def test_criterion_4_statistic_identity():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = rng.integers(0, 40, size=(2, 2, 2, 2))
        if n.sum() == 0:
            n[0, 0, 0, 0] = 1
        counts = CountsTable(n)
        r = RatioTable(rng.random((2, 2, 2, 2)) + 0.05)
        # expand the counts into an explicit trial list and accumulate one
        # log-ratio per trial
        cells = [
            (x, y, a, b)
            for x in range(2)
            for y in range(2)
            for a in range(2)
            for b in range(2)
            for _ in range(int(n[x, y, a, b]))
        ]
        per_trial = sum(math.log10(r.r[c]) for c in cells)
        assert log_statistic(r, counts) == pytest.approx(per_trial, abs=1e-12)


def test_criterion_5_null_validity(null_batch):
    src = mixed_source(**LOCAL_SOURCE)
    assert membership(src, hypothesis_set("local")).inside
    by_kind = {}
    for rec in null_batch.records:
        by_kind.setdefault(rec["hypothesis"], []).append(rec["p_bound"])
    n = 300
    for kind in ("local", "ns", "q1", "aq"):
        ps = np.array(by_kind[kind])
        assert ps.size == n
        for q in (0.01, 0.1):
            fraction = float(np.mean(ps <= q))
            allowed = q + 3.0 * math.sqrt(q * (1.0 - q) / n)
            assert fraction <= allowed, (
                f"{kind}: fraction(p<= {q}) = {fraction:.4f} exceeds {allowed:.4f}"
            )


def test_criterion_6_iid_band_reproduction(table1_batch):
    per = table1_batch.per_hypothesis
    assert per["ns"]["fraction_trivial"] >= 0.90
    assert per["aq"]["fraction_le"]["0.01"] >= 0.70


def test_criterion_7_trialwise_band_reproduction(table2_batch):
    per = table2_batch.per_hypothesis
    assert per["ns"]["fraction_trivial"] >= 0.90
    assert per["aq"]["fraction_le"]["0.01"] >= 0.50


def test_criterion_8_ratio_safety(null_batch, table1_batch, table2_batch):
    records = (
        list(null_batch.records)
        + list(table1_batch.records)
        + list(table2_batch.records)
    )
    assert len(records) == 300 * 4 + 100 * 2 + 100 * 2
    excesses = []
    for rec in records:
        assert rec["certified_bound"] <= 1.0 + 1e-12
        assert rec["precertification_max"] is not None
        excesses.append(rec["precertification_max"] - 1.0)
    fraction_ok = float(np.mean(np.array(excesses) < 1e-5))
    assert fraction_ok >= 0.99, f"only {fraction_ok:.3f} of runs below 1e-5 excess"


def test_criterion_9_growth_rate():
    # expected per-trial log10 ratio against the almost-quantum set, from the
    # projection of the exact source behavior (no sampling noise, no shrinkage)
    src = mixed_source(0.72, 0.01)
    h = hypothesis_set("aq")
    proj = project_kl(src, UNIFORM, h)
    rt = certify_ratios(build_ratios(src, proj), UNIFORM, h)
    expected = proj.divergence_bits * math.log10(2.0)
    assert expected > 0

    cell_probs = (0.25 * src.p).reshape(16)
    log_r = np.log10(rt.r.reshape(16))  # source support covers every cell
    rng = np.random.default_rng(77)
    for n_test, n_draws in ((10_000, 8000), (100_000, 800)):
        counts = rng.multinomial(n_test, cell_probs, size=n_draws)
        rates = (counts @ log_r) / n_test
        mean_rate = float(rates.mean())
        assert mean_rate == pytest.approx(expected, rel=0.10), (
            f"N_test={n_test}: mean growth {mean_rate:.3e} vs expected {expected:.3e}"
        )
