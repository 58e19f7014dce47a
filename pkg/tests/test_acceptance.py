"""One test per acceptance criterion; a summary line per criterion is printed by conftest."""

import math
import random
import time

import numpy as np
import pytest

import oracles
from builders import estimates_for, point, simple_scenario
from riskcast import data_path
from riskcast.analysis import (
    borgonovo_delta,
    efficacy_uplift,
    shapley_log_attribution,
    tactic_shapley,
    volume_uplift,
)
from riskcast.distfit import QuantileElicitation, fit_beta, fit_pert
from riskcast.elicitation import EstimateSet
from riskcast.engine import SamplerConfig, sample_scenario
from riskcast.kri import (
    Benchmark,
    SolveReport,
    evidence_at_level,
    map_overall_score,
    map_solves_to_evidence,
    rank_sum,
    triangular_cutoff,
)
from riskcast.riskmodel import Scenario, chain_success_probability, total_risk

# most likely values of the eleven included tactics, reconnaissance first
BASELINE_TACTIC_MODES = (1.0, 1.0, 0.60, 0.50, 0.70, 0.85, 0.65, 0.90, 0.90, 0.85, 0.80)


@pytest.fixture(scope="module")
def fixture():
    scenario = Scenario.load(data_path("oc3_sme_ransomware.json"))
    est = EstimateSet.load_many([data_path("baseline_estimates.json"), data_path("uplift_estimates.json")])
    bb = Benchmark.load(data_path("bountybench.json"))
    cy = Benchmark.load(data_path("cybench.json"))
    return scenario, est, bb, cy


def sota(bb, cy):
    return [evidence_at_level(bb, "paddle"), evidence_at_level(cy, "Labyrinth Linguist")]


def test_criterion_1_baseline_reproduction(fixture):
    scenario, est, _, _ = fixture
    modes = {r.factor_id: r.elicitation.best_guess for r in est.records if r.level == "baseline"}
    chain = [
        1.0 if node.held_at_one else modes[node.probability.factor_id]
        for node in scenario.included_tactics()
    ]
    p = chain_success_probability(chain)
    assert list(chain) == list(BASELINE_TACTIC_MODES)
    assert abs(p * 100 - 6.4) <= 0.05
    assert total_risk(10, 200, 0.064, 0.8e6) == pytest.approx(1.024e8, rel=1e-12)
    assert round(total_risk(10, 200, 0.064, 0.8e6) / 1e6) == 102


def test_criterion_2_evidence_mapping(fixture):
    _, _, bb, cy = fixture
    solves = SolveReport.from_ranks(bb, [3, 5, 29, 35, 41])
    assert rank_sum(solves, bb) == 113
    assert triangular_cutoff(113) == 14
    assert map_solves_to_evidence(solves, bb).level == "paddle"
    assert map_solves_to_evidence(solves, bb.with_subset("human")).level == "librechat"
    assert map_overall_score(0.55, 37, cy).level == "Labyrinth Linguist"


def test_criterion_3_fit_round_trip():
    rng = random.Random(2024)
    cases = []
    while len(cases) < 200:
        # ground truths whose mode falls outside the central 90% cannot be elicited, so are redrawn
        if len(cases) % 2 == 0:
            a, b = rng.uniform(1.3, 12), rng.uniform(1.3, 12)
            mode = (a - 1) / (a + b - 2)
            lo, hi = oracles.beta_ppf(a, b, 0.05), oracles.beta_ppf(a, b, 0.95)
            if lo <= mode <= hi:
                cases.append(("probability", QuantileElicitation(mode, lo, hi, 0.9)))
        else:
            lo_ = rng.uniform(0, 100)
            m = lo_ + rng.uniform(1, 500)
            hi_ = m + rng.uniform(1, 500)
            q05, q95 = oracles.pert_ppf(lo_, m, hi_, 0.05), oracles.pert_ppf(lo_, m, hi_, 0.95)
            if q05 <= m <= q95:
                cases.append(("quantity", QuantileElicitation(m, q05, q95, 0.9)))

    start = time.perf_counter()
    fitted = [fit_beta(e) if kind == "probability" else fit_pert(e) for kind, e in cases]
    elapsed = time.perf_counter() - start
    assert elapsed < 30

    for (kind, e), dist in zip(cases, fitted):
        got = dist.ppf(np.array([0.05, 0.95]))
        if kind == "probability":
            assert got == pytest.approx([e.low, e.high], abs=1e-3)
        else:
            assert got == pytest.approx([e.low, e.high], rel=5e-3)


def test_criterion_4_shapley_correctness():
    rng = random.Random(99)
    for _ in range(100):
        base = [rng.uniform(0.01, 100) for _ in range(4)]
        up = [rng.uniform(0.01, 100) for _ in range(4)]
        attr = shapley_log_attribution(base, up)
        assert attr.phi == pytest.approx(oracles.permutation_shapley(base, up), abs=1e-10)
        assert math.fsum(abs(p) for p in attr.phi_norm) == pytest.approx(100.0, abs=1e-9)
    for _ in range(20):
        names = [f"t{i}" for i in range(5)]
        base = [rng.uniform(0.01, 1) for _ in names]
        up = [rng.uniform(0.01, 1) for _ in names]
        attr = tactic_shapley(dict(zip(names, base)), dict(zip(names, up)))
        assert attr.phi == pytest.approx(oracles.permutation_shapley(base, up), abs=1e-10)
        assert math.fsum(abs(p) for p in attr.phi_norm) == pytest.approx(100.0, abs=1e-9)


def test_criterion_5_delta_oracle():
    rng = np.random.default_rng(5)
    n = 100_000
    x = rng.permutation(np.repeat([0.0, 1.0], n // 2))
    oracle = oracles.discrete_delta(x.tolist(), x.tolist())
    assert oracle == 0.5
    assert abs(borgonovo_delta(x, x.copy()).delta - oracle) <= 0.1
    indep = borgonovo_delta(rng.uniform(size=n), rng.normal(size=n))
    assert indep.delta <= 0.05


def test_criterion_6_mixture_sampling(fixture):
    s = simple_scenario()
    common = {"attempts": point(1), "harm": point(1), "p_ia": point(1), "p_ex": point(1)}
    est = estimates_for(s, {"a": {"actors": point(100), **common}, "b": {"actors": point(200), **common}})
    n = 100_000
    mix = sample_scenario(s, est, [], SamplerConfig(n, seed=11))
    assert abs(mix.n_actors.mean() - 150) <= 3 * 50 / math.sqrt(n)

    scenario, est, bb, cy = fixture
    start = time.perf_counter()
    a = sample_scenario(scenario, est, sota(bb, cy), SamplerConfig(n, seed=42, threads=4))
    elapsed = time.perf_counter() - start
    b = sample_scenario(scenario, est, sota(bb, cy), SamplerConfig(n, seed=42, threads=1))
    assert elapsed < 10
    assert np.array_equal(a.expert_index, b.expert_index)
    assert list(a.columns) == list(b.columns)
    for k in a.columns:
        assert np.array_equal(a[k], b[k]), k


def test_criterion_7_order_of_magnitude(fixture):
    scenario, est, bb, cy = fixture
    batch = sample_scenario(scenario, est, sota(bb, cy), SamplerConfig(100_000, seed=42))
    q05, q95 = np.quantile(batch.p_success, [0.05, 0.95])
    assert q05 <= 0.1513 and 0.0044 <= q95
    reference_mean = 1.033e8
    ratio = float(np.mean(batch.total_risk)) / reference_mean
    assert 0.1 <= ratio <= 10


def test_criterion_8_directional(fixture):
    scenario, est, bb, cy = fixture
    cfg = SamplerConfig(100_000, seed=42)
    base = sample_scenario(scenario, est, [], cfg)
    up = sample_scenario(scenario, est, sota(bb, cy), cfg)
    assert efficacy_uplift(up, base).ratio > 1.0
    assert volume_uplift(up, base).ratio > 1.0
