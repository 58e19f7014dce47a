import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import enumerate_and_chain
from riskcast import data_path
from riskcast.riskmodel import (
    FactorRole,
    FactorSpec,
    GateKind,
    ProbabilitySource,
    Scenario,
    ScenarioError,
    Tactic,
    TacticNode,
    Technique,
    TechniqueGate,
    chain_success_probability,
    gate_probability,
    risk_breakdown,
    total_risk,
    validate_scenario,
)

from builders import simple_scenario

unit = st.floats(0.0, 1.0, allow_nan=False)


def gate(kind, n, weights=None):
    techs = tuple(Technique(f"T{i}", ProbabilitySource.elicited(f"t{i}")) for i in range(n))
    return TechniqueGate(GateKind(kind), techs, weights)


@pytest.fixture
def fixture_scenario():
    return Scenario.load(data_path("oc3_sme_ransomware.json"))


def test_fixture_scenario_is_valid(fixture_scenario):
    assert validate_scenario(fixture_scenario) == []


def test_fixture_scenario_round_trips(fixture_scenario):
    again = Scenario.from_dict(json.loads(json.dumps(fixture_scenario.to_dict())))
    assert again.to_dict() == fixture_scenario.to_dict()


def test_fixture_excludes_three_tactics(fixture_scenario):
    excluded = {n.tactic for n in fixture_scenario.tactic_chain if not n.included}
    assert excluded == {Tactic.PERSISTENCE, Tactic.DEFENSE_EVASION, Tactic.CREDENTIAL_ACCESS}
    assert len(fixture_scenario.included_tactics()) == 11


def test_duplicate_factor_id_is_reported():
    s = simple_scenario()
    s.quantity_factors.append(FactorSpec("harm", FactorRole.IMPACT))
    problems = validate_scenario(s)
    assert len(problems) == 1 and "'harm'" in problems[0]


def test_choice_weights_not_summing_to_one():
    s = simple_scenario()
    s.tactic_chain.append(TacticNode(Tactic.IMPACT, gate=gate("CHOICE", 2, (0.4, 0.4))))
    problems = validate_scenario(s)
    assert len(problems) == 1 and "sum to 0.8" in problems[0]


def test_other_violations_name_the_element():
    s = simple_scenario(bindings={"p_ia": "bench"})
    s.kri_bindings["ghost"] = "bench"
    s.kri_bindings["p_ex"] = "undeclared"
    s.tactic_chain.append(TacticNode(Tactic.INITIAL_ACCESS, probability=ProbabilitySource.fixed(0.5)))
    s.tactic_chain.append(TacticNode(Tactic.RECONNAISSANCE, held_at_one=True, probability=ProbabilitySource.fixed(0.9)))
    s.tactic_chain.append(TacticNode(Tactic.IMPACT, gate=gate("AND", 1)))
    text = "\n".join(validate_scenario(s))
    for needle in ("'ghost'", "'undeclared'", "'initial_access' appears more than once", "'reconnaissance' is held at one", "at least two techniques"):
        assert needle in text


def test_missing_roles_and_empty_chain():
    s = simple_scenario()
    s.quantity_factors = [f for f in s.quantity_factors if f.role != FactorRole.IMPACT]
    s.tactic_chain = []
    text = "\n".join(validate_scenario(s))
    assert "no impact component" in text and "tactic chain is empty" in text


@pytest.mark.parametrize(
    "kind, probs, expected",
    [("OR", (0.5, 0.5), 0.75), ("AND", (0.9, 0.9, 1.0), 0.81), ("CHOICE", (0.2, 0.8), 0.5)],
)
def test_gate_examples(kind, probs, expected):
    assert gate_probability(gate(kind, len(probs)), probs) == pytest.approx(expected, abs=1e-15)


def test_choice_with_explicit_weights():
    assert gate_probability(gate("CHOICE", 2, (0.25, 0.75)), (0.2, 0.8)) == pytest.approx(0.65)


def test_gate_errors():
    with pytest.raises(ScenarioError):
        gate_probability(gate("AND", 2), (0.5,))
    with pytest.raises(ScenarioError):
        gate_probability(gate("CHOICE", 2, (0.5, 0.6)), (0.5, 0.5))


def test_chain_example_from_baseline_table():
    p = chain_success_probability((1, 1, 0.60, 0.50, 0.70, 0.85, 0.65, 0.90, 0.90, 0.85, 0.80))
    assert p == pytest.approx(0.0639, abs=5e-5)
    assert round(p * 100, 1) == 6.4


def test_chain_identity_and_empty():
    assert chain_success_probability([1.0] * 7) == 1.0
    with pytest.raises(ScenarioError):
        chain_success_probability([])


@settings(max_examples=60, deadline=None)
@given(st.lists(unit, min_size=1, max_size=10))
def test_chain_matches_enumeration(probs):
    assert chain_success_probability(probs) == pytest.approx(enumerate_and_chain(probs), abs=1e-12)


def test_total_risk_examples():
    assert total_risk(10, 200, 0.064, 0.8e6) == pytest.approx(1.024e8, rel=1e-12)
    assert total_risk(10, 200, 0, 0.8e6) == 0
    assert total_risk(1, 1, 1, 12345.5) == 12345.5
    b = risk_breakdown(10, 200, 0.064, 0.8e6)
    assert b.total_risk == b.n_actors * b.n_attempts * b.p_success * b.impact


@given(st.lists(unit, min_size=1, max_size=6))
def test_or_bounds(p):
    v = gate_probability(gate("OR", len(p)), p) if len(p) >= 2 else p[0]
    assert max(p) - 1e-12 <= v <= min(1.0, sum(p)) + 1e-12


@given(st.lists(unit, min_size=2, max_size=6))
def test_and_bound(p):
    assert gate_probability(gate("AND", len(p)), p) <= min(p) + 1e-15


@given(st.lists(unit, min_size=1, max_size=8), st.integers(0, 7), st.floats(0, 1))
def test_chain_monotone(p, i, bump):
    i %= len(p)
    q = list(p)
    q[i] = max(q[i], bump)
    assert chain_success_probability(q) >= chain_success_probability(p)


@given(st.lists(unit, min_size=2, max_size=6), st.randoms())
def test_order_independence(p, rnd):
    q = list(p)
    rnd.shuffle(q)
    assert chain_success_probability(q) == pytest.approx(chain_success_probability(p), abs=1e-15)
    for kind in ("AND", "OR"):
        g = gate(kind, len(p))
        assert gate_probability(g, q) == pytest.approx(gate_probability(g, p), abs=1e-14)


@given(st.floats(0, 1e3), st.floats(0, 1e3), unit, st.floats(0, 1e7), st.floats(0, 10))
def test_total_risk_linear(a, t, p, i, k):
    assert total_risk(k * a, t, p, i) == pytest.approx(k * total_risk(a, t, p, i), rel=1e-12, abs=1e-300)
    assert total_risk(a, t, p, k * i) == pytest.approx(k * total_risk(a, t, p, i), rel=1e-12, abs=1e-300)


def test_vectorized_or_matches_scalar():
    from riskcast.riskmodel import combine_gate

    rng = np.random.default_rng(3)
    probs = rng.random((3, 50))
    g = gate("OR", 3)
    vec = combine_gate(g, probs)
    for j in range(50):
        assert vec[j] == pytest.approx(gate_probability(g, probs[:, j]), abs=1e-15)
