"""Scenario schema and the deterministic risk arithmetic.

A scenario is a chain of MITRE ATT&CK tactics, each of which must succeed for
the attack to succeed, combined with the yearly attack volume (actors times
attempts per actor) and the harm per successful attack.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

WEIGHT_SUM_TOL = 1e-9


class ScenarioError(ValueError):
    """Raised for malformed scenario documents or bad gate inputs."""


class Tactic(str, Enum):
    RECONNAISSANCE = "reconnaissance"
    RESOURCE_DEVELOPMENT = "resource_development"
    INITIAL_ACCESS = "initial_access"
    EXECUTION = "execution"
    PERSISTENCE = "persistence"
    PRIVILEGE_ESCALATION = "privilege_escalation"
    DEFENSE_EVASION = "defense_evasion"
    CREDENTIAL_ACCESS = "credential_access"
    DISCOVERY = "discovery"
    LATERAL_MOVEMENT = "lateral_movement"
    COLLECTION = "collection"
    COMMAND_AND_CONTROL = "command_and_control"
    EXFILTRATION = "exfiltration"
    IMPACT = "impact"

    @property
    def attack_id(self) -> str:
        return TACTIC_IDS[self]


TACTIC_IDS = {
    Tactic.RECONNAISSANCE: "TA0043",
    Tactic.RESOURCE_DEVELOPMENT: "TA0042",
    Tactic.INITIAL_ACCESS: "TA0001",
    Tactic.EXECUTION: "TA0002",
    Tactic.PERSISTENCE: "TA0003",
    Tactic.PRIVILEGE_ESCALATION: "TA0004",
    Tactic.DEFENSE_EVASION: "TA0005",
    Tactic.CREDENTIAL_ACCESS: "TA0006",
    Tactic.DISCOVERY: "TA0007",
    Tactic.LATERAL_MOVEMENT: "TA0008",
    Tactic.COLLECTION: "TA0009",
    Tactic.COMMAND_AND_CONTROL: "TA0011",
    Tactic.EXFILTRATION: "TA0010",
    Tactic.IMPACT: "TA0040",
}


class ActorClass(str, Enum):
    OC1 = "OC1"
    OC2 = "OC2"
    OC3 = "OC3"
    OC4 = "OC4"
    OC5 = "OC5"


class GateKind(str, Enum):
    AND = "AND"
    OR = "OR"
    CHOICE = "CHOICE"


class FactorRole(str, Enum):
    ACTORS = "actors"
    ATTEMPTS = "attempts_per_actor_per_year"
    IMPACT = "impact"


@dataclass(frozen=True)
class ProbabilitySource:
    """Where a probability comes from: an elicited factor or a fixed value."""

    kind: str  # "elicited" | "fixed"
    factor_id: str | None = None
    value: float | None = None

    @classmethod
    def elicited(cls, factor_id: str) -> ProbabilitySource:
        return cls("elicited", factor_id=factor_id)

    @classmethod
    def fixed(cls, value: float) -> ProbabilitySource:
        return cls("fixed", value=float(value))

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "fixed":
            return {"source": "fixed", "value": self.value}
        return {"source": "elicited", "factor_id": self.factor_id}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ProbabilitySource:
        kind = d.get("source", "elicited")
        if kind == "fixed":
            return cls.fixed(d["value"])
        if kind == "elicited":
            return cls.elicited(d["factor_id"])
        raise ScenarioError(f"unknown probability source {kind!r}")


@dataclass(frozen=True)
class Technique:
    technique_id: str
    probability: ProbabilitySource


@dataclass(frozen=True)
class TechniqueGate:
    kind: GateKind
    techniques: tuple[Technique, ...]
    choice_weights: tuple[float, ...] | None = None


@dataclass(frozen=True)
class TacticNode:
    tactic: Tactic
    included: bool = True
    held_at_one: bool = False
    held_at_baseline: bool = False
    gate: TechniqueGate | None = None
    probability: ProbabilitySource | None = None

    def factor_ids(self) -> list[str]:
        """Elicited factor ids feeding this tactic's success term."""
        if not self.included or self.held_at_one:
            return []
        if self.gate is not None:
            return [
                t.probability.factor_id
                for t in self.gate.techniques
                if t.probability.kind == "elicited"
            ]
        if self.probability is not None and self.probability.kind == "elicited":
            return [self.probability.factor_id]
        return []


@dataclass(frozen=True)
class FactorSpec:
    """A quantity factor: actor count, attempt rate or one impact component.

    An impact component may be ``weighted_by`` a probability modifier, so the
    component enters the per-attack harm as ``modifier * value`` (for example a
    ransom amount weighted by the probability that the ransom is paid).
    """

    id: str
    role: FactorRole
    label: str = ""
    unit: str = ""
    weighted_by: str | None = None


@dataclass(frozen=True)
class ModifierSpec:
    """A probability factor that scales impact components but is not a tactic."""

    id: str
    label: str = ""
    technique_id: str | None = None


@dataclass
class Scenario:
    id: str
    actor_class: ActorClass
    target_label: str
    vector_label: str
    quantity_factors: list[FactorSpec]
    tactic_chain: list[TacticNode]
    kri_bindings: dict[str, str] = field(default_factory=dict)
    benchmarks: list[str] = field(default_factory=list)
    impact_modifiers: list[ModifierSpec] = field(default_factory=list)
    baseline: str | None = None
    currency: str = "USD"

    # -- factor lookups ---------------------------------------------------
    def factors_with_role(self, role: FactorRole) -> list[FactorSpec]:
        return [f for f in self.quantity_factors if f.role == role]

    @property
    def actors_factor(self) -> FactorSpec:
        return self.factors_with_role(FactorRole.ACTORS)[0]

    @property
    def attempts_factor(self) -> FactorSpec:
        return self.factors_with_role(FactorRole.ATTEMPTS)[0]

    @property
    def impact_factors(self) -> list[FactorSpec]:
        return self.factors_with_role(FactorRole.IMPACT)

    def included_tactics(self) -> list[TacticNode]:
        return [t for t in self.tactic_chain if t.included]

    def probability_factor_ids(self) -> list[str]:
        ids: list[str] = []
        for node in self.tactic_chain:
            ids.extend(node.factor_ids())
        ids.extend(m.id for m in self.impact_modifiers)
        return ids

    def elicited_factor_ids(self) -> list[str]:
        """Every factor that needs estimates: quantities first, then probabilities."""
        return [f.id for f in self.quantity_factors] + self.probability_factor_ids()

    def quantity_factor_ids(self) -> set[str]:
        return {f.id for f in self.quantity_factors}

    def held_at_baseline_ids(self) -> set[str]:
        held: set[str] = set()
        for node in self.tactic_chain:
            if node.held_at_baseline:
                held.update(node.factor_ids())
        return held

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return scenario_to_dict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Scenario:
        return scenario_from_dict(d)

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        with open(path, encoding="utf-8") as fh:
            return scenario_from_dict(json.load(fh))


@dataclass(frozen=True)
class RiskBreakdown:
    p_success: float
    n_actors: float
    n_attempts: float
    impact: float
    total_risk: float


# -- JSON schema ------------------------------------------------------------


def _gate_from_dict(d: dict[str, Any]) -> TechniqueGate:
    try:
        kind = GateKind(d["kind"])
    except ValueError as exc:
        raise ScenarioError(f"unknown gate kind {d.get('kind')!r}") from exc
    techniques = tuple(
        Technique(t["technique_id"], ProbabilitySource.from_dict(t)) for t in d["techniques"]
    )
    weights = d.get("choice_weights")
    return TechniqueGate(kind, techniques, tuple(float(w) for w in weights) if weights else None)


def _gate_to_dict(g: TechniqueGate) -> dict[str, Any]:
    out: dict[str, Any] = {
        "kind": g.kind.value,
        "techniques": [{"technique_id": t.technique_id, **t.probability.to_dict()} for t in g.techniques],
    }
    if g.choice_weights is not None:
        out["choice_weights"] = list(g.choice_weights)
    return out


def scenario_from_dict(d: dict[str, Any]) -> Scenario:
    try:
        quantity_factors = [
            FactorSpec(
                id=f["id"],
                role=FactorRole(f["role"]),
                label=f.get("label", ""),
                unit=f.get("unit", ""),
                weighted_by=f.get("weighted_by"),
            )
            for f in d["quantity_factors"]
        ]
        chain = []
        for t in d["tactic_chain"]:
            prob = t.get("probability")
            chain.append(
                TacticNode(
                    tactic=Tactic(t["tactic"]),
                    included=bool(t.get("included", True)),
                    held_at_one=bool(t.get("held_at_one", False)),
                    held_at_baseline=bool(t.get("held_at_baseline", False)),
                    gate=_gate_from_dict(t["gate"]) if t.get("gate") else None,
                    probability=ProbabilitySource.from_dict(prob) if prob else None,
                )
            )
        modifiers = [
            ModifierSpec(m["id"], m.get("label", ""), m.get("technique_id"))
            for m in d.get("impact_modifiers", [])
        ]
        return Scenario(
            id=d["id"],
            actor_class=ActorClass(d["actor_class"]),
            target_label=d.get("target_label", ""),
            vector_label=d.get("vector_label", ""),
            quantity_factors=quantity_factors,
            tactic_chain=chain,
            kri_bindings=dict(d.get("kri_bindings", {})),
            benchmarks=list(d.get("benchmarks", [])),
            impact_modifiers=modifiers,
            baseline=d.get("baseline"),
            currency=d.get("currency", "USD"),
        )
    except KeyError as exc:
        raise ScenarioError(f"scenario document missing field {exc.args[0]!r}") from exc
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from exc


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    chain = []
    for t in s.tactic_chain:
        node: dict[str, Any] = {"tactic": t.tactic.value, "included": t.included}
        if t.held_at_one:
            node["held_at_one"] = True
        if t.held_at_baseline:
            node["held_at_baseline"] = True
        if t.gate is not None:
            node["gate"] = _gate_to_dict(t.gate)
        if t.probability is not None:
            node["probability"] = t.probability.to_dict()
        chain.append(node)
    factors = []
    for f in s.quantity_factors:
        fd: dict[str, Any] = {"id": f.id, "role": f.role.value, "label": f.label, "unit": f.unit}
        if f.weighted_by:
            fd["weighted_by"] = f.weighted_by
        factors.append(fd)
    return {
        "id": s.id,
        "actor_class": s.actor_class.value,
        "target_label": s.target_label,
        "vector_label": s.vector_label,
        "currency": s.currency,
        "quantity_factors": factors,
        "impact_modifiers": [
            {"id": m.id, "label": m.label, "technique_id": m.technique_id} for m in s.impact_modifiers
        ],
        "tactic_chain": chain,
        "kri_bindings": dict(s.kri_bindings),
        "benchmarks": list(s.benchmarks),
        "baseline": s.baseline,
    }


# -- validation -------------------------------------------------------------


def validate_scenario(scenario: Scenario) -> list[str]:
    """Return a list of human-readable invariant violations (empty when valid)."""
    problems: list[str] = []

    ids = [f.id for f in scenario.quantity_factors] + [m.id for m in scenario.impact_modifiers]
    for node in scenario.tactic_chain:
        ids.extend(node.factor_ids())
    seen: set[str] = set()
    for fid in ids:
        if fid in seen:
            problems.append(f"duplicate factor id {fid!r}")
        seen.add(fid)

    for role in (FactorRole.ACTORS, FactorRole.ATTEMPTS):
        n = len(scenario.factors_with_role(role))
        if n != 1:
            problems.append(f"expected exactly one {role.value!r} factor, found {n}")
    if not scenario.impact_factors:
        problems.append("no impact component declared")

    modifier_ids = {m.id for m in scenario.impact_modifiers}
    for f in scenario.impact_factors:
        if f.weighted_by is not None and f.weighted_by not in modifier_ids:
            problems.append(f"impact component {f.id!r} weighted by unknown modifier {f.weighted_by!r}")

    if not scenario.tactic_chain:
        problems.append("tactic chain is empty")
    elif not scenario.included_tactics():
        problems.append("tactic chain has no included tactic")
    tactic_seen: set[Tactic] = set()
    for node in scenario.tactic_chain:
        name = node.tactic.value
        if node.tactic in tactic_seen:
            problems.append(f"tactic {name!r} appears more than once")
        tactic_seen.add(node.tactic)
        if not node.included:
            continue
        if node.held_at_one:
            if node.gate is not None:
                problems.append(f"tactic {name!r} is held at one but has a gate")
            if node.probability is not None and not (
                node.probability.kind == "fixed" and node.probability.value == 1.0
            ):
                problems.append(f"tactic {name!r} is held at one but its probability is not fixed at 1.0")
            continue
        if node.gate is None and node.probability is None:
            problems.append(f"tactic {name!r} has neither a probability source nor a gate")
        if node.gate is not None and node.probability is not None:
            problems.append(f"tactic {name!r} has both a probability source and a gate")
        if node.probability is not None:
            problems.extend(_source_problems(node.probability, f"tactic {name!r}"))
        if node.gate is not None:
            problems.extend(_gate_problems(node.gate, f"tactic {name!r}"))

    declared = set(scenario.benchmarks)
    for fid, bench in scenario.kri_bindings.items():
        if fid not in seen:
            problems.append(f"kri binding references unknown factor {fid!r}")
        if bench not in declared:
            problems.append(f"kri binding for {fid!r} references undeclared benchmark {bench!r}")
    for fid in sorted(scenario.held_at_baseline_ids()):
        if fid in scenario.kri_bindings:
            problems.append(f"factor {fid!r} is held at baseline but has a kri binding")
    return problems


def _source_problems(src: ProbabilitySource, where: str) -> list[str]:
    if src.kind == "fixed":
        if src.value is None or not 0.0 <= src.value <= 1.0:
            return [f"{where}: fixed probability {src.value!r} outside [0, 1]"]
        return []
    if src.kind == "elicited":
        return [] if src.factor_id else [f"{where}: elicited probability without factor id"]
    return [f"{where}: unknown probability source {src.kind!r}"]


def _gate_problems(gate: TechniqueGate, where: str) -> list[str]:
    problems = []
    if len(gate.techniques) < 2:
        problems.append(f"{where}: gate needs at least two techniques, has {len(gate.techniques)}")
    for t in gate.techniques:
        problems.extend(_source_problems(t.probability, f"{where} technique {t.technique_id!r}"))
    if gate.choice_weights is not None:
        if gate.kind != GateKind.CHOICE:
            problems.append(f"{where}: choice_weights given on a {gate.kind.value} gate")
        if len(gate.choice_weights) != len(gate.techniques):
            problems.append(f"{where}: {len(gate.choice_weights)} choice weights for {len(gate.techniques)} techniques")
        if any(w < 0 for w in gate.choice_weights):
            problems.append(f"{where}: negative choice weight")
        total = sum(gate.choice_weights)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            problems.append(f"{where}: choice weights sum to {total:g}, not 1")
    return problems


# -- arithmetic ---------------------------------------------------------------


def _choice_weights(gate: TechniqueGate, k: int):
    if gate.choice_weights is None:
        return np.full(k, 1.0 / k)
    w = np.asarray(gate.choice_weights, dtype=float)
    if len(w) != k:
        raise ScenarioError(f"{len(w)} choice weights for {k} techniques")
    if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
        raise ScenarioError(f"choice weights must be nonnegative and sum to 1, got {w.sum():g}")
    return w


def gate_probability(gate: TechniqueGate, technique_probs: Sequence[float]) -> float:
    """Combine technique success probabilities according to the gate kind.

    AND multiplies, OR applies ``P(A) + P(B) - P(A)P(B)`` pairwise (assuming
    independence), CHOICE averages under the choice weights (uniform if unset).
    """
    p = np.asarray(technique_probs, dtype=float)
    if p.ndim != 1 or len(p) != len(gate.techniques):
        raise ScenarioError(f"gate has {len(gate.techniques)} techniques, got {p.size} probabilities")
    return float(combine_gate(gate, p[:, None])[0])


def combine_gate(gate: TechniqueGate, probs: np.ndarray) -> np.ndarray:
    """Vectorized gate over a (techniques, samples) array."""
    probs = np.asarray(probs, dtype=float)
    k = probs.shape[0]
    if k != len(gate.techniques):
        raise ScenarioError(f"gate has {len(gate.techniques)} techniques, got {k} probability rows")
    if gate.kind == GateKind.AND:
        return np.prod(probs, axis=0)
    if gate.kind == GateKind.OR:
        acc = probs[0].copy()
        for row in probs[1:]:
            acc = acc + row - acc * row
        return acc
    w = _choice_weights(gate, k)
    return np.tensordot(w, probs, axes=1)


def chain_success_probability(tactic_probs: Iterable[float]) -> float:
    """Product of the per-tactic conditional success probabilities."""
    p = list(tactic_probs)
    if not p:
        raise ScenarioError("tactic chain is empty")
    return math.prod(float(x) for x in p)


def total_risk(n_actors: float, n_attempts: float, p_success: float, impact: float) -> float:
    return n_actors * n_attempts * p_success * impact


def risk_breakdown(n_actors: float, n_attempts: float, p_success: float, impact: float) -> RiskBreakdown:
    return RiskBreakdown(
        p_success=p_success,
        n_actors=n_actors,
        n_attempts=n_attempts,
        impact=impact,
        total_risk=total_risk(n_actors, n_attempts, p_success, impact),
    )
