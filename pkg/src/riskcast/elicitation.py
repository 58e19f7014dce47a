"""Per-expert estimate records and expert-diagnostic statistics."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from scipy import stats

from .distfit import QuantileElicitation

BASELINE = "baseline"


class ElicitationError(ValueError):
    pass


@dataclass(frozen=True)
class EstimateRecord:
    expert_id: str
    factor_id: str
    level: str  # task id on the factor's benchmark, or BASELINE
    elicitation: QuantileElicitation
    rationale: str = ""

    @property
    def key(self) -> tuple[str, str, str]:
        return self.expert_id, self.factor_id, self.level

    def to_dict(self) -> dict[str, Any]:
        return {
            "expert_id": self.expert_id,
            "factor_id": self.factor_id,
            "level": self.level,
            **self.elicitation.to_dict(),
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> EstimateRecord:
        return cls(
            expert_id=str(d["expert_id"]),
            factor_id=str(d["factor_id"]),
            level=str(d.get("level", BASELINE)),
            elicitation=QuantileElicitation.from_dict(d),
            rationale=d.get("rationale", ""),
        )


@dataclass
class EstimateSet:
    scenario_id: str
    records: list[EstimateRecord]
    experts: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.experts:
            self.experts = sorted({r.expert_id for r in self.records})
        self._index: dict[tuple[str, str, str], EstimateRecord] = {}
        for r in self.records:
            if r.key in self._index:
                raise ElicitationError(f"duplicate record for expert/factor/level {r.key}")
            self._index[r.key] = r

    def get(self, expert_id: str, factor_id: str, level: str) -> EstimateRecord | None:
        return self._index.get((expert_id, factor_id, level))

    def cell(self, factor_id: str, level: str) -> list[EstimateRecord]:
        return [r for r in self.records if r.factor_id == factor_id and r.level == level]

    def for_expert(self, expert_id: str) -> list[EstimateRecord]:
        return [r for r in self.records if r.expert_id == expert_id]

    def factor_ids(self) -> list[str]:
        return sorted({r.factor_id for r in self.records})

    def levels(self, factor_id: str) -> list[str]:
        return sorted({r.level for r in self.records if r.factor_id == factor_id})

    def missing_baselines(self, factor_ids: Iterable[str]) -> list[tuple[str, str]]:
        """(expert, factor) pairs lacking a baseline record."""
        return [
            (e, f)
            for f in factor_ids
            for e in self.experts
            if (e, f, BASELINE) not in self._index
        ]

    def merged(self, other: EstimateSet) -> EstimateSet:
        if other.scenario_id != self.scenario_id:
            raise ElicitationError(
                f"cannot merge estimates for {other.scenario_id!r} into {self.scenario_id!r}"
            )
        experts = list(dict.fromkeys(self.experts + other.experts))
        return EstimateSet(self.scenario_id, self.records + other.records, experts)

    def without_expert(self, expert_id: str) -> EstimateSet:
        return EstimateSet(
            self.scenario_id,
            [r for r in self.records if r.expert_id != expert_id],
            [e for e in self.experts if e != expert_id],
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario_id": self.scenario_id,
            "experts": list(self.experts),
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> EstimateSet:
        try:
            records = [EstimateRecord.from_dict(r) for r in d["records"]]
            return cls(str(d["scenario_id"]), records, list(d.get("experts", [])))
        except KeyError as exc:
            raise ElicitationError(f"estimate document missing field {exc.args[0]!r}") from exc

    @classmethod
    def load(cls, path: str | Path) -> EstimateSet:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def load_many(cls, paths: Sequence[str | Path]) -> EstimateSet:
        if not paths:
            raise ElicitationError("no estimate files given")
        out = cls.load(paths[0])
        for p in paths[1:]:
            out = out.merged(cls.load(p))
        return out


def group_mean(estimates: EstimateSet, factor_id: str, level: str) -> float:
    cell = estimates.cell(factor_id, level)
    if not cell:
        raise ElicitationError(f"no records for factor {factor_id!r} at level {level!r}")
    return float(np.mean([r.elicitation.best_guess for r in cell]))


def spearman(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Spearman correlation with average ranks for ties; None when either series is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ElicitationError("spearman needs two aligned series of length >= 2")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(stats.spearmanr(x, y).statistic)


def coherence_inputs(expert_id: str, estimates: EstimateSet) -> tuple[list[float], list[float]]:
    """Interval widths and distances from the group mean for the expert's shared cells."""
    widths, distances = [], []
    for r in estimates.for_expert(expert_id):
        cell = estimates.cell(r.factor_id, r.level)
        if len({c.expert_id for c in cell}) < 2:
            continue
        mean = float(np.mean([c.elicitation.best_guess for c in cell]))
        widths.append(r.elicitation.high - r.elicitation.low)
        distances.append(abs(r.elicitation.best_guess - mean))
    return widths, distances


def coherence_to_consensus(expert_id: str, estimates: EstimateSet) -> float | None:
    """Rank correlation between an expert's interval widths and their distance from consensus.

    Returns None when either series is fully tied (the correlation is undefined).
    """
    widths, distances = coherence_inputs(expert_id, estimates)
    if len(widths) < 3:
        raise ElicitationError(
            f"expert {expert_id!r} has {len(widths)} records in shared cells, need at least 3"
        )
    return spearman(widths, distances)


def coherence_from_series(widths: Sequence[float], distances: Sequence[float]) -> float | None:
    if len(widths) < 3:
        raise ElicitationError(f"need at least 3 records, got {len(widths)}")
    return spearman(widths, distances)


def records_by_cell(estimates: EstimateSet) -> dict[tuple[str, str], list[EstimateRecord]]:
    out: dict[tuple[str, str], list[EstimateRecord]] = defaultdict(list)
    for r in estimates.records:
        out[(r.factor_id, r.level)].append(r)
    return dict(out)
