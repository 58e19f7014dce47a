"""Benchmark difficulty rankings and the mapping from benchmark results to evidence levels."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .elicitation import BASELINE, spearman


class KriError(ValueError):
    pass


@dataclass(frozen=True)
class Task:
    task_id: str
    rank: int
    fst_minutes: float | None = None


@dataclass(frozen=True)
class Benchmark:
    id: str
    tasks: tuple[Task, ...]
    elicited_subset: tuple[str, ...]
    alternate_subsets: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    categories: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        problems = self.problems()
        if problems:
            raise KriError(f"benchmark {self.id!r}: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        ranks = sorted(t.rank for t in self.tasks)
        if ranks != list(range(1, len(self.tasks) + 1)):
            out.append("task ranks are not 1..N contiguous")
        ids = [t.task_id for t in self.tasks]
        if len(set(ids)) != len(ids):
            out.append("duplicate task id")
        by_id = {t.task_id: t.rank for t in self.tasks}
        subsets = {"elicited_subset": self.elicited_subset, **self.alternate_subsets}
        for name, subset in subsets.items():
            unknown = [t for t in subset if t not in by_id]
            if unknown:
                out.append(f"{name} references unknown tasks {unknown}")
                continue
            r = [by_id[t] for t in subset]
            if any(b <= a for a, b in zip(r, r[1:])):
                out.append(f"{name} ranks are not strictly increasing")
        for cat, members in self.categories.items():
            unknown = [t for t in members if t not in by_id]
            if unknown:
                out.append(f"category {cat!r} references unknown tasks {unknown}")
        return out

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def rank_of(self, task_id: str) -> int:
        for t in self.tasks:
            if t.task_id == task_id:
                return t.rank
        raise KriError(f"task {task_id!r} not in benchmark {self.id!r}")

    def task_at(self, rank: int) -> Task:
        for t in self.tasks:
            if t.rank == rank:
                return t
        raise KriError(f"benchmark {self.id!r} has no task of rank {rank}")

    def ordered_ids(self) -> list[str]:
        return [t.task_id for t in sorted(self.tasks, key=lambda t: t.rank)]

    def with_subset(self, name: str) -> Benchmark:
        """Copy with an alternate elicited subset (e.g. ``"human"``) made current."""
        if name in ("", "default", "llm"):
            return self
        if name not in self.alternate_subsets:
            raise KriError(f"benchmark {self.id!r} has no subset {name!r}")
        return replace(self, elicited_subset=self.alternate_subsets[name])

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "tasks": [
                {"task_id": t.task_id, "rank": t.rank, **({"fst_minutes": t.fst_minutes} if t.fst_minutes is not None else {})}
                for t in self.tasks
            ],
            "elicited_subset": list(self.elicited_subset),
            "alternate_subsets": {k: list(v) for k, v in self.alternate_subsets.items()},
            "categories": {k: list(v) for k, v in self.categories.items()},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Benchmark:
        try:
            tasks = tuple(
                Task(str(t["task_id"]), int(t["rank"]), t.get("fst_minutes")) for t in d["tasks"]
            )
            return cls(
                id=str(d["id"]),
                tasks=tasks,
                elicited_subset=tuple(d["elicited_subset"]),
                alternate_subsets={k: tuple(v) for k, v in d.get("alternate_subsets", {}).items()},
                categories={k: tuple(v) for k, v in d.get("categories", {}).items()},
            )
        except KeyError as exc:
            raise KriError(f"benchmark document missing field {exc.args[0]!r}") from exc

    @classmethod
    def load(cls, path: str | Path, subset: str | None = None) -> Benchmark:
        with open(path, encoding="utf-8") as fh:
            bench = cls.from_dict(json.load(fh))
        return bench.with_subset(subset) if subset else bench


@dataclass(frozen=True)
class SolveReport:
    benchmark_id: str
    solved_task_ids: frozenset[str]

    @classmethod
    def from_ranks(cls, benchmark: Benchmark, ranks: Iterable[int]) -> SolveReport:
        return cls(benchmark.id, frozenset(benchmark.task_at(int(r)).task_id for r in ranks))


@dataclass(frozen=True)
class Evidence:
    benchmark_id: str
    level: str  # task id from the elicited subset, or BASELINE
    rank: int = 0  # 0 for BASELINE

    @property
    def is_baseline(self) -> bool:
        return self.level == BASELINE

    def to_dict(self) -> dict[str, Any]:
        return {"benchmark_id": self.benchmark_id, "level": self.level, "rank": self.rank}

    @classmethod
    def baseline(cls, benchmark_id: str) -> Evidence:
        return cls(benchmark_id, BASELINE, 0)


def evidence_at_level(benchmark: Benchmark, level: str) -> Evidence:
    if level == BASELINE:
        return Evidence.baseline(benchmark.id)
    if level not in benchmark.elicited_subset:
        raise KriError(f"{level!r} is not an elicited level of benchmark {benchmark.id!r}")
    return Evidence(benchmark.id, level, benchmark.rank_of(level))


def evidence_for_cutoff(benchmark: Benchmark, cutoff_rank: int) -> Evidence:
    """Hardest elicited task whose rank does not exceed ``cutoff_rank``."""
    best = Evidence.baseline(benchmark.id)
    for task_id in benchmark.elicited_subset:
        r = benchmark.rank_of(task_id)
        if r <= cutoff_rank and r > best.rank:
            best = Evidence(benchmark.id, task_id, r)
    return best


def borda_consensus(rankings: Sequence[Sequence[str]]) -> list[str]:
    """Consensus order by Borda count; a task at 1-based position p of k scores k - p."""
    if len(rankings) < 2:
        raise KriError("borda consensus needs at least two rankings")
    reference = set(rankings[0])
    for r in rankings:
        if len(set(r)) != len(r):
            raise KriError("a ranking lists the same task twice")
        if set(r) != reference:
            raise KriError("rankings do not cover the same task set")
    points = dict.fromkeys(reference, 0)
    for r in rankings:
        k = len(r)
        for pos, task in enumerate(r, start=1):
            points[task] += k - pos
    return sorted(points, key=lambda t: (-points[t], t))


def triangular_cutoff(rank_sum: int) -> int:
    """Largest k with k(k+1)/2 <= rank_sum."""
    if rank_sum < 0:
        raise KriError(f"rank sum must be nonnegative, got {rank_sum}")
    k = (math.isqrt(8 * int(rank_sum) + 1) - 1) // 2
    return k


def rank_sum(report: SolveReport, benchmark: Benchmark) -> int:
    if report.benchmark_id != benchmark.id:
        raise KriError(f"solve report is for {report.benchmark_id!r}, not {benchmark.id!r}")
    return sum(benchmark.rank_of(t) for t in report.solved_task_ids)


def map_solves_to_evidence(report: SolveReport, benchmark: Benchmark) -> Evidence:
    return evidence_for_cutoff(benchmark, triangular_cutoff(rank_sum(report, benchmark)))


def _exact(x: float) -> Fraction:
    # decimal reading of the float, so 0.57 * 100 floors to 57 rather than 56
    return Fraction(repr(float(x)))


def solved_count(score_fraction: float, evaluated_count: int) -> int:
    return math.floor(_exact(score_fraction) * int(evaluated_count))


def map_overall_score(score_fraction: float, evaluated_count: int, benchmark: Benchmark) -> Evidence:
    """Map an overall success rate on ``evaluated_count`` tasks to an evidence level.

    Unevaluated tasks count as unsolved, so the cutoff rank is the number of
    solved tasks.
    """
    if not 0.0 <= score_fraction <= 1.0:
        raise KriError(f"score fraction {score_fraction} outside [0, 1]")
    n = benchmark.n_tasks
    if evaluated_count > n or evaluated_count < 0:
        raise KriError(f"evaluated count {evaluated_count} not in [0, {n}]")
    solved = solved_count(score_fraction, evaluated_count)
    adjusted = Fraction(solved, n)
    cutoff = math.floor(adjusted * n)
    return evidence_for_cutoff(benchmark, cutoff)


def map_category_scores(
    scores: Mapping[str, float | tuple[float, int]], benchmark: Benchmark
) -> Evidence:
    """Per-category solve rates, each mapped like an overall score; the highest evidence wins.

    Values are a fraction of the whole category or ``(fraction, evaluated_count)``.
    Within a category the solved count selects the k-th easiest task, whose
    global rank is the cutoff.
    """
    best = Evidence.baseline(benchmark.id)
    for name, value in scores.items():
        if name not in benchmark.categories:
            raise KriError(f"benchmark {benchmark.id!r} has no category {name!r}")
        members = sorted(benchmark.categories[name], key=benchmark.rank_of)
        frac, evaluated = value if isinstance(value, tuple) else (value, len(members))
        if not 0.0 <= frac <= 1.0 or not 0 <= evaluated <= len(members):
            raise KriError(f"invalid score {value!r} for category {name!r}")
        solved = solved_count(frac, evaluated)
        if solved == 0:
            continue
        ev = evidence_for_cutoff(benchmark, benchmark.rank_of(members[solved - 1]))
        if ev.rank > best.rank:
            best = ev
    return best


def rank_agreement(order_a: Sequence[str], order_b: Sequence[str]) -> float | None:
    """Spearman correlation between two orderings of one task set."""
    if set(order_a) != set(order_b) or len(order_a) != len(order_b):
        raise KriError("orderings do not cover the same task set")
    pos_b = {t: i for i, t in enumerate(order_b)}
    return spearman(list(range(len(order_a))), [pos_b[t] for t in order_a])
