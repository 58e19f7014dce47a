"""Forward Monte Carlo sampling of a scenario under a uniform expert mixture."""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import distfit
from .distfit import FitError, FittedDistribution
from .elicitation import BASELINE, EstimateSet
from .kri import Evidence
from .riskmodel import Scenario, combine_gate, total_risk

THREADS_ENV = "RISKCAST_THREADS"
DEFAULT_CHUNK = 16384
TACTIC_PREFIX = "tactic."


class EngineError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 100_000
    seed: int = 0
    chunk_size: int = DEFAULT_CHUNK
    per_factor_experts: bool = False  # redraw the expert independently for every factor
    threads: int | None = None  # None reads RISKCAST_THREADS, else the CPU count

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def worker_count(self, n_chunks: int) -> int:
        limit = self.threads
        if limit is None:
            env = os.environ.get(THREADS_ENV)
            limit = int(env) if env else (os.cpu_count() or 1)
        return max(1, min(limit, n_chunks))


@dataclass(frozen=True)
class SampleBatch:
    """Index-aligned sample columns for every node; immutable once built."""

    scenario_id: str
    columns: Mapping[str, np.ndarray]
    expert_index: np.ndarray
    experts: tuple[str, ...]
    roles: Mapping[str, Any]
    factor_levels: Mapping[str, str]
    evidence: Mapping[str, str]
    seed: int
    chunk_size: int
    meta: Mapping[str, Any] = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return int(self.expert_index.shape[0])

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise KeyError(f"batch has no node {name!r}") from None

    @property
    def p_success(self) -> np.ndarray:
        return self.columns["p_success"]

    @property
    def total_risk(self) -> np.ndarray:
        return self.columns["total_risk"]

    @property
    def impact(self) -> np.ndarray:
        return self.columns["impact"]

    @property
    def n_actors(self) -> np.ndarray:
        return self.columns[self.roles["actors"]]

    @property
    def n_attempts(self) -> np.ndarray:
        return self.columns[self.roles["attempts"]]

    @property
    def attacks_per_year(self) -> np.ndarray:
        return self.n_actors * self.n_attempts

    @property
    def tactic_columns(self) -> list[str]:
        return list(self.roles["tactics"])

    @property
    def factor_columns(self) -> list[str]:
        return list(self.roles["factors"])

    def check_identity(self) -> None:
        """Row-wise total-risk identity and probability bounds; raises EngineError."""
        expected = total_risk(self.n_actors, self.n_attempts, self.p_success, self.impact)
        if not np.array_equal(expected, self.total_risk):
            bad = int(np.flatnonzero(expected != self.total_risk)[0])
            raise EngineError(f"total-risk identity broken at sample {bad}")
        p = self.p_success
        if np.any(p < 0.0) or np.any(p > 1.0) or np.any(np.isnan(p)):
            raise EngineError("p_success sample outside [0, 1]")


@dataclass(frozen=True)
class Summary:
    n: int
    mean: float
    median: float
    q05: float
    q25: float
    q75: float
    q95: float

    @property
    def iqr(self) -> float:
        return self.q75 - self.q25

    def to_dict(self) -> dict[str, float]:
        return {
            "n": self.n, "mean": self.mean, "median": self.median,
            "q05": self.q05, "q25": self.q25, "q75": self.q75, "q95": self.q95,
            "iqr": self.iqr,
        }


# -- fitting --------------------------------------------------------------


def resolve_levels(scenario: Scenario, evidence: Iterable[Evidence] = ()) -> dict[str, str]:
    """Capability level at which each elicited factor is sampled."""
    by_bench: dict[str, str] = {}
    for ev in evidence:
        if ev.benchmark_id not in scenario.benchmarks:
            raise EngineError(f"evidence for undeclared benchmark {ev.benchmark_id!r}")
        if ev.benchmark_id in by_bench and by_bench[ev.benchmark_id] != ev.level:
            raise EngineError(f"conflicting evidence for benchmark {ev.benchmark_id!r}")
        by_bench[ev.benchmark_id] = ev.level
    held = scenario.held_at_baseline_ids()
    levels = {}
    for fid in scenario.elicited_factor_ids():
        bench = scenario.kri_bindings.get(fid)
        if fid in held or bench is None:
            levels[fid] = BASELINE
        else:
            levels[fid] = by_bench.get(bench, BASELINE)
    return levels


def fit_factors(
    scenario: Scenario, estimates: EstimateSet, levels: Mapping[str, str]
) -> dict[str, list[FittedDistribution]]:
    """Fitted distribution per factor, one per expert in ``estimates.experts`` order."""
    if not estimates.experts:
        raise EngineError("estimate set lists no experts")
    quantities = scenario.quantity_factor_ids()
    fitted: dict[str, list[FittedDistribution]] = {}
    for fid, level in levels.items():
        kind = "quantity" if fid in quantities else "probability"
        row = []
        for expert in estimates.experts:
            rec = estimates.get(expert, fid, level)
            if rec is None:
                raise EngineError(f"no estimate from expert {expert!r} for factor {fid!r} at level {level!r}")
            try:
                row.append(distfit.fit(rec.elicitation, kind))
            except FitError as exc:
                raise EngineError(f"fit failed for factor {fid!r} (expert {expert!r}, level {level!r}): {exc}") from exc
        fitted[fid] = row
    return fitted


# -- sampling ---------------------------------------------------------------


def _draw_factor(dists: Sequence[FittedDistribution], idx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(idx.shape[0])
    for e, dist in enumerate(dists):
        mask = idx == e
        n = int(mask.sum())
        if n:
            out[mask] = distfit.sample(dist, rng, n)
    return out


def _source_values(src, draws: Mapping[str, np.ndarray], n: int) -> np.ndarray:
    if src.kind == "fixed":
        return np.full(n, float(src.value))
    return draws[src.factor_id]


def _stream(seed: int, chunk: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk, slot)))


def _sample_chunk(
    scenario: Scenario,
    fitted: Mapping[str, list[FittedDistribution]],
    n_experts: int,
    config: SamplerConfig,
    chunk: int,
    n: int,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    stream_ids = {fid: i for i, fid in enumerate(scenario.elicited_factor_ids())}
    idx = _stream(config.seed, chunk, 0).integers(0, n_experts, size=n)
    draws: dict[str, np.ndarray] = {}
    for fid, dists in fitted.items():
        # one stream per factor position: unchanged factors draw identically across levels
        rng = _stream(config.seed, chunk, 1 + stream_ids[fid])
        factor_idx = rng.integers(0, n_experts, size=n) if config.per_factor_experts else idx
        draws[fid] = _draw_factor(dists, factor_idx, rng)

    cols = dict(draws)
    p = np.ones(n)
    for node in scenario.included_tactics():
        if node.held_at_one:
            term = np.ones(n)
        elif node.gate is not None:
            rows = np.stack([_source_values(t.probability, draws, n) for t in node.gate.techniques])
            term = combine_gate(node.gate, rows)
        else:
            term = _source_values(node.probability, draws, n)
        cols[TACTIC_PREFIX + node.tactic.value] = term
        p = p * term
    cols["p_success"] = p

    impact = np.zeros(n)
    for f in scenario.impact_factors:
        v = draws[f.id]
        impact = impact + (draws[f.weighted_by] * v if f.weighted_by else v)
    cols["impact"] = impact
    cols["total_risk"] = total_risk(draws[scenario.actors_factor.id], draws[scenario.attempts_factor.id], p, impact)
    return idx, cols


def sample_scenario(
    scenario: Scenario,
    estimates: EstimateSet,
    evidence: Iterable[Evidence] = (),
    config: SamplerConfig | None = None,
) -> SampleBatch:
    """Sample every node of the scenario.

    Each sample draws one expert uniformly and takes all factor values from
    that expert's fitted distributions at the evidence level of the factor's
    benchmark. Streams are derived from ``(seed, chunk index, factor slot)``,
    so the result depends on ``(seed, n_samples, chunk_size)`` only and a
    factor whose distribution does not change draws the same values at every
    capability level.
    """
    config = config or SamplerConfig()
    evidence = list(evidence)
    levels = resolve_levels(scenario, evidence)
    fitted = fit_factors(scenario, estimates, levels)
    n_experts = len(estimates.experts)

    sizes = [min(config.chunk_size, config.n_samples - start) for start in range(0, config.n_samples, config.chunk_size)]
    workers = config.worker_count(len(sizes))
    jobs = [(scenario, fitted, n_experts, config, i, n) for i, n in enumerate(sizes)]
    if workers == 1:
        parts = [_sample_chunk(*j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda j: _sample_chunk(*j), jobs))

    expert_index = np.concatenate([p[0] for p in parts])
    names = list(parts[0][1])
    columns = {name: np.concatenate([p[1][name] for p in parts]) for name in names}
    return _freeze(
        scenario_id=scenario.id,
        columns=columns,
        expert_index=expert_index,
        experts=tuple(estimates.experts),
        roles=scenario_roles(scenario),
        factor_levels=levels,
        evidence={ev.benchmark_id: ev.level for ev in evidence},
        seed=config.seed,
        chunk_size=config.chunk_size,
    )


def scenario_roles(scenario: Scenario) -> dict[str, Any]:
    return {
        "actors": scenario.actors_factor.id,
        "attempts": scenario.attempts_factor.id,
        "impact_components": [f.id for f in scenario.impact_factors],
        "modifiers": [m.id for m in scenario.impact_modifiers],
        "tactics": [TACTIC_PREFIX + t.tactic.value for t in scenario.included_tactics()],
        "factors": scenario.elicited_factor_ids(),
    }


def _freeze(**kw: Any) -> SampleBatch:
    for arr in list(kw["columns"].values()) + [kw["expert_index"]]:
        arr.setflags(write=False)
    kw["columns"] = MappingProxyType(dict(kw["columns"]))
    for key in ("roles", "factor_levels", "evidence"):
        kw[key] = MappingProxyType(dict(kw[key]))
    kw["meta"] = MappingProxyType(dict(kw.get("meta", {})))
    batch = SampleBatch(**kw)
    batch.check_identity()
    return batch


# -- summaries --------------------------------------------------------------


def summarize(batch: SampleBatch | np.ndarray, node: str | None = None) -> Summary:
    """Mean, median and 5/25/75/95% quantiles (linear interpolation between order statistics)."""
    x = np.asarray(batch[node] if node is not None else batch, dtype=float)
    if x.size == 0:
        raise ValueError("cannot summarize an empty sample")
    q = np.quantile(x, [0.05, 0.25, 0.5, 0.75, 0.95])
    return Summary(int(x.size), float(np.mean(x)), float(q[2]), float(q[0]), float(q[1]), float(q[3]), float(q[4]))


def summary_document(batch: SampleBatch, extra: Mapping[str, Any] | None = None) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "scenario_id": batch.scenario_id,
        "seed": batch.seed,
        "n_samples": batch.n_samples,
        "chunk_size": batch.chunk_size,
        "experts": list(batch.experts),
        "evidence": dict(batch.evidence),
        "factor_levels": dict(batch.factor_levels),
        "nodes": {name: summarize(col).to_dict() for name, col in batch.columns.items()},
    }
    if extra:
        doc.update(extra)
    return doc


# -- columnar export ----------------------------------------------------------


def _header(batch: SampleBatch) -> dict[str, Any]:
    return {
        "scenario_id": batch.scenario_id,
        "seed": batch.seed,
        "chunk_size": batch.chunk_size,
        "experts": list(batch.experts),
        "roles": dict(batch.roles),
        "factor_levels": dict(batch.factor_levels),
        "evidence": dict(batch.evidence),
        **dict(batch.meta),
    }


def write_csv(batch: SampleBatch, path: str | Path, meta: Mapping[str, Any] | None = None) -> None:
    """One column per node plus ``expert_index``; a leading ``#`` line carries run metadata as JSON."""
    header = {**_header(batch), **(meta or {})}
    names = list(batch.columns)
    data = np.column_stack([batch.columns[n] for n in names])
    buf = io.StringIO()
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    buf.write(",".join(["expert_index"] + names) + "\n")
    for i in range(batch.n_samples):
        buf.write(str(int(batch.expert_index[i])))
        buf.write(",")
        buf.write(",".join(repr(float(v)) for v in data[i]))
        buf.write("\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path: str | Path) -> SampleBatch:
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise EngineError(f"{path}: missing metadata line")
        header = json.loads(first[2:])
        reader = csv.reader(fh)
        names = next(reader)
        rows = [r for r in reader if r]
    if names[0] != "expert_index":
        raise EngineError(f"{path}: first column must be expert_index")
    table = np.array(rows, dtype=float).reshape(len(rows), len(names))
    known = {"scenario_id", "seed", "chunk_size", "experts", "roles", "factor_levels", "evidence"}
    return _freeze(
        scenario_id=header["scenario_id"],
        columns={n: table[:, j].copy() for j, n in enumerate(names) if j > 0},
        expert_index=table[:, 0].astype(np.int64),
        experts=tuple(header["experts"]),
        roles=header["roles"],
        factor_levels=header["factor_levels"],
        evidence=header["evidence"],
        seed=int(header["seed"]),
        chunk_size=int(header["chunk_size"]),
        meta={k: v for k, v in header.items() if k not in known},
    )
