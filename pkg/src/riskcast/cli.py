"""Command-line front end: ``riskcast <subcommand>``.

Exit codes: 0 success, 1 domain validation, 2 I/O or parse failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__, analysis, data_path, distfit, engine
from .distfit import FitError
from .elicitation import BASELINE, ElicitationError, EstimateSet
from .engine import EngineError, SampleBatch, SamplerConfig
from .kri import (
    Benchmark,
    Evidence,
    KriError,
    SolveReport,
    borda_consensus,
    evidence_at_level,
    map_category_scores,
    map_overall_score,
    map_solves_to_evidence,
    rank_agreement,
    rank_sum,
    triangular_cutoff,
)
from .riskmodel import Scenario, ScenarioError, validate_scenario

log = logging.getLogger("riskcast")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
RESIDUAL_WARN = 1e-2  # on the residual divided by the squared interval width


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- manifest -----------------------------------------------------------------


@dataclass
class RunManifest:
    path: Path
    sha256: str
    scenario_path: Path
    estimate_paths: list[Path]
    benchmark_paths: dict[str, Path]
    evidence: dict[str, dict[str, Any]]
    sampler: dict[str, Any]
    output_dir: Path
    benchmark_subset: str | None = None
    raw: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def load(cls, ref: str) -> RunManifest:
        path = resolve_manifest(ref)
        try:
            blob = path.read_bytes()
        except OSError as exc:
            raise CliError(f"cannot read manifest {path}: {exc}", EXIT_IO) from exc
        try:
            d = json.loads(blob)
        except json.JSONDecodeError as exc:
            raise CliError(f"manifest {path} is not valid JSON: {exc}", EXIT_IO) from exc
        base = path.parent
        try:
            estimates = d["estimates"]
            return cls(
                path=path,
                sha256=hashlib.sha256(blob).hexdigest(),
                scenario_path=base / d["scenario"],
                estimate_paths=[base / p for p in ([estimates] if isinstance(estimates, str) else estimates)],
                benchmark_paths={k: base / v for k, v in d.get("benchmarks", {}).items()},
                evidence=dict(d.get("evidence", {})),
                sampler=dict(d.get("sampler", {})),
                output_dir=Path(d.get("output_dir", "out")),
                benchmark_subset=d.get("benchmark_subset"),
                raw=d,
            )
        except (KeyError, TypeError) as exc:
            raise CliError(f"manifest {path} is missing or has a malformed field: {exc}", EXIT_IO) from exc

    def provenance(self, seed: int | None = None) -> dict[str, Any]:
        out: dict[str, Any] = {"manifest": self.path.name, "manifest_sha256": self.sha256}
        if seed is not None:
            out["seed"] = seed
        return out


def resolve_manifest(ref: str) -> Path:
    """A path, or ``@name`` for the bundled ``manifest_<name>.json`` fixture."""
    if ref.startswith("@"):
        return data_path(f"manifest_{ref[1:]}.json")
    return Path(ref)


def _load_json_model(loader, path: Path, what: str):
    try:
        return loader(path)
    except OSError as exc:
        raise CliError(f"cannot read {what} {path}: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{what} {path} is not valid JSON: {exc}", EXIT_IO) from exc
    except (ScenarioError, ElicitationError, KriError) as exc:
        raise CliError(f"{what} {path}: {exc}", EXIT_IO) from exc


@dataclass
class Inputs:
    manifest: RunManifest
    scenario: Scenario
    estimates: EstimateSet
    benchmarks: dict[str, Benchmark]


def load_inputs(manifest: RunManifest, subset: str | None = None) -> Inputs:
    scenario = _load_json_model(Scenario.load, manifest.scenario_path, "scenario")
    if not manifest.estimate_paths:
        raise CliError("manifest lists no estimate files", EXIT_IO)
    estimates = _load_json_model(EstimateSet.load, manifest.estimate_paths[0], "estimates")
    for p in manifest.estimate_paths[1:]:
        more = _load_json_model(EstimateSet.load, p, "estimates")
        try:
            estimates = estimates.merged(more)
        except ElicitationError as exc:
            raise CliError(f"estimates {p}: {exc}", EXIT_VALIDATION) from exc
    subset = subset or manifest.benchmark_subset
    benchmarks = {}
    for bid, p in manifest.benchmark_paths.items():
        bench = _load_json_model(Benchmark.load, p, "benchmark")
        if subset:
            try:
                bench = bench.with_subset(subset)
            except KriError as exc:
                raise CliError(str(exc), EXIT_VALIDATION) from exc
        benchmarks[bid] = bench
    return Inputs(manifest, scenario, estimates, benchmarks)


# -- evidence -----------------------------------------------------------------


def _parse_assignments(values: Sequence[str] | None, flag: str) -> dict[str, str]:
    out = {}
    for v in values or []:
        if "=" not in v:
            raise CliError(f"{flag} expects BENCHMARK=VALUE, got {v!r}", EXIT_VALIDATION)
        k, _, rest = v.partition("=")
        out[k.strip()] = rest.strip()
    return out


def evidence_specs(manifest_evidence: Mapping[str, Any], args: argparse.Namespace) -> dict[str, dict[str, Any]]:
    """Manifest evidence overridden per benchmark by --evidence/--solves/--score."""
    specs = {k: dict(v) for k, v in manifest_evidence.items()}
    for bench, level in _parse_assignments(getattr(args, "evidence", None), "--evidence").items():
        specs[bench] = {"level": level}
    for bench, ranks in _parse_assignments(getattr(args, "solves", None), "--solves").items():
        try:
            specs[bench] = {"solves": [int(r) for r in ranks.split(",") if r.strip()]}
        except ValueError as exc:
            raise CliError(f"--solves expects comma-separated ranks, got {ranks!r}", EXIT_VALIDATION) from exc
    for bench, score in _parse_assignments(getattr(args, "score", None), "--score").items():
        frac, _, evaluated = score.partition("/")
        try:
            spec: dict[str, Any] = {"score": float(frac)}
            if evaluated:
                spec["evaluated"] = int(evaluated)
        except ValueError as exc:
            raise CliError(f"--score expects FRACTION[/EVALUATED], got {score!r}", EXIT_VALIDATION) from exc
        specs[bench] = spec
    return specs


def resolve_evidence(spec: Mapping[str, Any], bench: Benchmark) -> tuple[Evidence, str]:
    """Evidence for one benchmark plus a one-line account of how it was derived."""
    if "level" in spec:
        ev = evidence_at_level(bench, str(spec["level"]))
        return ev, f"{bench.id}: level {ev.level} given explicitly"
    if "solves" in spec:
        solves = spec["solves"]
        if all(isinstance(s, int) for s in solves):
            report = SolveReport.from_ranks(bench, solves)
        else:
            report = SolveReport(bench.id, frozenset(str(s) for s in solves))
        total = rank_sum(report, bench)
        k = triangular_cutoff(total)
        ev = map_solves_to_evidence(report, bench)
        return ev, f"{bench.id}: solved ranks sum to {total}, cutoff rank {k}, evidence {ev.level}"
    if "score" in spec:
        evaluated = int(spec.get("evaluated", bench.n_tasks))
        ev = map_overall_score(float(spec["score"]), evaluated, bench)
        return ev, f"{bench.id}: overall score {spec['score']} of {evaluated} tasks, evidence {ev.level}"
    if "categories" in spec:
        cats = {k: tuple(v) if isinstance(v, list) else v for k, v in spec["categories"].items()}
        ev = map_category_scores(cats, bench)
        return ev, f"{bench.id}: category scores {spec['categories']}, evidence {ev.level}"
    raise CliError(f"evidence spec for {bench.id!r} needs level, solves, score or categories", EXIT_VALIDATION)


def evidence_list(inputs: Inputs, specs: Mapping[str, Mapping[str, Any]]) -> tuple[list[Evidence], list[str]]:
    out, notes = [], []
    for bid in inputs.scenario.benchmarks:
        if bid not in specs:
            out.append(Evidence.baseline(bid))
            notes.append(f"{bid}: no evidence given, baseline")
            continue
        if bid not in inputs.benchmarks:
            raise CliError(f"evidence for {bid!r} but the manifest has no such benchmark file", EXIT_VALIDATION)
        ev, note = resolve_evidence(specs[bid], inputs.benchmarks[bid])
        out.append(ev)
        notes.append(note)
    unknown = sorted(set(specs) - set(inputs.scenario.benchmarks))
    if unknown:
        raise CliError(f"evidence given for benchmarks the scenario does not declare: {unknown}", EXIT_VALIDATION)
    return out, notes


# -- coverage -------------------------------------------------------------------


def coverage_problems(inputs: Inputs, evidence: Sequence[Evidence] = ()) -> list[str]:
    sc, est = inputs.scenario, inputs.estimates
    problems = [f"scenario: {p}" for p in validate_scenario(sc)]
    if est.scenario_id != sc.id:
        problems.append(f"estimates are for scenario {est.scenario_id!r}, not {sc.id!r}")
    factors = sc.elicited_factor_ids()
    for expert, fid in est.missing_baselines(factors):
        problems.append(f"expert {expert!r} has no baseline record for factor {fid!r}")
    levels = engine.resolve_levels(sc, evidence)
    for fid, level in levels.items():
        if level == BASELINE:
            continue
        for expert in est.experts:
            if est.get(expert, fid, level) is None:
                problems.append(f"expert {expert!r} has no record for factor {fid!r} at level {level!r}")
    quantities = sc.quantity_factor_ids()
    for r in est.records:
        kind = _factor_kind(r, quantities)
        for p in r.elicitation.problems(kind):
            problems.append(f"record {r.expert_id}/{r.factor_id}/{r.level}: {p}")
    for bid in sc.benchmarks:
        if bid not in inputs.benchmarks:
            problems.append(f"benchmark {bid!r} declared by the scenario has no file in the manifest")
    for fid, bid in sc.kri_bindings.items():
        bench = inputs.benchmarks.get(bid)
        if bench is None:
            continue
        for level in est.levels(fid):
            if level != BASELINE and level not in {t.task_id for t in bench.tasks}:
                problems.append(f"factor {fid!r} has records at {level!r}, which is not a {bid} task")
    return problems


def _factor_kind(record, quantities: set[str]) -> str:
    return "quantity" if record.factor_id in quantities else "probability"


# -- output helpers -------------------------------------------------------------


def _write_json(path: Path, doc: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _csv_with_provenance(provenance: Mapping[str, Any], header: Sequence[str], rows) -> str:
    return "# " + json.dumps(dict(provenance), sort_keys=True) + "\n" + analysis.csv_text(header, rows)


def _output_dir(args: argparse.Namespace, manifest: RunManifest | None = None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if manifest is not None:
        return manifest.output_dir
    return Path("out")


def _fmt(x: float) -> str:
    if x == 0 or not math.isfinite(x):
        return f"{x:g}"
    if abs(x) >= 1e4 or abs(x) < 1e-3:
        return f"{x:.4g}"
    return f"{x:.4f}".rstrip("0").rstrip(".")


# -- subcommands ------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    manifest = RunManifest.load(args.manifest)
    inputs = load_inputs(manifest, args.subset)
    specs = evidence_specs(manifest.evidence, args)
    try:
        evidence, notes = evidence_list(inputs, specs)
    except KriError as exc:
        print(f"evidence: {exc}")
        return EXIT_VALIDATION
    for n in notes:
        log.info(n)
    problems = coverage_problems(inputs, evidence)
    for p in problems:
        print(p)
    if problems:
        print(f"{len(problems)} problem(s) found")
        return EXIT_VALIDATION
    print(f"{manifest.path.name}: ok ({len(inputs.estimates.records)} records, {len(inputs.estimates.experts)} expert(s))")
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    manifest = RunManifest.load(args.manifest)
    inputs = load_inputs(manifest)
    quantities = inputs.scenario.quantity_factor_ids()
    fits, failures = [], []
    code = EXIT_OK
    for r in inputs.estimates.records:
        kind = _factor_kind(r, quantities)
        entry: dict[str, Any] = {
            "expert_id": r.expert_id, "factor_id": r.factor_id, "level": r.level,
            "kind": kind, "elicitation": r.elicitation.to_dict(),
        }
        name = f"{r.expert_id}/{r.factor_id}/{r.level}"
        problems = r.elicitation.problems(kind)
        if problems:
            failures.append(f"record {name}: {'; '.join(problems)}")
            code = max(code, EXIT_VALIDATION)
            continue
        try:
            dist = distfit.fit(r.elicitation, kind)
        except FitError as exc:
            failures.append(f"record {name}: {exc}")
            code = EXIT_NUMERIC
            continue
        entry["fit"] = dist.to_dict()
        width = r.elicitation.high - r.elicitation.low
        scaled = dist.fit_residual / width**2 if width > 0 else 0.0
        entry["scaled_residual"] = scaled
        if scaled > RESIDUAL_WARN:
            log.warning("record %s: fit residual %.3g (scaled %.3g) exceeds %g", name, dist.fit_residual, scaled, RESIDUAL_WARN)
        fits.append(entry)
    out = _output_dir(args, manifest) / "fits.json"
    _write_json(out, {**manifest.provenance(), "n_fits": len(fits), "fits": fits, "failures": failures})
    for f in failures:
        print(f, file=sys.stderr)
    print(f"{len(fits)} fits written to {out}" + (f", {len(failures)} failed" if failures else ""))
    return code


def _sampler_config(manifest: RunManifest, args: argparse.Namespace) -> SamplerConfig:
    cfg = dict(manifest.sampler)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.samples is not None:
        cfg["n_samples"] = args.samples
    if getattr(args, "chunk_size", None) is not None:
        cfg["chunk_size"] = args.chunk_size
    if getattr(args, "per_factor_experts", False):
        cfg["per_factor_experts"] = True
    n = int(cfg.get("n_samples", 100_000))
    if n < 1:
        raise CliError(f"usage: --samples must be at least 1, got {n}", EXIT_VALIDATION)
    try:
        return SamplerConfig(
            n_samples=n,
            seed=int(cfg.get("seed", 0)),
            chunk_size=int(cfg.get("chunk_size", engine.DEFAULT_CHUNK)),
            per_factor_experts=bool(cfg.get("per_factor_experts", False)),
            threads=_threads_from_env(),
        )
    except ValueError as exc:
        raise CliError(f"usage: {exc}", EXIT_VALIDATION) from exc


def _threads_from_env() -> int | None:
    raw = os.environ.get(engine.THREADS_ENV)
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise CliError(f"{engine.THREADS_ENV} must be a positive integer, got {raw!r}", EXIT_VALIDATION)
    return n


def cmd_sample(args: argparse.Namespace) -> int:
    manifest = RunManifest.load(args.manifest)
    config = _sampler_config(manifest, args)
    inputs = load_inputs(manifest, args.subset)
    evidence, notes = evidence_list(inputs, evidence_specs(manifest.evidence, args))
    for n in notes:
        print(f"evidence {n}")
    problems = coverage_problems(inputs, evidence)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_VALIDATION
    batch = engine.sample_scenario(inputs.scenario, inputs.estimates, evidence, config)
    out = _output_dir(args, manifest)
    label = args.label or manifest.path.stem.removeprefix("manifest_")
    prov = {**manifest.provenance(config.seed), "label": label}
    out.mkdir(parents=True, exist_ok=True)
    engine.write_csv(batch, out / "samples.csv", prov)
    _write_json(out / "summary.json", engine.summary_document(batch, prov))
    _write_json(out / "run_log.json", {
        **prov,
        "n_samples": config.n_samples,
        "chunk_size": config.chunk_size,
        "per_factor_experts": config.per_factor_experts,
        "evidence": [ev.to_dict() for ev in evidence],
        "evidence_log": notes,
    })
    tr = engine.summarize(batch, "total_risk")
    print(f"{label}: {config.n_samples} samples, seed {config.seed}, mean total risk {_fmt(tr.mean)} {inputs.scenario.currency}/year -> {out}")
    return EXIT_OK


def cmd_map_evidence(args: argparse.Namespace) -> int:
    bench = _load_json_model(lambda p: Benchmark.load(p, args.subset), Path(args.benchmark), "benchmark")
    spec: dict[str, Any] = {}
    if args.solves:
        try:
            spec = {"solves": [int(r) for r in args.solves.split(",") if r.strip()]}
        except ValueError:
            spec = {"solves": [s.strip() for s in args.solves.split(",") if s.strip()]}
    elif args.score:
        frac, _, evaluated = args.score.partition("/")
        spec = {"score": float(frac), **({"evaluated": int(evaluated)} if evaluated else {})}
    elif args.categories:
        cats = {}
        for item in args.categories:
            name, _, val = item.partition("=")
            frac, _, evaluated = val.partition("/")
            cats[name] = (float(frac), int(evaluated)) if evaluated else float(frac)
        spec = {"categories": cats}
    else:
        raise CliError("map-evidence needs --solves, --score or --category", EXIT_VALIDATION)
    ev, note = resolve_evidence(spec, bench)
    print(note)
    print(json.dumps(ev.to_dict(), sort_keys=True))
    return EXIT_OK


def _load_batch(path: str) -> SampleBatch:
    try:
        return engine.read_csv(path)
    except OSError as exc:
        raise CliError(f"cannot read samples {path}: {exc}", EXIT_IO) from exc
    except (ValueError, KeyError, StopIteration, EngineError) as exc:
        raise CliError(f"cannot parse samples {path}: {exc}", EXIT_IO) from exc


def _label(batch: SampleBatch, path: str) -> str:
    return str(batch.meta.get("label") or Path(path).parent.name or Path(path).stem)


def _batches(paths: Sequence[str]) -> dict[str, SampleBatch]:
    out: dict[str, SampleBatch] = {}
    for p in paths:
        b = _load_batch(p)
        label = _label(b, p)
        while label in out:
            label += "'"
        out[label] = b
    return out


def _batch_provenance(batches: Mapping[str, SampleBatch]) -> dict[str, Any]:
    return {
        "inputs": {
            label: {"manifest_sha256": b.meta.get("manifest_sha256"), "seed": b.seed, "n_samples": b.n_samples}
            for label, b in batches.items()
        }
    }


def _check_same_scenario(batches: Mapping[str, SampleBatch]) -> None:
    ids = {b.scenario_id for b in batches.values()}
    if len(ids) > 1:
        raise CliError(f"batches come from different scenarios: {sorted(ids)}", EXIT_VALIDATION)


def cmd_uplift(args: argparse.Namespace) -> int:
    base = _batches([args.baseline])
    ups = _batches(args.uplifted)
    _check_same_scenario({**base, **ups})
    (base_label, baseline), = base.items()
    doc = {**_batch_provenance({**base, **ups}), "baseline": base_label, "uplift": {}}
    rows = []
    for label, b in ups.items():
        res = {
            "total_risk": analysis.total_risk_uplift(b, baseline),
            "efficacy": analysis.efficacy_uplift(b, baseline),
            "volume": analysis.volume_uplift(b, baseline),
        }
        doc["uplift"][label] = {k: v.to_dict() for k, v in res.items()}
        for kind, r in res.items():
            rows.append([label, kind, r.ratio, r.iqr_band[0], r.iqr_band[1]])
            print(f"{label:>12} {kind:<10} x{r.ratio:.3f}  IQR band [{r.iqr_band[0]:.3f}, {r.iqr_band[1]:.3f}]")
    out = _output_dir(args)
    _write_json(out / "uplift.json", doc)
    _write_text(out / "uplift.csv", _csv_with_provenance(_batch_provenance({**base, **ups}), ["level", "kind", "ratio", "iqr_q25", "iqr_q75"], rows))
    return EXIT_OK


def cmd_attribute(args: argparse.Namespace) -> int:
    base = _batches([args.baseline])
    ups = _batches(args.uplifted)
    _check_same_scenario({**base, **ups})
    baseline = next(iter(base.values()))
    factor = {label: analysis.batch_shapley(b, baseline) for label, b in ups.items()}
    tactic = {label: analysis.batch_tactic_shapley(b, baseline) for label, b in ups.items()}
    prov = _batch_provenance({**base, **ups})
    out = _output_dir(args)
    _write_json(out / "shapley.json", {
        **prov,
        "factor": {k: v.to_dict() for k, v in factor.items()},
        "tactic": {k: v.to_dict() for k, v in tactic.items()},
    })
    for name, table in (("shapley_factors.csv", factor), ("shapley_tactics.csv", tactic)):
        header, rows = analysis.shapley_table(table)
        _write_text(out / name, _csv_with_provenance(prov, header, rows))
        print(_markdown_table(header, rows))
    return EXIT_OK


def cmd_sensitivity(args: argparse.Namespace) -> int:
    batches = _batches(args.samples_csv)
    if args.bins < 2:
        raise CliError("--bins must be at least 2", EXIT_VALIDATION)
    transform = None if args.transform == "none" else args.transform
    doc: dict[str, Any] = {**_batch_provenance(batches), "bins": args.bins, "output": args.output, "transform": args.transform, "delta": {}}
    rows = []
    for label, b in batches.items():
        deltas = analysis.delta_indices(b, output=args.output, n_bins=args.bins, transform=transform)
        doc["delta"][label] = [d.to_dict() for d in deltas]
        for d in deltas:
            rows.append([label, d.factor_id, d.delta, d.n_bins, d.merged_bins])
            print(f"{label:>12} {d.factor_id:<24} delta {d.delta:.4f}" + (f" ({d.merged_bins} empty bins merged)" if d.merged_bins else ""))
    out = _output_dir(args)
    _write_json(out / "sensitivity.json", doc)
    _write_text(out / "sensitivity.csv", _csv_with_provenance(_batch_provenance(batches), ["level", "factor", "delta", "bins_used", "bins_merged"], rows))
    return EXIT_OK


def cmd_rank(args: argparse.Namespace) -> int:
    rankings = []
    for p in args.rankings:
        try:
            text = Path(p).read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot read ranking {p}: {exc}", EXIT_IO) from exc
        if p.endswith(".json"):
            try:
                rankings.append([str(t) for t in json.loads(text)])
            except json.JSONDecodeError as exc:
                raise CliError(f"ranking {p} is not valid JSON: {exc}", EXIT_IO) from exc
        else:
            rankings.append([line.strip() for line in text.splitlines() if line.strip()])
    consensus = borda_consensus(rankings)
    for i, t in enumerate(consensus, start=1):
        print(f"{i}\t{t}")
    if args.compare:
        for p, r in zip(args.rankings, rankings):
            rho = rank_agreement(consensus, r)
            print(f"# agreement with {Path(p).name}: " + ("undefined" if rho is None else f"{rho:.4f}"))
    if args.out:
        _write_json(Path(args.out) / "consensus.json", {"inputs": [Path(p).name for p in args.rankings], "consensus": consensus})
    return EXIT_OK


# -- report -------------------------------------------------------------------------


def _markdown_table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    def cell(v):
        return _fmt(v) if isinstance(v, float) else str(v)

    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(cell(v) for v in r) + " |" for r in rows]
    return "\n".join(lines)


def cmd_report(args: argparse.Namespace) -> int:
    base = _batches([args.baseline])
    ups = _batches(args.uplifted or [])
    everything = {**base, **ups}
    _check_same_scenario(everything)
    base_label, baseline = next(iter(base.items()))
    rep = analysis.analyze(baseline, ups, base_label, n_bins=args.bins)
    prov = _batch_provenance(everything)
    out = _output_dir(args)
    labels = list(everything)

    md = [f"# Risk report: {baseline.scenario_id}", ""]
    md.append("Inputs: " + ", ".join(
        f"{lab} (seed {b.seed}, {b.n_samples} samples, manifest {str(b.meta.get('manifest_sha256', ''))[:12]})"
        for lab, b in everything.items()
    ))
    md.append("")

    md += ["## Distributions", ""]
    rows = []
    for node in ("total_risk", "p_success", "impact"):
        for lab, b in everything.items():
            s = engine.summarize(b, node)
            rows.append([node, lab, s.mean, s.median, s.q05, s.q25, s.q75, s.q95])
    for lab, b in everything.items():
        s = engine.summarize(b.attacks_per_year)
        rows.append(["attacks_per_year", lab, s.mean, s.median, s.q05, s.q25, s.q75, s.q95])
    header = ["node", "level", "mean", "median", "q05", "q25", "q75", "q95"]
    md += [_markdown_table(header, rows), ""]
    _write_text(out / "distributions.csv", _csv_with_provenance(prov, header, rows))

    if ups:
        md += ["## Uplift", "", "Ratios of uplifted to baseline means; the band is the uplifted IQR over the baseline mean.", ""]
        rows = []
        for kind in ("total_risk", "efficacy", "volume"):
            for lab in ups:
                r = rep.uplift[lab][kind]
                rows.append([kind, lab, r.ratio, r.iqr_band[0], r.iqr_band[1]])
        header = ["quantity", "level", "ratio", "band_q25", "band_q75"]
        md += [_markdown_table(header, rows), ""]
        _write_text(out / "uplift.csv", _csv_with_provenance(prov, header, rows))

        for title, table, fname in (
            ("Factor attribution (Shapley, % of log uplift)", rep.factor_shapley, "shapley_factors.csv"),
            ("Tactic attribution (Shapley, % of log efficacy uplift)", rep.tactic_shapley, "shapley_tactics.csv"),
        ):
            header, rows = analysis.shapley_table(table)
            sums = ["sum of abs"] + [math.fsum(abs(r[j]) for r in rows) for j in range(1, len(header))]
            md += [f"## {title}", "", _markdown_table(header, rows + [sums]), ""]
            flagged = [lab for lab, a in table.items() if a.degenerate]
            if flagged:
                md += [f"No factor moved for: {', '.join(flagged)}; attribution reported as zero.", ""]
            _write_text(out / fname, _csv_with_provenance(prov, header, rows))
    else:
        md += ["## Uplift", "", "Only a baseline batch was given, so uplift and attribution sections are omitted.", ""]

    md += ["## Sensitivity (delta index of total risk)", "", f"{args.bins} equal-probability bins per factor; densities estimated on log total risk.", ""]
    factors = list(dict.fromkeys(d.factor_id for v in rep.deltas.values() for d in v))
    rows = []
    for fid in factors:
        row: list[Any] = [fid]
        for lab in labels:
            match = [d.delta for d in rep.deltas[lab] if d.factor_id == fid]
            row.append(match[0] if match else "")
        rows.append(row)
    header = ["factor"] + labels
    md += [_markdown_table(header, rows), ""]
    _write_text(out / "sensitivity.csv", _csv_with_provenance(prov, header, rows))

    # density curves of log total risk and of IQR-normalized total risk
    curves, norm_cols = [], {}
    for lab, b in everything.items():
        grid, dens = analysis.kde_curve(np.log(b.total_risk))
        curves += [[lab, "log_total_risk", float(x), float(y)] for x, y in zip(grid, dens)]
        z = analysis.iqr_normalize(b.total_risk)
        norm_cols[lab] = z
        grid, dens = analysis.kde_curve(z)
        curves += [[lab, "iqr_normalized_total_risk", float(x), float(y)] for x, y in zip(grid, dens)]
    _write_text(out / "kde_curves.csv", _csv_with_provenance(prov, ["level", "variable", "x", "density"], curves))
    n = min(len(v) for v in norm_cols.values())
    _write_text(out / "iqr_normalized.csv", _csv_with_provenance(
        prov, list(norm_cols), ([float(norm_cols[lab][i]) for lab in norm_cols] for i in range(n))
    ))

    rows = []
    for lab, z in norm_cols.items():
        q = np.quantile(z, [0.95, 0.99])
        rows.append([lab, float(q[0]), float(q[1]), float(np.max(z))])
    md += ["## Tails (IQR-normalized total risk)", "", _markdown_table(["level", "q95", "q99", "max"], rows), ""]
    md += ["Density curves: `kde_curves.csv`; normalized samples: `iqr_normalized.csv`.", ""]

    _write_text(out / "report.md", "\n".join(md))
    _write_json(out / "report.json", {**prov, **rep.to_dict()})
    print(f"report written to {out / 'report.md'}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskcast", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"riskcast {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def manifest_cmd(name, helptext):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("manifest", help="run manifest path, or @baseline/@sota/@saturated for the bundled fixtures")
        return sp

    def evidence_flags(sp):
        sp.add_argument("--evidence", action="append", metavar="BENCH=LEVEL", help="set a benchmark's evidence level")
        sp.add_argument("--solves", action="append", metavar="BENCH=R1,R2,...", help="map solved task ranks to evidence")
        sp.add_argument("--score", action="append", metavar="BENCH=FRAC[/N]", help="map an overall score on N evaluated tasks")
        sp.add_argument("--subset", help="elicited subset to use (e.g. human)")

    sp = manifest_cmd("validate", "check a scenario, its estimates and evidence")
    evidence_flags(sp)
    sp.set_defaults(func=cmd_validate)

    sp = manifest_cmd("fit", "fit every estimate record and dump the distributions")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_fit)

    sp = manifest_cmd("sample", "Monte Carlo sample a manifest")
    evidence_flags(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--chunk-size", type=int)
    sp.add_argument("--per-factor-experts", action="store_true", help="draw the expert independently per factor")
    sp.add_argument("--label", help="label stored in the outputs (default: manifest name)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("map-evidence", help="map benchmark results to an evidence level")
    sp.add_argument("benchmark", help="benchmark JSON file")
    sp.add_argument("--solves", help="comma-separated solved ranks or task ids")
    sp.add_argument("--score", metavar="FRAC[/N]")
    sp.add_argument("--category", dest="categories", action="append", metavar="NAME=FRAC[/N]")
    sp.add_argument("--subset")
    sp.set_defaults(func=cmd_map_evidence)

    for name, func, helptext in (
        ("uplift", cmd_uplift, "total, efficacy and volume uplift ratios"),
        ("attribute", cmd_attribute, "factor and tactic Shapley attribution"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("baseline", help="baseline samples.csv")
        sp.add_argument("uplifted", nargs="+", help="uplifted samples.csv files")
        sp.add_argument("--out")
        sp.set_defaults(func=func)

    sp = sub.add_parser("sensitivity", help="delta sensitivity indices")
    sp.add_argument("samples_csv", nargs="+")
    sp.add_argument("--bins", type=int, default=analysis.DEFAULT_BINS)
    sp.add_argument("--output", default="total_risk", help="output node (default total_risk)")
    sp.add_argument("--transform", choices=["log", "none"], default="log")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sensitivity)

    sp = sub.add_parser("report", help="Markdown and CSV report over sampled batches")
    sp.add_argument("baseline", help="baseline samples.csv")
    sp.add_argument("uplifted", nargs="*", help="uplifted samples.csv files")
    sp.add_argument("--bins", type=int, default=analysis.DEFAULT_BINS)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("rank", help="Borda consensus of difficulty rankings")
    sp.add_argument("rankings", nargs="+", help="ranking files (.json list or one task per line)")
    sp.add_argument("--compare", action="store_true", help="report agreement of each input with the consensus")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_rank)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ScenarioError, ElicitationError, KriError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc.__cause__, FitError) else EXIT_VALIDATION
    except (FitError, analysis.AnalysisError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
