"""Uplift ratios, Shapley attribution, density estimates and moment-independent sensitivity."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import signal

from .engine import SampleBatch, summarize

DEFAULT_BINS = 10
GRID_POINTS = 512
KDE_BLOCK = 2048
BIN_REFINE = 8
CORE_FACTORS = ("n_actors", "n_attempts", "p_success", "impact")


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class UpliftResult:
    ratio: float
    iqr_band: tuple[float, float]
    uplifted_mean: float
    baseline_mean: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "ratio": self.ratio,
            "iqr_band": list(self.iqr_band),
            "uplifted_mean": self.uplifted_mean,
            "baseline_mean": self.baseline_mean,
        }


@dataclass(frozen=True)
class ShapleyAttribution:
    names: tuple[str, ...]
    phi: tuple[float, ...]  # log units
    phi_norm: tuple[float, ...]  # percent; absolute values sum to 100 unless degenerate
    degenerate: bool = False

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.phi_norm))

    def to_dict(self) -> dict[str, Any]:
        return {
            "names": list(self.names),
            "phi": list(self.phi),
            "phi_norm": list(self.phi_norm),
            "degenerate": self.degenerate,
        }


@dataclass(frozen=True)
class DeltaIndex:
    factor_id: str
    delta: float
    n_bins: int
    merged_bins: int = 0  # requested bins that came out empty (tied factor values)

    def to_dict(self) -> dict[str, Any]:
        return {"factor_id": self.factor_id, "delta": self.delta, "n_bins": self.n_bins, "merged_bins": self.merged_bins}


# -- uplift ---------------------------------------------------------------


def multiplicative_uplift(uplifted: np.ndarray, baseline: np.ndarray) -> UpliftResult:
    """Ratio of sample means; the band is the uplifted IQR over the baseline mean."""
    up = np.asarray(uplifted, dtype=float)
    base = np.asarray(baseline, dtype=float)
    if up.size == 0 or base.size == 0:
        raise AnalysisError("uplift needs non-empty samples")
    bm = float(np.mean(base))
    if bm == 0.0:
        raise AnalysisError("baseline mean is zero")
    q25, q75 = np.quantile(up, [0.25, 0.75])
    um = float(np.mean(up))
    return UpliftResult(um / bm, (float(q25) / bm, float(q75) / bm), um, bm)


def _column(x: SampleBatch | np.ndarray, attr: str) -> np.ndarray:
    return getattr(x, attr) if isinstance(x, SampleBatch) else np.asarray(x, dtype=float)


def total_risk_uplift(uplifted: SampleBatch | np.ndarray, baseline: SampleBatch | np.ndarray) -> UpliftResult:
    return multiplicative_uplift(_column(uplifted, "total_risk"), _column(baseline, "total_risk"))


def efficacy_uplift(uplifted: SampleBatch | np.ndarray, baseline: SampleBatch | np.ndarray) -> UpliftResult:
    return multiplicative_uplift(_column(uplifted, "p_success"), _column(baseline, "p_success"))


def volume_uplift(uplifted: SampleBatch | np.ndarray, baseline: SampleBatch | np.ndarray) -> UpliftResult:
    """Uplift in attacks per year; arrays are per-sample actors x attempts products."""
    return multiplicative_uplift(_column(uplifted, "attacks_per_year"), _column(baseline, "attacks_per_year"))


# -- Shapley ----------------------------------------------------------------


def _named(values: Mapping[str, float] | Sequence[float]) -> tuple[list[str], list[float]]:
    if isinstance(values, Mapping):
        return list(values), [float(v) for v in values.values()]
    vals = [float(v) for v in values]
    return [f"x{i}" for i in range(len(vals))], vals


def _normalize(names: Sequence[str], phi: Sequence[float]) -> ShapleyAttribution:
    total = math.fsum(abs(p) for p in phi)
    if total == 0.0:
        return ShapleyAttribution(tuple(names), tuple(phi), tuple(0.0 for _ in phi), True)
    return ShapleyAttribution(tuple(names), tuple(phi), tuple(p / total * 100.0 for p in phi), False)


def shapley_log_attribution(
    baseline_means: Mapping[str, float] | Sequence[float],
    uplifted_means: Mapping[str, float] | Sequence[float],
) -> ShapleyAttribution:
    """Shapley attribution of ``log(prod U / prod B)`` over factors.

    The value function is additive in log space, so each factor's Shapley value
    is its own log gain ``log(U_i / B_i)``.
    """
    names, base = _named(baseline_means)
    if isinstance(uplifted_means, Mapping) and isinstance(baseline_means, Mapping):
        if set(uplifted_means) != set(baseline_means):
            raise AnalysisError("baseline and uplifted factor sets differ")
        up = [float(uplifted_means[n]) for n in names]
    else:
        _, up = _named(uplifted_means)
    if len(up) != len(base):
        raise AnalysisError(f"{len(base)} baseline means but {len(up)} uplifted means")
    for n, b, u in zip(names, base, up):
        if not (b > 0 and u > 0):
            raise AnalysisError(f"factor {n!r} has a nonpositive mean")
    return _normalize(names, [math.log(u / b) for u, b in zip(up, base)])


def tactic_shapley(
    baseline: Mapping[str, float | None],
    uplifted: Mapping[str, float | None],
    tactics: Sequence[str] | None = None,
) -> ShapleyAttribution:
    """Shapley over tactic success-probability means; tactics absent on either side get exactly 0."""
    tactics = list(tactics) if tactics is not None else list(dict.fromkeys(list(baseline) + list(uplifted)))
    phi = []
    for t in tactics:
        b, u = baseline.get(t), uplifted.get(t)
        if b is None or u is None:
            phi.append(0.0)
            continue
        if not (b > 0 and u > 0):
            raise AnalysisError(f"tactic {t!r} has a nonpositive mean")
        phi.append(math.log(u / b))
    return _normalize(tactics, phi)


def core_factor_means(batch: SampleBatch) -> dict[str, float]:
    return {
        "n_actors": float(np.mean(batch.n_actors)),
        "n_attempts": float(np.mean(batch.n_attempts)),
        "p_success": float(np.mean(batch.p_success)),
        "impact": float(np.mean(batch.impact)),
    }


def tactic_means(batch: SampleBatch) -> dict[str, float]:
    return {name: float(np.mean(batch[name])) for name in batch.tactic_columns}


def batch_shapley(uplifted: SampleBatch, baseline: SampleBatch) -> ShapleyAttribution:
    return shapley_log_attribution(core_factor_means(baseline), core_factor_means(uplifted))


def batch_tactic_shapley(uplifted: SampleBatch, baseline: SampleBatch) -> ShapleyAttribution:
    order = list(dict.fromkeys(baseline.tactic_columns + uplifted.tactic_columns))
    return tactic_shapley(tactic_means(baseline), tactic_means(uplifted), order)


# -- target comparison --------------------------------------------------------


def target_uplift_table(
    small: Mapping[str, SampleBatch],
    large: Mapping[str, SampleBatch],
    labels: tuple[str, str] = ("small", "large"),
) -> list[dict[str, Any]]:
    """Actors and successful attacks per year, per capability level and target."""
    if list(small) != list(large):
        raise AnalysisError(f"level sets differ: {list(small)} vs {list(large)}")
    rows = []
    for level in small:
        for label, batch in zip(labels, (small[level], large[level])):
            actors = summarize(batch.n_actors)
            successes = summarize(batch.n_actors * batch.n_attempts * batch.p_success)
            rows.append({
                "level": level,
                "target": label,
                "actors_mean": actors.mean,
                "actors_q25": actors.q25,
                "actors_q75": actors.q75,
                "successful_attacks_mean": successes.mean,
                "successful_attacks_q25": successes.q25,
                "successful_attacks_q75": successes.q75,
            })
    return rows


# -- densities --------------------------------------------------------------


def scott_bandwidth(samples: np.ndarray) -> float:
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise AnalysisError("bandwidth needs at least two samples")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        raise AnalysisError("samples have zero variance")
    return sd * x.size ** (-0.2)


def kde_density(samples: np.ndarray, grid: np.ndarray, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian kernel density on ``grid`` with Scott's bandwidth unless one is given."""
    x = np.asarray(samples, dtype=float).ravel()
    g = np.asarray(grid, dtype=float)
    h = scott_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise AnalysisError(f"bandwidth must be positive, got {h}")
    acc = np.zeros(g.size)
    flat = g.ravel()
    for start in range(0, x.size, KDE_BLOCK):
        z = (flat[:, None] - x[None, start:start + KDE_BLOCK]) / h
        acc += np.exp(-0.5 * z * z).sum(axis=1)
    return (acc / (x.size * h * math.sqrt(2.0 * math.pi))).reshape(g.shape)


def binned_kde(samples: np.ndarray, grid: np.ndarray, bandwidth: float, refine: int = BIN_REFINE) -> np.ndarray:
    """Gaussian KDE on an evenly spaced grid via linear binning and FFT convolution.

    The samples are binned onto a grid ``refine`` times finer than ``grid``;
    the result approximates :func:`kde_density` for much less work on large samples.
    """
    x = np.asarray(samples, dtype=float).ravel()
    g = np.asarray(grid, dtype=float)
    m = (g.size - 1) * refine + 1
    step = (g[-1] - g[0]) / (m - 1)
    pos = np.clip((x - g[0]) / step, 0.0, m - 1.0)
    i = np.minimum(np.floor(pos).astype(np.int64), m - 2)
    frac = pos - i
    counts = np.bincount(i, 1.0 - frac, m) + np.bincount(i + 1, frac, m)
    half = int(min(m - 1, math.ceil(8.0 * bandwidth / step)))
    k = np.arange(-half, half + 1) * step
    kernel = np.exp(-0.5 * (k / bandwidth) ** 2) / (bandwidth * math.sqrt(2.0 * math.pi))
    dens = signal.fftconvolve(counts, kernel, mode="same") / x.size
    return np.clip(dens[::refine], 0.0, None)


def kde_curve(samples: np.ndarray, n_points: int = GRID_POINTS, pad: float = 5.0) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(samples, dtype=float)
    h = scott_bandwidth(x)
    grid = np.linspace(x.min() - pad * h, x.max() + pad * h, n_points)
    return grid, binned_kde(x, grid, h)


# -- Borgonovo delta ----------------------------------------------------------


def equal_probability_bins(x: np.ndarray, n_bins: int) -> np.ndarray:
    """Bin index per sample from empirical quantile edges; tied values can leave bins empty."""
    edges = np.quantile(x, np.linspace(0.0, 1.0, n_bins + 1))
    return np.searchsorted(edges[1:-1], x, side="right")


def _transform(y: np.ndarray, transform: str | None) -> np.ndarray:
    if transform is None:
        return y
    if transform == "log":
        if np.any(y <= 0):
            raise AnalysisError("log transform needs positive outputs")
        return np.log(y)
    raise AnalysisError(f"unknown transform {transform!r}")


def borgonovo_delta(
    x: np.ndarray,
    y: np.ndarray,
    n_bins: int = DEFAULT_BINS,
    factor_id: str = "",
    transform: str | None = None,
    grid_points: int = GRID_POINTS,
) -> DeltaIndex:
    """Half the bin-weighted L1 distance between the output density and its conditional densities.

    Densities are Scott-bandwidth Gaussian KDEs (binned, see :func:`binned_kde`)
    on a shared grid spanning the output range plus five bandwidths.

    ``transform="log"`` estimates on ``log(y)``; the index is unchanged by a
    monotone transform of the output, but heavy tails are far easier to smooth.
    """
    x = np.asarray(x, dtype=float)
    y = _transform(np.asarray(y, dtype=float), transform)
    if x.shape != y.shape:
        raise AnalysisError("factor and output samples are not aligned")
    if n_bins < 2:
        raise AnalysisError("n_bins must be at least 2")
    h = scott_bandwidth(y)

    bins = equal_probability_bins(x, n_bins)
    occupied = np.unique(bins)
    groups = [y[bins == b] for b in occupied]
    bandwidths = []
    for g in groups:
        sd = float(np.std(g, ddof=1)) if g.size > 1 else 0.0
        # a constant conditional output falls back to the marginal bandwidth
        bandwidths.append(sd * g.size ** (-0.2) if sd > 0 else h)

    pad = 5.0 * max([h] + bandwidths)
    grid = np.linspace(y.min() - pad, y.max() + pad, grid_points)
    marginal = binned_kde(y, grid, h)
    delta = 0.0
    for g, hb in zip(groups, bandwidths):
        cond = binned_kde(g, grid, hb)
        delta += g.size / y.size * float(np.trapezoid(np.abs(marginal - cond), grid))
    return DeltaIndex(factor_id, 0.5 * delta, int(occupied.size), n_bins - int(occupied.size))


def delta_indices(
    batch: SampleBatch,
    factors: Iterable[str] | None = None,
    output: str = "total_risk",
    n_bins: int = DEFAULT_BINS,
    transform: str | None = "log",
) -> list[DeltaIndex]:
    """Delta index of ``output`` for each non-constant factor column of ``batch``."""
    y = batch[output]
    out = []
    for fid in factors if factors is not None else batch.factor_columns:
        x = batch[fid]
        if np.ptp(x) == 0:
            continue
        out.append(borgonovo_delta(x, y, n_bins, fid, transform))
    return out


# -- normalization ------------------------------------------------------------


def iqr_normalize(samples: np.ndarray) -> np.ndarray:
    x = np.asarray(samples, dtype=float)
    q25, med, q75 = np.quantile(x, [0.25, 0.5, 0.75])
    iqr = q75 - q25
    if iqr == 0:
        raise AnalysisError("interquartile range is zero")
    return (x - med) / iqr


# -- tabular output -----------------------------------------------------------


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def shapley_table(columns: Mapping[str, ShapleyAttribution]) -> tuple[list[str], list[list[Any]]]:
    """Names x scenarios table of normalized attributions (percent)."""
    names: list[str] = []
    for attr in columns.values():
        names.extend(n for n in attr.names if n not in names)
    header = ["factor"] + list(columns)
    rows = [[n] + [attr.as_dict().get(n, 0.0) for attr in columns.values()] for n in names]
    return header, rows


@dataclass
class AnalysisReport:
    """Everything computed for one baseline batch against its uplifted batches."""

    baseline: str
    uplift: dict[str, dict[str, UpliftResult]] = field(default_factory=dict)
    factor_shapley: dict[str, ShapleyAttribution] = field(default_factory=dict)
    tactic_shapley: dict[str, ShapleyAttribution] = field(default_factory=dict)
    deltas: dict[str, list[DeltaIndex]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "baseline": self.baseline,
            "uplift": {lvl: {k: v.to_dict() for k, v in d.items()} for lvl, d in self.uplift.items()},
            "factor_shapley": {k: v.to_dict() for k, v in self.factor_shapley.items()},
            "tactic_shapley": {k: v.to_dict() for k, v in self.tactic_shapley.items()},
            "deltas": {k: [d.to_dict() for d in v] for k, v in self.deltas.items()},
        }


def analyze(
    baseline: SampleBatch,
    uplifted: Mapping[str, SampleBatch],
    baseline_label: str = "baseline",
    n_bins: int = DEFAULT_BINS,
) -> AnalysisReport:
    report = AnalysisReport(baseline_label)
    for label, batch in {baseline_label: baseline, **uplifted}.items():
        if batch.scenario_id != baseline.scenario_id:
            raise AnalysisError(f"batch {label!r} is for scenario {batch.scenario_id!r}, not {baseline.scenario_id!r}")
        report.deltas[label] = delta_indices(batch, n_bins=n_bins)
    for label, batch in uplifted.items():
        report.uplift[label] = {
            "total_risk": total_risk_uplift(batch, baseline),
            "efficacy": efficacy_uplift(batch, baseline),
            "volume": volume_uplift(batch, baseline),
        }
        report.factor_shapley[label] = batch_shapley(batch, baseline)
        report.tactic_shapley[label] = batch_tactic_shapley(batch, baseline)
    return report
