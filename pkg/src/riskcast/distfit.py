"""Fit beta (probability) and PERT (quantity) distributions to quantile elicitations.

An elicitation is a mode plus a plausible interval ``[low, high]`` held with
confidence ``c``; the interval is read symmetrically as the ``(1-c)/2`` and
``1-(1-c)/2`` quantiles. The mode is enforced exactly, the two quantiles are
matched in least squares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import optimize, special

MAX_ITER = 2000
FTOL = 1e-12
TINY = np.finfo(float).tiny


class FitError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class QuantileElicitation:
    best_guess: float
    low: float
    high: float
    confidence: float

    def problems(self, kind: str = "probability") -> list[str]:
        out = []
        if not self.low <= self.best_guess <= self.high:
            out.append(f"expected low <= best_guess <= high, got ({self.low}, {self.best_guess}, {self.high})")
        if not 0.0 < self.confidence < 1.0:
            out.append(f"confidence {self.confidence} outside (0, 1)")
        values = (self.low, self.best_guess, self.high)
        if kind == "probability" and any(not 0.0 <= v <= 1.0 for v in values):
            out.append("probability elicitation values must lie in [0, 1]")
        if kind == "quantity" and any(v < 0 for v in values):
            out.append("quantity elicitation values must be nonnegative")
        return out

    def to_dict(self) -> dict[str, float]:
        return {
            "best_guess": self.best_guess,
            "low": self.low,
            "high": self.high,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> QuantileElicitation:
        return cls(float(d["best_guess"]), float(d["low"]), float(d["high"]), float(d["confidence"]))


@dataclass(frozen=True)
class BetaParams:
    alpha: float
    beta: float


@dataclass(frozen=True)
class PertParams:
    a: float
    m: float
    b: float

    @property
    def shape(self) -> tuple[float, float]:
        span = self.b - self.a
        return 1.0 + 4.0 * (self.m - self.a) / span, 1.0 + 4.0 * (self.b - self.m) / span


@dataclass(frozen=True)
class FittedDistribution:
    kind: str  # "beta" | "pert" | "point"
    params: BetaParams | PertParams | float
    fit_residual: float = 0.0
    converged: bool = True

    # -- evaluation ---------------------------------------------------------
    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "point":
            return np.full_like(q, float(self.params))
        if self.kind == "beta":
            return special.betaincinv(self.params.alpha, self.params.beta, q)
        a, b = self.params.shape
        return self.params.a + (self.params.b - self.params.a) * special.betaincinv(a, b, q)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "point":
            return (x >= float(self.params)).astype(float)
        if self.kind == "beta":
            return special.betainc(self.params.alpha, self.params.beta, np.clip(x, 0.0, 1.0))
        p = self.params
        alpha, beta = p.shape
        z = np.clip((x - p.a) / (p.b - p.a), 0.0, 1.0)
        return special.betainc(alpha, beta, z)

    def mean(self) -> float:
        if self.kind == "point":
            return float(self.params)
        if self.kind == "beta":
            return self.params.alpha / (self.params.alpha + self.params.beta)
        return pert_mean(self.params)

    def support(self) -> tuple[float, float]:
        if self.kind == "point":
            return float(self.params), float(self.params)
        if self.kind == "beta":
            return 0.0, 1.0
        return self.params.a, self.params.b

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        if self.kind == "point":
            params: dict[str, float] = {"value": float(self.params)}
        elif self.kind == "beta":
            params = {"alpha": self.params.alpha, "beta": self.params.beta}
        else:
            params = {"a": self.params.a, "m": self.params.m, "b": self.params.b}
        return {"kind": self.kind, "params": params, "fit_residual": self.fit_residual, "converged": self.converged}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> FittedDistribution:
        p = d["params"]
        if d["kind"] == "point":
            params: Any = float(p["value"])
        elif d["kind"] == "beta":
            params = BetaParams(p["alpha"], p["beta"])
        else:
            params = PertParams(p["a"], p["m"], p["b"])
        return cls(d["kind"], params, d.get("fit_residual", 0.0), d.get("converged", True))


def point_mass(value: float) -> FittedDistribution:
    return FittedDistribution("point", float(value))


def quantile_levels(confidence: float) -> tuple[float, float]:
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    tail = (1.0 - confidence) / 2.0
    return tail, 1.0 - tail


def pert_mean(params: PertParams) -> float:
    return (params.a + 4.0 * params.m + params.b) / 6.0


# -- beta ---------------------------------------------------------------------


def _beta_from_concentration(mode: float, kappa: float) -> tuple[float, float]:
    # kappa = alpha + beta - 2; keeps (alpha - 1) / kappa == mode
    return 1.0 + mode * kappa, 1.0 + (1.0 - mode) * kappa


def _check(e: QuantileElicitation, kind: str) -> None:
    if e.low > e.high:
        raise FitError(f"low {e.low} exceeds high {e.high}")
    problems = e.problems(kind)
    if problems:
        raise FitError("; ".join(problems))


def fit_beta(elicitation: QuantileElicitation) -> FittedDistribution:
    """Beta distribution with the elicited mode whose tail quantiles best match the interval."""
    e = elicitation
    _check(e, "probability")
    if e.low == e.high:
        return point_mass(e.best_guess)
    lo_q, hi_q = quantile_levels(e.confidence)
    targets = np.array([e.low, e.high])
    levels = np.array([lo_q, hi_q])
    m = e.best_guess

    if m <= 0.0 or m >= 1.0:
        # boundary mode: one shape pinned at 1, the other free (> 1)
        def shapes(u):
            s = 1.0 + math.exp(min(u, 50.0))
            return (1.0, s) if m <= 0.0 else (s, 1.0)
    else:
        def shapes(u):
            return _beta_from_concentration(m, math.exp(min(u, 50.0)))

    def loss(x):
        a, b = shapes(float(x[0]))
        q = special.betaincinv(a, b, levels)
        return float(np.sum((q - targets) ** 2))

    # symmetric beta with interval width ~ the two-sided z-interval sets the start
    z = special.ndtri(hi_q)
    width = max(e.high - e.low, 1e-9)
    kappa0 = max((z / width) ** 2 - 3.0, 0.1)
    res = _nelder_mead(loss, np.array([math.log(kappa0)]))
    a, b = shapes(float(res.x[0]))
    return _finish(FittedDistribution("beta", BetaParams(a, b), float(res.fun), bool(res.success)))


# -- PERT ---------------------------------------------------------------------


def _pert_ppf(a: float, m: float, b: float, q: np.ndarray) -> np.ndarray:
    span = b - a
    alpha = 1.0 + 4.0 * (m - a) / span
    beta = 1.0 + 4.0 * (b - m) / span
    return a + span * special.betaincinv(alpha, beta, q)


def fit_pert(elicitation: QuantileElicitation) -> FittedDistribution:
    """PERT with mode fixed at the best guess; support ``[a, b]`` fitted to the interval."""
    e = elicitation
    _check(e, "quantity")
    if e.low == e.high:
        return point_mass(e.best_guess)
    lo_q, hi_q = quantile_levels(e.confidence)
    levels = np.array([lo_q, hi_q])
    m = max(e.best_guess, TINY)
    scale = e.high - e.low
    targets = np.array([e.low, e.high]) / scale
    ms = m / scale

    # a = ms * sigmoid(u) keeps 0 < a <= m; b = ms + exp(v) keeps b >= m
    def support(x):
        a = ms * special.expit(x[0])
        b = ms + math.exp(x[1])
        return max(a, TINY), b

    def loss(x):
        if not np.all(np.isfinite(x)) or x[1] > 700:
            return math.inf
        a, b = support(x)
        if not b > a:
            return math.inf
        q = _pert_ppf(a, ms, b, levels)
        return float(np.sum((q - targets) ** 2))

    a0 = min(max(targets[0], 1e-6 * ms), ms * (1 - 1e-6))
    b0 = max(targets[1], ms * (1 + 1e-6)) if targets[1] > ms else ms + 1e-6
    u0 = special.logit(a0 / ms) if ms > 0 else 0.0
    v0 = math.log(max(b0 - ms, 1e-12))
    # a strongly skewed interval can pull the simplex toward b -> m; wider upper starts avoid it
    res = None
    for stretch in (0.0, math.log(2.0), math.log(5.0)):
        r = _nelder_mead(loss, np.array([u0, v0 + stretch]))
        if res is None or r.fun < res.fun:
            res = r
        if res.success and res.fun < 1e-16:
            break
    a, b = support(res.x)
    dist = FittedDistribution(
        "pert",
        PertParams(float(a * scale), e.best_guess if e.best_guess > 0 else float(a * scale), float(b * scale)),
        float(res.fun) * scale**2, bool(res.success),
    )
    return _finish(dist)


def _nelder_mead(loss, x0: np.ndarray):
    best = None
    x = x0
    # restart from the previous optimum; a stalled simplex recovers on restart
    for _ in range(3):
        res = optimize.minimize(
            loss, x, method="Nelder-Mead",
            options={"maxiter": MAX_ITER, "xatol": 1e-10, "fatol": FTOL, "adaptive": x.size > 1},
        )
        if best is None or res.fun <= best.fun:
            best = res
        if best.success and best.fun < 1e-20:
            break
        x = res.x
    return best


def _finish(dist: FittedDistribution) -> FittedDistribution:
    if not dist.converged:
        raise FitError(
            f"optimizer did not converge within {MAX_ITER} iterations (residual {dist.fit_residual:.3g})",
            residual=dist.fit_residual,
        )
    return dist


def fit(elicitation: QuantileElicitation, kind: str) -> FittedDistribution:
    if kind == "probability":
        return fit_beta(elicitation)
    if kind == "quantity":
        return fit_pert(elicitation)
    raise ValueError(f"unknown factor kind {kind!r}")


def sample(dist: FittedDistribution, rng: np.random.Generator, size=None):
    """Draw from a fitted distribution; point masses return their value exactly."""
    if dist.kind == "point":
        value = float(dist.params)
        return value if size is None else np.full(size, value)
    if dist.kind == "beta":
        return rng.beta(dist.params.alpha, dist.params.beta, size)
    p = dist.params
    alpha, beta = p.shape
    return np.clip(p.a + (p.b - p.a) * rng.beta(alpha, beta, size), p.a, p.b)
