"""Monte-Carlo checks of the contraction bound, bound comparison and gain ratios.

Each trial tracks a scalar residual r. Per step, with probability alpha a
suitable operator fires and r shrinks by rho' (drawn from [0.8 rho, rho], or
exactly rho in exact mode); otherwise r is unchanged. The closed form for the
expected residual after k steps is (1 - alpha (1 - rho))^k r0.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .audio import Waveform
from .operators import AdaptivityReport, OperatorRegistry, measure_adaptivity
from .perturbations import CANONICAL_ORDER, Kind

LINEARIZATION_GATE = 0.3
RHO_DRAW_LOW = 0.8


@dataclass(frozen=True)
class SimConfig:
    alpha: float
    rho: float
    k_steps: int
    trials: int = 10_000
    initial_norm: float = 1.0
    seed: int = 0
    exact_rho: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if self.k_steps < 0 or self.trials < 1:
            raise ValueError("k_steps must be >= 0 and trials >= 1")
        if not (self.initial_norm > 0 and math.isfinite(self.initial_norm)):
            raise ValueError("initial_norm must be a positive finite number")


@dataclass(frozen=True)
class BoundConfig:
    lipschitz_L: float
    baseline_loss: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lipschitz_L) and self.lipschitz_L > 0):
            raise ValueError("lipschitz_L must be positive and finite")
        if not (math.isfinite(self.baseline_loss) and self.baseline_loss >= 0):
            raise ValueError("baseline_loss must be non-negative and finite")


@dataclass(frozen=True)
class ContractionResult:
    empirical_mean: np.ndarray  # length k_steps + 1
    theoretical: np.ndarray
    stderr: np.ndarray
    final_residuals: np.ndarray  # one per trial, after k_steps


def contraction_factor(alpha: float, rho: float) -> float:
    # 1 - alpha (1 - rho), arranged so alpha in {0, 1} gives exactly 1 or rho
    return (1.0 - alpha) + alpha * rho


def theoretical_curve(cfg: SimConfig) -> np.ndarray:
    return cfg.initial_norm * contraction_factor(cfg.alpha, cfg.rho) ** np.arange(cfg.k_steps + 1)


def _trial_factors(cfg: SimConfig) -> np.ndarray:
    """(trials, k_steps) per-step multipliers; each trial has its own substream."""
    k = cfg.k_steps
    out = np.ones((cfg.trials, k))
    for i in range(cfg.trials):
        rng = np.random.default_rng([cfg.seed, i])
        fire = rng.random(k) < cfg.alpha
        draw = np.full(k, cfg.rho) if cfg.exact_rho else rng.uniform(RHO_DRAW_LOW * cfg.rho, cfg.rho, size=k)
        out[i] = np.where(fire, draw, 1.0)
    return out


def _deterministic(cfg: SimConfig) -> bool:
    return cfg.alpha == 0.0 or (cfg.alpha == 1.0 and cfg.exact_rho) or cfg.k_steps == 0


def simulate_contraction(cfg: SimConfig) -> ContractionResult:
    if _deterministic(cfg):
        # every trial follows the same path; no sampling or averaging needed
        step = 1.0 if cfg.alpha == 0.0 else cfg.rho
        path = cfg.initial_norm * np.concatenate([[1.0], np.cumprod(np.full(cfg.k_steps, step))])
        theory = cfg.initial_norm * np.concatenate([[1.0], np.cumprod(np.full(cfg.k_steps, contraction_factor(cfg.alpha, cfg.rho)))])
        return ContractionResult(path, theory, np.zeros(cfg.k_steps + 1), np.full(cfg.trials, path[-1]))
    factors = _trial_factors(cfg)
    paths = np.empty((cfg.trials, cfg.k_steps + 1))
    paths[:, 0] = cfg.initial_norm
    if cfg.k_steps:
        paths[:, 1:] = cfg.initial_norm * np.cumprod(factors, axis=1)
    mean = paths.mean(axis=0)
    mean[0] = cfg.initial_norm  # averaging a constant column can drift in the last bits
    se = paths.std(axis=0, ddof=1) / math.sqrt(cfg.trials) if cfg.trials > 1 else np.zeros(cfg.k_steps + 1)
    return ContractionResult(mean, theoretical_curve(cfg), se, paths[:, -1].copy())


def compare_bounds(cfg: SimConfig, bc: BoundConfig) -> dict[str, float]:
    c = contraction_factor(cfg.alpha, cfg.rho) ** cfg.k_steps
    tws = bc.baseline_loss + bc.lipschitz_L * c * cfg.initial_norm
    base = bc.baseline_loss + bc.lipschitz_L * cfg.initial_norm
    improvement = math.inf if c == 0.0 else 1.0 / c
    return {"tws_bound": tws, "baseline_bound": base, "improvement_factor": improvement}


def exact_gain(alpha: float, rho: float, k: int) -> float:
    return 1.0 - contraction_factor(alpha, rho) ** k


@dataclass(frozen=True)
class GainRatioResult:
    empirical_ratio: Optional[float]  # None when both gains vanish (alpha = 0)
    predicted_ratio: float
    exact_ratio: Optional[float]
    empirical_gains: tuple[float, float]
    approximation_invalid: bool


def gain_ratio_experiment(
    rho1: float, rho2: float, alpha: float, k: int, trials: int = 20_000, seed: int = 0
) -> GainRatioResult:
    """Empirical gain ratio against the linearised prediction (1 - rho1) / (1 - rho2).

    Both arms share the per-trial selection draws (common random numbers) and
    use exact rho, so equal rhos give a ratio of exactly 1.
    """
    if not (rho1 < 1.0 and rho2 < 1.0):
        raise ValueError("gain ratios need rho1, rho2 < 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    predicted = (1.0 - rho1) / (1.0 - rho2)
    invalid = any(alpha * k * (1.0 - r) > LINEARIZATION_GATE for r in (rho1, rho2))
    if alpha == 0.0:
        return GainRatioResult(None, predicted, None, (0.0, 0.0), invalid)
    fired = np.empty(trials, dtype=np.int64)
    for i in range(trials):
        fired[i] = int(np.count_nonzero(np.random.default_rng([seed, i]).random(k) < alpha))
    g1 = 1.0 - float(np.mean(rho1 ** fired))
    g2 = 1.0 - float(np.mean(rho2 ** fired))
    empirical = g1 / g2 if g2 > 0 else None
    e1, e2 = exact_gain(alpha, rho1, k), exact_gain(alpha, rho2, k)
    return GainRatioResult(empirical, predicted, e1 / e2 if e2 > 0 else None, (g1, g2), invalid)


# --- covering ----------------------------------------------------------------

@dataclass(frozen=True)
class CoveringMatrix:
    operators: tuple[str, ...]
    kinds: tuple[Kind, ...]
    reports: dict[tuple[str, Kind], AdaptivityReport]

    def rho(self, op: str, kind: Kind | str) -> float:
        return self.reports[(op, Kind.parse(kind))].rho_estimate

    def covered(self, kind: Kind | str) -> bool:
        kind = Kind.parse(kind)
        return any(self.reports[(op, kind)].rho_estimate < 1.0 for op in self.operators)

    @property
    def verdict(self) -> dict[Kind, bool]:
        return {k: self.covered(k) for k in self.kinds}


def covering_study(
    registry: OperatorRegistry,
    kinds: Iterable[Kind | str],
    corpus: Sequence[Waveform],
    trials: int = 30,
    seed: int = 0,
    operators: Sequence[str] | None = None,
) -> CoveringMatrix:
    """Adaptivity of every (operator, kind) pair; feature-only operators are skipped.

    All operators in a kind's column see the same perturbation draws, so the
    column compares operators on equal footing regardless of their order.
    """
    kinds = tuple(Kind.parse(k) for k in kinds)
    names = tuple(operators) if operators is not None else tuple(
        op.name for op in registry if op.descriptor.returns == "audio"
    )
    reports = {}
    for name in names:
        for kind in kinds:
            rng = np.random.default_rng([seed, CANONICAL_ORDER.index(kind)])
            reports[(name, kind)] = measure_adaptivity(name, kind, corpus, trials, rng, registry)
    return CoveringMatrix(names, kinds, reports)


# --- exports -----------------------------------------------------------------

def _csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def contraction_csv(result: ContractionResult) -> str:
    rows = (
        (k, f"{t:.10g}", f"{m:.10g}", f"{s:.10g}")
        for k, (t, m, s) in enumerate(zip(result.theoretical, result.empirical_mean, result.stderr))
    )
    return _csv(("step", "theoretical", "empirical_mean", "stderr"), rows)


def covering_csv(matrix: CoveringMatrix) -> str:
    rows = (
        (op, kind.short, f"{r.rho_estimate:.6f}", f"{r.epsilon:.6f}", r.trials)
        for (op, kind), r in matrix.reports.items()
    )
    return _csv(("operator", "kind", "rho_estimate", "epsilon", "trials"), rows)


def bounds_csv(rows: Iterable[tuple[SimConfig, BoundConfig, dict[str, float]]]) -> str:
    return _csv(
        ("alpha", "rho", "k_steps", "lipschitz_L", "baseline_loss", "tws_bound", "baseline_bound", "improvement_factor"),
        (
            (c.alpha, c.rho, c.k_steps, b.lipschitz_L, b.baseline_loss,
             f"{r['tws_bound']:.10g}", f"{r['baseline_bound']:.10g}", f"{r['improvement_factor']:.10g}")
            for c, b, r in rows
        ),
    )


def gain_ratio_csv(rows: Iterable[tuple[float, float, float, int, GainRatioResult]]) -> str:
    def fmt(v: Optional[float]) -> str:
        return "" if v is None else f"{v:.10g}"

    return _csv(
        ("rho1", "rho2", "alpha", "k", "empirical_ratio", "predicted_ratio", "exact_ratio", "approximation_invalid"),
        ((r1, r2, a, k, fmt(g.empirical_ratio), fmt(g.predicted_ratio), fmt(g.exact_ratio), int(g.approximation_invalid))
         for r1, r2, a, k, g in rows),
    )
