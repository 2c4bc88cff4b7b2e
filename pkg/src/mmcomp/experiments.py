"""Experiment harness: statics tables, CRN comparisons and the event census.

Strategy comparisons run every contender on identical per-path substreams
(common random numbers), so per-path objective differences pair up and the
paired t-test sees only the policy effect.  Aggregation uses exactly
rounded summation, making every reported statistic independent of path
scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .closed_form import OmegaTable, hat_depths
from .model import ModelParams, competitor_depths
from .simulate import run_path, simulate_paths

__all__ = [
    "CensusResult",
    "CensusWindow",
    "ComparisonReport",
    "PairedTest",
    "StrategyStats",
    "generosity_census",
    "paired_t_test",
    "regularized_incomplete_beta",
    "run_comparison",
    "statics_depth_surface",
    "statics_time_surface",
    "student_t_sf",
]


# --- small-sample statistics -------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    max_iter = 300
    eps = 1e-16
    fpmin = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b), accurate to ~1e-14."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """Upper tail P(T > t) of the Student t distribution with ``df`` dof."""
    if df <= 0:
        raise ValueError("degrees of freedom must be > 0")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    x = df / (df + t * t)
    tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return tail if t >= 0 else 1.0 - tail


def _stable_mean_sd(values) -> tuple[float, float]:
    """Exactly rounded mean and (n-1)-normalised standard deviation."""
    xs = [float(v) for v in np.asarray(values).ravel()]
    n = len(xs)
    mean = math.fsum(xs) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in xs) / (n - 1)
    return mean, math.sqrt(var)


@dataclass(frozen=True)
class PairedTest:
    """Two-sided paired t-test on per-path differences (second minus first)."""

    n: int
    mean_diff: float
    sd_diff: float
    t_stat: float
    p_value: float
    confidence: float
    significant: bool


def paired_t_test(diffs, confidence: float = 0.99) -> PairedTest:
    """Test whether paired differences have zero mean.

    Zero-variance differences make the statistic degenerate: identical
    samples report "no difference" (p = 1), a constant nonzero offset is
    certain (p = 0, infinite t).
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie strictly between 0 and 1")
    diffs = np.asarray(diffs, dtype=float)
    n = diffs.size
    if n < 2:
        raise ValueError("need at least two paired observations")
    mean, sd = _stable_mean_sd(diffs)
    if sd == 0.0:
        if mean == 0.0:
            t_stat, p = 0.0, 1.0
        else:
            t_stat, p = math.copysign(math.inf, mean), 0.0
    else:
        t_stat = mean / (sd / math.sqrt(n))
        p = 2.0 * student_t_sf(abs(t_stat), n - 1)
    return PairedTest(n=n, mean_diff=mean, sd_diff=sd, t_stat=t_stat,
                      p_value=p, confidence=confidence,
                      significant=p < 1.0 - confidence)


# --- Monte Carlo comparisons -------------------------------------------------

@dataclass(frozen=True)
class StrategyStats:
    """Objective statistics of one strategy over the common paths."""

    name: str
    mean: float
    sd: float
    generosity_rate: float


@dataclass(frozen=True)
class ComparisonReport:
    """CRN comparison of several strategies on identical substreams."""

    strategies: tuple[StrategyStats, ...]
    paired: PairedTest
    n_paths: int
    n_steps: int
    seed: int


def run_comparison(params: ModelParams, strategies: Sequence[tuple[str, object]],
                   n_paths: int, n_steps: int, seed: int,
                   confidence: float = 0.99,
                   n_threads: int = 1) -> ComparisonReport:
    """Evaluate strategies on common random numbers and pair the first two.

    The paired difference is second-minus-first, so listing the baseline
    first makes a positive mean an improvement.
    """
    if len(strategies) < 2:
        raise ValueError("need at least two strategies to compare")
    if n_paths < 2:
        raise ValueError("need at least two paths for a paired test")

    stats = []
    objectives = []
    for name, strategy in strategies:
        res = simulate_paths(params, strategy, n_paths, n_steps, seed,
                             n_threads=n_threads)
        mean, sd = _stable_mean_sd(res.objectives)
        rate = float(np.count_nonzero(res.generosity)) / n_paths
        stats.append(StrategyStats(name=name, mean=mean, sd=sd,
                                   generosity_rate=rate))
        objectives.append(res.objectives)

    paired = paired_t_test(objectives[1] - objectives[0], confidence)
    return ComparisonReport(strategies=tuple(stats), paired=paired,
                            n_paths=n_paths, n_steps=n_steps, seed=seed)


# --- comparative statics -----------------------------------------------------

def statics_depth_surface(params: ModelParams, omega: OmegaTable,
                          t_fixed: float = 0.5, q_tilde_values=None,
                          z: float = 0.0) -> list[dict]:
    """Unrestrained depths against the competitor's inventory at a fixed time.

    One row per ``(q_tilde, q)`` with the competitor depths alongside, as
    plot-ready data; sides suppressed by the inventory bound carry NaN.
    """
    if q_tilde_values is None:
        q_tilde_values = params.inventory_grid()
    qs = params.inventory_grid()
    rows = []
    for qt in q_tilde_values:
        qt = int(qt)
        pair = hat_depths(params, omega, t_fixed, qs, qt, z)
        comp = competitor_depths(params, qt, z)
        for j, q in enumerate(qs):
            rows.append({
                "q_tilde": qt,
                "q": int(q),
                "delta_hat_a": float(pair.ask[j]),
                "delta_hat_b": float(pair.bid[j]),
                "comp_ask": float(comp.ask),
                "comp_bid": float(comp.bid),
            })
    return rows


def statics_time_surface(params: ModelParams, omega: OmegaTable,
                         q_tilde: int = 0, z: float = 0.0) -> list[dict]:
    """Unrestrained depths over the omega time grid at fixed competitor state."""
    qs = params.inventory_grid()
    comp = competitor_depths(params, q_tilde, z)
    rows = []
    for t in omega.time_grid:
        pair = hat_depths(params, omega, float(t), qs, q_tilde, z)
        for j, q in enumerate(qs):
            rows.append({
                "t": float(t),
                "q": int(q),
                "delta_hat_a": float(pair.ask[j]),
                "delta_hat_b": float(pair.bid[j]),
                "comp_ask": float(comp.ask),
                "comp_bid": float(comp.bid),
            })
    return rows


# --- generosity census -------------------------------------------------------

@dataclass(frozen=True)
class CensusWindow:
    """Trajectory of one flagged path around its first generosity event."""

    path_index: int
    first_event_step: int
    start: int
    stop: int
    trajectory: object


@dataclass(frozen=True)
class CensusResult:
    """How often the quoted depth had to be lifted to the competitor's level."""

    rate: float
    n_events: int
    n_paths: int
    n_steps: int
    seed: int
    flagged_paths: tuple[int, ...]
    windows: tuple[CensusWindow, ...] = ()


def generosity_census(params: ModelParams, strategy, n_paths: int,
                      n_steps: int, seed: int, n_threads: int = 1,
                      collect_windows: int = 0,
                      window_margin: int = 50) -> CensusResult:
    """Fraction of paths on which quote truncation was active at least once.

    With ``collect_windows > 0`` the first flagged paths are re-simulated
    with full recording and a window of ``window_margin`` steps around the
    first event is kept for inspection.
    """
    res = simulate_paths(params, strategy, n_paths, n_steps, seed,
                         n_threads=n_threads)
    flagged = np.flatnonzero(res.generosity)
    windows = []
    for idx in flagged[:collect_windows]:
        pr = run_path(params, strategy, n_steps, seed, path_index=int(idx),
                      record_trajectory=True)
        hits = np.flatnonzero(pr.trajectory.ask_truncated
                              | pr.trajectory.bid_truncated)
        first = int(hits[0])
        windows.append(CensusWindow(
            path_index=int(idx),
            first_event_step=first,
            start=max(0, first - window_margin),
            stop=min(n_steps, first + window_margin + 1),
            trajectory=pr.trajectory,
        ))
    return CensusResult(
        rate=flagged.size / n_paths,
        n_events=int(flagged.size),
        n_paths=n_paths,
        n_steps=n_steps,
        seed=seed,
        flagged_paths=tuple(int(i) for i in flagged),
        windows=tuple(windows),
    )
