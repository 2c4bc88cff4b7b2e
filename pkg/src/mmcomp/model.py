"""Core market model: parameters, state, competitor rule and payoff accounting.

All quotes are expressed as depths, i.e. distances from the unaffected
mid-price (ask above, bid below).  The competing market makers are pooled
into a single competitor quoting ``a_tilde - beta*q_tilde - z`` on the ask
and ``b_tilde + beta*q_tilde + z`` on the bid, a linear rule with constant
bid-ask spread.  The base levels ``a_tilde``/``b_tilde`` already include
the one-tick generosity bonus, so the fill law compares depths directly
and no explicit tick term appears anywhere; the ``tick`` field is kept for
reporting only.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "DepthPair",
    "ModelParams",
    "SimState",
    "MODEL_PARAM_KEYS",
    "competitor_depths",
    "fill_probability",
    "mark_to_market",
    "params_from_strings",
    "params_to_config_text",
    "terminal_value",
]


@dataclass(frozen=True)
class ModelParams:
    """Market and preference constants shared by solvers, simulator and CLI."""

    s0: float        # initial mid-price
    sigma: float     # mid-price volatility (price / sqrt(time))
    horizon: float   # trading horizon T
    lambda_a: float  # buy market-order intensity (hits the ask side)
    lambda_b: float  # sell market-order intensity (hits the bid side)
    kappa: float     # fill-probability decay rate (1 / price)
    beta: float      # competitor depth sensitivity to his inventory
    a_tilde: float   # competitor base ask level, tick already absorbed
    b_tilde: float   # competitor base bid level, tick already absorbed
    q_min: int       # lowest admissible reference inventory (< 0)
    q_max: int       # highest admissible reference inventory (> 0)
    phi: float       # running inventory penalty (price / unit^2 / time)
    gamma: float     # terminal inventory penalty (price / unit^2)
    sigma_z: float   # volatility of the competitor noise term
    tick: float = 0.0  # tick size, informational only

    def __post_init__(self):
        problems = _param_violations(self)
        if problems:
            raise ValueError("invalid model parameters: " + "; ".join(problems))

    @property
    def n_inventory(self) -> int:
        """Number of admissible inventory levels q_min..q_max."""
        return self.q_max - self.q_min + 1

    def inventory_grid(self) -> np.ndarray:
        """Integer inventory levels q_min..q_max inclusive."""
        return np.arange(self.q_min, self.q_max + 1)


MODEL_PARAM_KEYS = tuple(f.name for f in fields(ModelParams))

_INT_KEYS = ("q_min", "q_max")


def _param_violations(p) -> list[str]:
    """All constraint violations of a (possibly raw) parameter set, by field."""
    problems = []

    def bad(name, msg):
        problems.append(f"{name} {msg} (got {getattr(p, name)!r})")

    for name in MODEL_PARAM_KEYS:
        value = getattr(p, name)
        if name in _INT_KEYS:
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                bad(name, "must be an integer")
        elif not np.isfinite(value):
            bad(name, "must be a finite number")
    if problems:
        return problems

    # Degenerate markets (no flow, no diffusion) are allowed for testing, so
    # intensities and volatilities are only required to be nonnegative.
    for name in ("sigma", "lambda_a", "lambda_b", "sigma_z", "gamma", "phi", "tick"):
        if getattr(p, name) < 0:
            bad(name, "must be >= 0")
    for name in ("horizon", "kappa", "beta", "a_tilde", "b_tilde"):
        if getattr(p, name) <= 0:
            bad(name, "must be > 0")
    if p.q_min >= 0:
        bad("q_min", "must be < 0")
    if p.q_max <= 0:
        bad("q_max", "must be > 0")
    return problems


def params_to_config_text(params: ModelParams) -> str:
    """Render parameters as flat ``key = value`` lines (decimal text numbers)."""
    lines = [f"{name} = {getattr(params, name)!r}" for name in MODEL_PARAM_KEYS]
    return "\n".join(lines) + "\n"


def params_from_strings(values: dict[str, str]) -> tuple[ModelParams | None, list[str]]:
    """Build ModelParams from string values, collecting every violation.

    Returns ``(params, [])`` on success or ``(None, problems)`` where each
    problem names the offending key.  Unknown keys are an error.
    """
    problems = [f"unknown key: {k}" for k in values if k not in MODEL_PARAM_KEYS]
    missing = [k for k in MODEL_PARAM_KEYS if k not in values]
    problems += [f"missing required key: {k}" for k in missing]

    parsed = {}
    for name in MODEL_PARAM_KEYS:
        if name not in values:
            continue
        raw = values[name].strip()
        try:
            if name in _INT_KEYS:
                parsed[name] = int(raw)
            else:
                parsed[name] = float(raw)
        except ValueError:
            problems.append(f"{name}: not a valid number: {raw!r}")
    if problems:
        return None, problems
    try:
        return ModelParams(**parsed), []
    except ValueError as exc:
        text = str(exc).removeprefix("invalid model parameters: ")
        return None, text.split("; ")


@dataclass(frozen=True)
class SimState:
    """One market snapshot.

    ``running_penalty`` accumulates ``phi * q**2 * dt`` along the path and is
    nondecreasing; ``q`` stays within the inventory bounds at all times while
    ``q_tilde`` (the competitor inventory) is unbounded.
    """

    t: float
    s: float              # unaffected mid-price
    x: float              # reference maker cash
    q: int                # reference maker inventory
    q_tilde: int          # competitor inventory
    z: float              # competitor noise level
    running_penalty: float = 0.0


@dataclass(frozen=True)
class DepthPair:
    """Ask/bid depths with posting and truncation flags.

    Fields hold floats or aligned numpy arrays (one entry per path).  A side
    suppressed by the inventory bound carries ``*_posted = False`` and a NaN
    depth; ``*_truncated`` marks quotes lifted up to the competitor's level.
    """

    ask: float | np.ndarray
    bid: float | np.ndarray
    ask_posted: bool | np.ndarray = True
    bid_posted: bool | np.ndarray = True
    ask_truncated: bool | np.ndarray = False
    bid_truncated: bool | np.ndarray = False


def competitor_depths(params: ModelParams, q_tilde, z) -> DepthPair:
    """Competitor's posted depths for his inventory ``q_tilde`` and noise ``z``.

    Linear rule with constant spread ``a_tilde + b_tilde``; both sides are
    always posted and may go negative for extreme inventory or noise (the
    rule is deliberately unclamped).
    """
    w = params.beta * q_tilde + z
    return DepthPair(ask=params.a_tilde - w, bid=params.b_tilde + w)


def fill_probability(params: ModelParams, my_depth, competitor_depth):
    """Chance an arriving market order trades with the reference maker.

    ``min(exp(-kappa*(my_depth - competitor_depth)), 1)``: quoting at or
    better than the competitor wins the order for sure, quoting above it
    decays exponentially but never to zero.
    """
    return np.minimum(np.exp(-params.kappa * (my_depth - competitor_depth)), 1.0)


def mark_to_market(params: ModelParams, q, s, q_tilde, z):
    """Inventory value marked at the competitor's mid-price."""
    half_skew = (params.a_tilde - params.b_tilde) / 2.0
    return q * (s + half_skew - params.beta * q_tilde - z)


def terminal_value(params: ModelParams, state: SimState) -> float:
    """Realized objective of one finished path.

    Cash plus terminal inventory marked at the competitor mid, less the
    quadratic liquidation penalty and the accumulated running penalty.
    """
    mark = mark_to_market(params, state.q, state.s, state.q_tilde, state.z)
    return state.x + mark - params.gamma * state.q**2 - state.running_penalty
