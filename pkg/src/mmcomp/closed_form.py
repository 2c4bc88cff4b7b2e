"""Approximate closed-form quoting policy via a linear inventory ODE system.

Under the linear-quadratic ansatz, assuming the reference maker never wants
to undercut the competitor, the substitution ``omega = exp(kappa*g)`` turns
the value recursion in ``(t, q)`` into a linear ODE system whose solution
is ``omega(t) = exp(A*(T-t)) @ v`` for a tridiagonal generator ``A`` and
positive terminal data ``v``.  The optimal depths follow from ratios of
neighbouring omega entries, truncated at the competitor's level where the
no-undercut assumption fails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .expm import expm
from .model import DepthPair, ModelParams
from .policy import TabulatedDepthPolicy, interp_time_row, quote_from_g_row

__all__ = [
    "OmegaTable",
    "ClosedFormPolicy",
    "approximation_residual",
    "build_generator",
    "hat_depths",
    "solve_omega",
    "terminal_vector",
    "truncated_depths",
]


def _require_symmetric_bounds(params: ModelParams):
    if params.q_max != -params.q_min:
        raise ValueError(
            "closed-form solver requires symmetric inventory bounds "
            f"(q_max == -q_min), got [{params.q_min}, {params.q_max}]"
        )


def _fill_coefficients(params: ModelParams) -> tuple[float, float]:
    """Arrival intensities damped by the optimally-quoted fill probability."""
    k = params.kappa
    coef_a = params.lambda_a * math.exp(-1.0 - k * (params.beta / 2.0 - params.a_tilde))
    coef_b = params.lambda_b * math.exp(-1.0 - k * (params.beta / 2.0 - params.b_tilde))
    return coef_a, coef_b


def build_generator(params: ModelParams) -> np.ndarray:
    """Tridiagonal generator of the inventory ODE system.

    Row q carries the quadratic inventory drag on the diagonal, the ask-fill
    coupling to level q-1 on the subdiagonal and the bid-fill coupling to
    level q+1 on the superdiagonal; with this orientation
    ``omega(t) = exp(A*(T-t)) @ v`` solves the value recursion.
    """
    _require_symmetric_bounds(params)
    qs = params.inventory_grid().astype(float)
    n = params.n_inventory
    k = params.kappa
    coef_a, coef_b = _fill_coefficients(params)

    gen = np.zeros((n, n))
    idx = np.arange(n)
    gen[idx, idx] = -params.phi * k * qs**2 \
        + params.beta * k * (params.lambda_a - params.lambda_b) * qs
    gen[idx[1:], idx[1:] - 1] = coef_a
    gen[idx[:-1], idx[:-1] + 1] = coef_b
    return gen


def terminal_vector(params: ModelParams) -> np.ndarray:
    """Strictly positive terminal data of the ODE system, indexed q_min..q_max."""
    qs = params.inventory_grid().astype(float)
    k = params.kappa
    skew = (params.a_tilde - params.b_tilde) / 2.0
    return np.exp(k * (skew * qs - (params.gamma - params.beta / 2.0) * qs**2))


@dataclass(frozen=True)
class OmegaTable:
    """Solution omega(t, q) on a uniform time grid times the inventory grid.

    ``values[i, j] = omega(time_grid[i], q_grid[j])``, strictly positive,
    with the last row equal to the terminal vector.
    """

    time_grid: np.ndarray
    q_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.time_grid.size, self.q_grid.size):
            raise ValueError("omega table shape does not match its grids")

    @property
    def horizon(self) -> float:
        return float(self.time_grid[-1])

    @cached_property
    def _log_values(self) -> np.ndarray:
        return np.log(self.values)

    def log_omega_row(self, t: float) -> np.ndarray:
        """log(omega(t, .)), interpolated linearly in log space."""
        return interp_time_row(self._log_values, self.horizon, t)

    def omega_row(self, t: float) -> np.ndarray:
        return np.exp(self.log_omega_row(t))

    def g_row(self, t: float, kappa: float) -> np.ndarray:
        """Value component g(t, .) = log(omega(t, .)) / kappa."""
        return self.log_omega_row(t) / kappa


def solve_omega(params: ModelParams, n_time: int = 1000) -> OmegaTable:
    """Tabulate omega on ``n_time + 1`` uniform times from 0 to the horizon.

    The exponential of the generator over one grid step is formed once and
    applied repeatedly backward from the terminal vector.
    """
    if n_time < 1:
        raise ValueError(f"n_time must be >= 1, got {n_time}")
    gen = build_generator(params)
    v = terminal_vector(params)
    dt = params.horizon / n_time

    step = expm(gen * dt)
    values = np.empty((n_time + 1, v.size))
    values[n_time] = v
    for i in range(n_time - 1, -1, -1):
        values[i] = step @ values[i + 1]
    if not np.all(values > 0.0):
        raise ArithmeticError(
            "omega lost strict positivity (underflow); parameters are too "
            "extreme for a double-precision tabulation"
        )
    time_grid = np.linspace(0.0, params.horizon, n_time + 1)
    return OmegaTable(time_grid=time_grid, q_grid=params.inventory_grid(), values=values)


def hat_depths(params: ModelParams, omega: OmegaTable, t: float, q,
               q_tilde=0, z=0.0) -> DepthPair:
    """Unrestrained optimal depths at ``(t, q, q_tilde, z)`` (no truncation)."""
    return quote_from_g_row(params, omega.g_row(t, params.kappa), q, q_tilde, z,
                            truncate=False)


def truncated_depths(params: ModelParams, omega: OmegaTable, t: float, q,
                     q_tilde=0, z=0.0) -> DepthPair:
    """Depths actually quoted: hat depths lifted to the competitor's level.

    This is the policy used in every simulation; the truncation flags mark
    the generosity events where the lift was binding.
    """
    return quote_from_g_row(params, omega.g_row(t, params.kappa), q, q_tilde, z,
                            truncate=True)


def approximation_residual(params: ModelParams, omega: OmegaTable) -> np.ndarray:
    """Residual of the no-undercut value recursion for g = log(omega)/kappa.

    The time derivative is replaced by a centered difference on the omega
    grid, so the result has one row per interior grid time.  A residual
    uniformly near zero certifies both the solver and the generator
    orientation.
    """
    k = params.kappa
    g = omega._log_values / k
    dt = float(omega.time_grid[1] - omega.time_grid[0])
    qs = omega.q_grid.astype(float)
    coef_a, coef_b = _fill_coefficients(params)

    dgdt = (g[2:] - g[:-2]) / (2.0 * dt)
    mid = g[1:-1]
    res = dgdt - params.phi * qs**2 \
        + (params.lambda_a - params.lambda_b) * params.beta * qs
    res[:, 1:] += (coef_a / k) * np.exp(-k * (mid[:, 1:] - mid[:, :-1]))
    res[:, :-1] += (coef_b / k) * np.exp(-k * (mid[:, :-1] - mid[:, 1:]))
    return res


class ClosedFormPolicy(TabulatedDepthPolicy):
    """Simulation-ready strategy quoting the truncated closed-form depths."""

    def __init__(self, params: ModelParams, omega: OmegaTable | None = None,
                 n_time: int = 1000):
        if omega is None:
            omega = solve_omega(params, n_time)
        self.omega = omega
        super().__init__(params, omega._log_values / params.kappa, truncate=True)
