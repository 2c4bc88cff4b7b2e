"""Backward Euler solver for the exact value recursion in ``(t, q)``.

This is the benchmark route: instead of assuming the reference maker never
undercuts the competitor, each side's flow term is maximised over the quote
with the capped fill probability, which kinks the Hamiltonian at the
competitor's level.  The resulting first-order system is integrated by an
explicit Euler sweep from the terminal condition; the hot loop is compiled
with numba when available and falls back to vectorised numpy otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DepthPair, ModelParams
from .policy import TabulatedDepthPolicy, interp_time_row, quote_from_g_row

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

__all__ = [
    "ValueGrid",
    "EulerPolicy",
    "euler_policy",
    "hamiltonian_side",
    "solve_backward",
    "terminal_condition",
]


def terminal_condition(params: ModelParams) -> np.ndarray:
    """Terminal row g(T, q) over the inventory grid."""
    qs = params.inventory_grid().astype(float)
    return (params.a_tilde - params.b_tilde) / 2.0 * qs \
        - (params.gamma - params.beta / 2.0) * qs**2


def hamiltonian_side(params: ModelParams, side: str, delta_g: float) -> float:
    """Maximised flow term of one book side.

    ``delta_g`` is the value change of the induced inventory move,
    ``g(t, q-1) - g(t, q)`` on the ask and ``g(t, q+1) - g(t, q)`` on the
    bid.  While the optimal spread-adjusted quote ``1/kappa - delta_g``
    stays at or above the competitor's level the exponential branch
    applies; below it the fill probability caps at one and the supremum is
    attained exactly at the competitor's level.  Both branches agree at the
    kink.
    """
    if side == "ask":
        lam, level = params.lambda_a, params.a_tilde
    elif side == "bid":
        lam, level = params.lambda_b, params.b_tilde
    else:
        raise ValueError(f"side must be 'ask' or 'bid', got {side!r}")
    if lam == 0.0:
        return 0.0
    k = params.kappa
    chi = level - params.beta / 2.0
    if 1.0 / k - delta_g >= chi:
        return (lam / k) * math.exp(-1.0 - k * (params.beta / 2.0 - level)) \
            * math.exp(k * delta_g)
    return lam * (chi + delta_g)


@dataclass(frozen=True)
class ValueGrid:
    """g(t, q) on a uniform time grid, from the backward Euler sweep."""

    time_grid: np.ndarray
    q_grid: np.ndarray
    g_values: np.ndarray
    truncated: bool  # True if the capped-probability branch was honoured

    def __post_init__(self):
        if self.g_values.shape != (self.time_grid.size, self.q_grid.size):
            raise ValueError("value grid shape does not match its grids")

    @property
    def horizon(self) -> float:
        return float(self.time_grid[-1])

    @property
    def n_steps(self) -> int:
        return self.time_grid.size - 1

    def g_row(self, t: float) -> np.ndarray:
        """g(t, .), interpolated linearly in time."""
        return interp_time_row(self.g_values, self.horizon, t)


def _sweep_numpy(g, dt, qs, phi, beta, lam_a, lam_b, kappa,
                 coef_a, coef_b, chi_a, chi_b, thr_a, thr_b, truncated):
    n_steps = g.shape[0] - 1
    static = -phi * qs**2 + (lam_a - lam_b) * beta * qs
    rhs = np.empty_like(qs)
    for i in range(n_steps - 1, -1, -1):
        nxt = g[i + 1]
        d_a = nxt[:-1] - nxt[1:]   # g(q-1) - g(q) for q above the lower bound
        d_b = nxt[1:] - nxt[:-1]   # g(q+1) - g(q) for q below the upper bound
        ham_a = coef_a * np.exp(kappa * d_a)
        ham_b = coef_b * np.exp(kappa * d_b)
        if truncated:
            ham_a = np.where(d_a <= thr_a, ham_a, lam_a * (chi_a + d_a))
            ham_b = np.where(d_b <= thr_b, ham_b, lam_b * (chi_b + d_b))
        rhs[:] = static
        rhs[1:] += ham_a
        rhs[:-1] += ham_b
        row = nxt + dt * rhs
        g[i] = row
        if not np.all(np.isfinite(row)):
            return i
    return -1


if _HAVE_NUMBA:

    @njit(cache=True)
    def _sweep_numba(g, dt, qs, phi, beta, lam_a, lam_b, kappa,
                     coef_a, coef_b, chi_a, chi_b, thr_a, thr_b, truncated):
        n_steps = g.shape[0] - 1
        nq = g.shape[1]
        for i in range(n_steps - 1, -1, -1):
            ok = True
            for j in range(nq):
                q = qs[j]
                rhs = -phi * q * q + (lam_a - lam_b) * beta * q
                if j > 0:
                    d = g[i + 1, j - 1] - g[i + 1, j]
                    if (not truncated) or d <= thr_a:
                        rhs += coef_a * math.exp(kappa * d)
                    else:
                        rhs += lam_a * (chi_a + d)
                if j < nq - 1:
                    d = g[i + 1, j + 1] - g[i + 1, j]
                    if (not truncated) or d <= thr_b:
                        rhs += coef_b * math.exp(kappa * d)
                    else:
                        rhs += lam_b * (chi_b + d)
                val = g[i + 1, j] + dt * rhs
                g[i, j] = val
                if not math.isfinite(val):
                    ok = False
            if not ok:
                return i
        return -1


def solve_backward(params: ModelParams, n_steps: int, truncated: bool = True,
                   backend: str = "auto") -> ValueGrid:
    """Sweep g backward from the terminal row over ``n_steps`` Euler steps.

    ``truncated=False`` drops the capped-probability branch and solves the
    same no-undercut recursion as the closed form, which is what the
    cross-solver checks compare against.  Explicit Euler is first order;
    stability at the default step counts is comfortable because the
    right-hand side is Lipschitz on the bounded g range.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if backend not in ("auto", "numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    use_numba = _HAVE_NUMBA and backend != "numpy"
    if backend == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")

    qs = params.inventory_grid().astype(float)
    dt = params.horizon / n_steps
    k = params.kappa
    coef_a = (params.lambda_a / k) * math.exp(-1.0 - k * (params.beta / 2.0 - params.a_tilde))
    coef_b = (params.lambda_b / k) * math.exp(-1.0 - k * (params.beta / 2.0 - params.b_tilde))
    chi_a = params.a_tilde - params.beta / 2.0
    chi_b = params.b_tilde - params.beta / 2.0

    g = np.empty((n_steps + 1, qs.size))
    g[n_steps] = terminal_condition(params)
    sweep = _sweep_numba if use_numba else _sweep_numpy
    bad = sweep(g, dt, qs, params.phi, params.beta, params.lambda_a,
                params.lambda_b, k, coef_a, coef_b, chi_a, chi_b,
                1.0 / k - chi_a, 1.0 / k - chi_b, truncated)
    if bad >= 0:
        raise FloatingPointError(
            f"backward sweep blew up at step {bad} (t = {bad * dt:.6g}); "
            "increase n_steps"
        )
    time_grid = np.linspace(0.0, params.horizon, n_steps + 1)
    return ValueGrid(time_grid=time_grid, q_grid=params.inventory_grid(),
                     g_values=g, truncated=truncated)


def euler_policy(params: ModelParams, grid: ValueGrid, t: float, q,
                 q_tilde=0, z=0.0) -> DepthPair:
    """Truncated depths quoted from the Euler value grid.

    Same depth formula as the closed form, evaluated on this grid's g.
    """
    return quote_from_g_row(params, grid.g_row(t), q, q_tilde, z, truncate=True)


class EulerPolicy(TabulatedDepthPolicy):
    """Simulation-ready strategy quoting truncated depths from an Euler grid."""

    def __init__(self, params: ModelParams, grid: ValueGrid | None = None,
                 n_steps: int = 100_000, truncated_solve: bool = True):
        if grid is None:
            grid = solve_backward(params, n_steps, truncated=truncated_solve)
        self.grid = grid
        super().__init__(params, grid.g_values, truncate=True)
