"""Quoting strategies: the strategy contract, table-backed policies, baselines.

A strategy maps the observable state ``(t, q, q_tilde, z)`` to a
:class:`~mmcomp.model.DepthPair`.  Inputs may be scalars or aligned numpy
arrays (one entry per simulated path); outputs match.  Strategies must not
post on a side suppressed by the inventory bounds.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .model import DepthPair, ModelParams, competitor_depths

__all__ = [
    "Strategy",
    "TabulatedDepthPolicy",
    "ConstantDepthStrategy",
    "CompetitorMatchStrategy",
    "interp_time_row",
    "quote_from_g_row",
]

# Fractional grid offsets below this snap to the nearest table row, so
# queries at nominal grid times survive accumulated float drift in t.
_SNAP = 1e-9


class Strategy(Protocol):
    """Callable contract consumed by the simulator."""

    def quotes(self, t, q, q_tilde, z) -> DepthPair: ...


def interp_time_row(table, horizon: float, t: float) -> np.ndarray:
    """Row of a uniform-in-time table at ``t``, linearly interpolated.

    Queries outside ``[0, horizon]`` clamp to the boundary rows.
    """
    n_time = table.shape[0] - 1
    u = (t / horizon) * n_time
    if u <= 0.0:
        return table[0]
    if u >= n_time:
        return table[n_time]
    i = int(u)
    frac = u - i
    if frac < _SNAP:
        return table[i]
    if frac > 1.0 - _SNAP:
        return table[i + 1]
    return (1.0 - frac) * table[i] + frac * table[i + 1]


def _as_inventory_index(params: ModelParams, q) -> np.ndarray:
    q_arr = np.asarray(q)
    if q_arr.dtype.kind == "f":
        rounded = np.rint(q_arr)
        if not np.all(rounded == q_arr):
            raise ValueError("inventory must be integer-valued")
        q_arr = rounded.astype(np.int64)
    if np.any(q_arr < params.q_min) or np.any(q_arr > params.q_max):
        raise ValueError(
            f"inventory outside [{params.q_min}, {params.q_max}]"
        )
    return q_arr


def quote_from_g_row(params: ModelParams, g_row, q, q_tilde, z,
                     truncate: bool = True) -> DepthPair:
    """Optimal depths for one time slice of the value component ``g``.

    The unrestrained ask depth is ``beta/2 + 1/kappa + g(q) - g(q-1)`` minus
    the competitor tilt ``beta*q_tilde + z`` (mirrored on the bid).  With
    ``truncate`` the quote is lifted to the competitor's level whenever it
    would undercut him, and the truncation flag records that.  Sides at
    their inventory bound come back unposted with NaN depth.
    """
    g_row = np.asarray(g_row, dtype=float)
    if g_row.shape != (params.n_inventory,):
        raise ValueError(
            f"g row of shape {g_row.shape} does not match "
            f"{params.n_inventory} inventory levels"
        )
    q_arr = _as_inventory_index(params, q)
    scalar = q_arr.ndim == 0

    j = q_arr - params.q_min
    posted_a = q_arr > params.q_min
    posted_b = q_arr < params.q_max
    diff_a = np.where(posted_a, g_row[j] - g_row[np.maximum(j - 1, 0)], np.nan)
    diff_b = np.where(posted_b, g_row[j] - g_row[np.minimum(j + 1, g_row.size - 1)], np.nan)

    base = params.beta / 2.0 + 1.0 / params.kappa
    tilt = params.beta * np.asarray(q_tilde) + np.asarray(z)
    hat_a = (base + diff_a) - tilt
    hat_b = (base + diff_b) + tilt

    if truncate:
        comp_a = params.a_tilde - tilt
        comp_b = params.b_tilde + tilt
        ask = np.maximum(hat_a, comp_a)
        bid = np.maximum(hat_b, comp_b)
        trunc_a = posted_a & (hat_a < comp_a)
        trunc_b = posted_b & (hat_b < comp_b)
    else:
        ask, bid = hat_a, hat_b
        trunc_a = np.zeros_like(posted_a)
        trunc_b = np.zeros_like(posted_b)

    if scalar:
        return DepthPair(float(ask), float(bid), bool(posted_a), bool(posted_b),
                         bool(trunc_a), bool(trunc_b))
    return DepthPair(ask, bid, posted_a, posted_b, trunc_a, trunc_b)


class TabulatedDepthPolicy:
    """Strategy quoting from a uniform (time x inventory) table of ``g``.

    Rows are interpolated linearly in time, which for the closed-form table
    is linear interpolation of ``log(omega)`` and therefore keeps the
    underlying positive quantity positive.
    """

    def __init__(self, params: ModelParams, g_table, truncate: bool = True):
        g_table = np.asarray(g_table, dtype=float)
        if g_table.ndim != 2 or g_table.shape[1] != params.n_inventory:
            raise ValueError(
                f"g table of shape {g_table.shape} does not match "
                f"{params.n_inventory} inventory levels"
            )
        self.params = params
        self.truncate = truncate
        self._g_table = g_table

    def g_row(self, t: float) -> np.ndarray:
        return interp_time_row(self._g_table, self.params.horizon, t)

    def quotes(self, t, q, q_tilde, z) -> DepthPair:
        return quote_from_g_row(self.params, self.g_row(t), q, q_tilde, z,
                                truncate=self.truncate)


def _mask_unposted(params: ModelParams, q, ask, bid) -> DepthPair:
    """Apply the inventory-bound posting rule to raw side depths."""
    q_arr = _as_inventory_index(params, q)
    scalar = q_arr.ndim == 0
    posted_a = q_arr > params.q_min
    posted_b = q_arr < params.q_max
    ask = np.where(posted_a, ask, np.nan)
    bid = np.where(posted_b, bid, np.nan)
    if scalar:
        return DepthPair(float(ask), float(bid), bool(posted_a), bool(posted_b))
    return DepthPair(ask, bid, posted_a, posted_b,
                     np.zeros_like(posted_a), np.zeros_like(posted_b))


class ConstantDepthStrategy:
    """Posts fixed ask/bid depths whenever the inventory bound allows."""

    def __init__(self, params: ModelParams, ask: float, bid: float):
        self.params = params
        self.ask = float(ask)
        self.bid = float(bid)

    def quotes(self, t, q, q_tilde, z) -> DepthPair:
        return _mask_unposted(self.params, q, self.ask, self.bid)


class CompetitorMatchStrategy:
    """Mirrors the competitor's depths exactly, so every posted side fills."""

    def __init__(self, params: ModelParams):
        self.params = params

    def quotes(self, t, q, q_tilde, z) -> DepthPair:
        comp = competitor_depths(self.params, q_tilde, z)
        return _mask_unposted(self.params, q, comp.ask, comp.bid)
