"""Discrete-time simulator of the two-maker market.

Each step reads quotes at the pre-step state (left limits), thins the
Poisson flows into at-most-one arrival per side (Bernoulli with probability
``lambda*dt``), settles fills at the pre-step price, accrues the running
penalty on post-fill inventory and finally moves the two diffusions.  An
arrival not filled by the reference maker is always filled by the
competitor, whose inventory adjusts his future quotes.

Randomness comes from counter-based Philox substreams keyed by
``(master seed, path index, stream role)``, so every path is reproducible
in isolation and rival strategies see identical draws (common random
numbers by construction).  Each step consumes a fixed draw budget - one
normal per diffusion, one uniform per side for arrivals and one uniform
per side for fill resolution - whether or not an arrival occurs, keeping
scalar and batched execution bit-identical.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .model import (
    DepthPair,
    ModelParams,
    SimState,
    competitor_depths,
    fill_probability,
    mark_to_market,
)

__all__ = [
    "ROLE_PRICE",
    "ROLE_NOISE",
    "ROLE_BUY",
    "ROLE_SELL",
    "ROLE_FILL",
    "BatchResult",
    "MarketMakingEnv",
    "PathResult",
    "StepDraws",
    "StepEvents",
    "Trajectory",
    "run_path",
    "simulate_paths",
    "step",
    "substream",
]

ROLE_PRICE, ROLE_NOISE, ROLE_BUY, ROLE_SELL, ROLE_FILL = range(5)


def substream(seed: int, path_index: int, role: int) -> np.random.Generator:
    """Counter-based generator for one ``(path, role)`` pair under a seed."""
    ss = np.random.SeedSequence(seed, spawn_key=(path_index, role))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class StepDraws:
    """Random inputs of one simulation step (floats or aligned arrays)."""

    price_normal: float | np.ndarray
    noise_normal: float | np.ndarray
    buy_uniform: float | np.ndarray
    sell_uniform: float | np.ndarray
    fill_uniform_ask: float | np.ndarray
    fill_uniform_bid: float | np.ndarray


@dataclass(frozen=True)
class StepEvents:
    """What happened within one step, with the quotes that were in force."""

    arrival_ask: bool
    arrival_bid: bool
    ref_fill_ask: bool
    ref_fill_bid: bool
    comp_fill_ask: bool
    comp_fill_bid: bool
    ask: float
    bid: float
    comp_ask: float
    comp_bid: float
    ask_truncated: bool
    bid_truncated: bool


@dataclass(frozen=True)
class Trajectory:
    """Per-step record of one simulated path (pre-step state plus events)."""

    t: np.ndarray
    s: np.ndarray
    z: np.ndarray
    q: np.ndarray
    q_tilde: np.ndarray
    x: np.ndarray
    running_penalty: np.ndarray
    ask: np.ndarray
    bid: np.ndarray
    ask_posted: np.ndarray
    bid_posted: np.ndarray
    ask_truncated: np.ndarray
    bid_truncated: np.ndarray
    comp_ask: np.ndarray
    comp_bid: np.ndarray
    arrival_ask: np.ndarray
    arrival_bid: np.ndarray
    ref_fill_ask: np.ndarray
    ref_fill_bid: np.ndarray
    comp_fill_ask: np.ndarray
    comp_fill_bid: np.ndarray

    def __len__(self) -> int:
        return self.t.size


@dataclass(frozen=True)
class PathResult:
    """Outcome of one simulated path."""

    objective: float
    fills_ask: int
    fills_bid: int
    comp_fills_ask: int
    comp_fills_bid: int
    generosity_event: bool
    final_state: SimState
    trajectory: Trajectory | None = None


@dataclass(frozen=True)
class BatchResult:
    """Per-path outcome arrays for a block of simulated paths."""

    objectives: np.ndarray
    fills_ask: np.ndarray
    fills_bid: np.ndarray
    comp_fills_ask: np.ndarray
    comp_fills_bid: np.ndarray
    generosity: np.ndarray
    n_steps: int
    seed: int

    @property
    def n_paths(self) -> int:
        return self.objectives.size


def _check_posting(params: ModelParams, quote: DepthPair, q):
    if np.any(np.asarray(quote.ask_posted) & (np.asarray(q) == params.q_min)):
        raise ValueError("strategy posted an ask at the lower inventory bound")
    if np.any(np.asarray(quote.bid_posted) & (np.asarray(q) == params.q_max)):
        raise ValueError("strategy posted a bid at the upper inventory bound")


def _advance(params: ModelParams, state: dict, quote: DepthPair, comp: DepthPair,
             dt: float, price_n, noise_n, buy_u, sell_u, fill_u_a, fill_u_b):
    """One market step on aligned state arrays, in place; returns event masks."""
    s = state["s"]
    x = state["x"]
    q = state["q"]
    qt = state["q_tilde"]
    z = state["z"]

    p_ask = np.where(quote.ask_posted,
                     fill_probability(params, quote.ask, comp.ask), 0.0)
    p_bid = np.where(quote.bid_posted,
                     fill_probability(params, quote.bid, comp.bid), 0.0)
    arr_a = buy_u < params.lambda_a * dt
    arr_b = sell_u < params.lambda_b * dt
    ref_a = arr_a & (fill_u_a < p_ask)
    ref_b = arr_b & (fill_u_b < p_bid)
    comp_a = arr_a & ~ref_a
    comp_b = arr_b & ~ref_b

    x += np.where(ref_a, s + quote.ask, 0.0)
    x -= np.where(ref_b, s - quote.bid, 0.0)
    q += ref_b.astype(np.int64)
    q -= ref_a.astype(np.int64)
    qt += comp_b.astype(np.int64)
    qt -= comp_a.astype(np.int64)

    state["penalty"] += params.phi * dt * (q * q)

    s += params.sigma * math.sqrt(dt) * price_n
    z += params.sigma_z * math.sqrt(dt) * noise_n
    return arr_a, arr_b, ref_a, ref_b, comp_a, comp_b


def step(params: ModelParams, state: SimState, strategy, dt: float,
         draws: StepDraws) -> tuple[SimState, StepEvents]:
    """Advance one step from ``state`` under ``strategy``; scalar interface."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if state.t + dt > params.horizon * (1.0 + 1e-9) + 1e-12:
        raise ValueError("step would overrun the trading horizon")
    arrs = {
        "s": np.array([state.s]),
        "x": np.array([state.x]),
        "z": np.array([state.z]),
        "q": np.array([state.q], dtype=np.int64),
        "q_tilde": np.array([state.q_tilde], dtype=np.int64),
        "penalty": np.array([state.running_penalty]),
    }
    quote = strategy.quotes(state.t, arrs["q"], arrs["q_tilde"], arrs["z"])
    _check_posting(params, quote, arrs["q"])
    comp = competitor_depths(params, arrs["q_tilde"], arrs["z"])
    ev = _advance(params, arrs, quote, comp, dt,
                  draws.price_normal, draws.noise_normal,
                  draws.buy_uniform, draws.sell_uniform,
                  draws.fill_uniform_ask, draws.fill_uniform_bid)
    new_state = SimState(
        t=state.t + dt,
        s=float(arrs["s"][0]),
        x=float(arrs["x"][0]),
        q=int(arrs["q"][0]),
        q_tilde=int(arrs["q_tilde"][0]),
        z=float(arrs["z"][0]),
        running_penalty=float(arrs["penalty"][0]),
    )
    first = [bool(np.asarray(m).reshape(-1)[0]) for m in ev]
    events = StepEvents(
        arrival_ask=first[0], arrival_bid=first[1],
        ref_fill_ask=first[2], ref_fill_bid=first[3],
        comp_fill_ask=first[4], comp_fill_bid=first[5],
        ask=float(np.asarray(quote.ask).reshape(-1)[0]),
        bid=float(np.asarray(quote.bid).reshape(-1)[0]),
        comp_ask=float(np.asarray(comp.ask).reshape(-1)[0]),
        comp_bid=float(np.asarray(comp.bid).reshape(-1)[0]),
        ask_truncated=bool(np.asarray(quote.ask_truncated).reshape(-1)[0]),
        bid_truncated=bool(np.asarray(quote.bid_truncated).reshape(-1)[0]),
    )
    return new_state, events


def _draw_block(seed: int, path_indices, n_steps: int) -> dict[str, np.ndarray]:
    """Draw arrays of shape (n_steps, n_paths) for all five stream roles."""
    n = len(path_indices)
    cols = {
        "price": np.empty((n, n_steps)),
        "noise": np.empty((n, n_steps)),
        "buy": np.empty((n, n_steps)),
        "sell": np.empty((n, n_steps)),
        "fill_a": np.empty((n, n_steps)),
        "fill_b": np.empty((n, n_steps)),
    }
    for row, idx in enumerate(path_indices):
        cols["price"][row] = substream(seed, idx, ROLE_PRICE).standard_normal(n_steps)
        cols["noise"][row] = substream(seed, idx, ROLE_NOISE).standard_normal(n_steps)
        cols["buy"][row] = substream(seed, idx, ROLE_BUY).random(n_steps)
        cols["sell"][row] = substream(seed, idx, ROLE_SELL).random(n_steps)
        f = substream(seed, idx, ROLE_FILL).random((n_steps, 2))
        cols["fill_a"][row] = f[:, 0]
        cols["fill_b"][row] = f[:, 1]
    return {k: np.ascontiguousarray(v.T) for k, v in cols.items()}


class _Recorder:
    """Collects the per-step trajectory of a single-path block."""

    _FLOATS = ("t", "s", "z", "x", "running_penalty", "ask", "bid",
               "comp_ask", "comp_bid")
    _INTS = ("q", "q_tilde")
    _BOOLS = ("ask_posted", "bid_posted", "ask_truncated", "bid_truncated",
              "arrival_ask", "arrival_bid", "ref_fill_ask", "ref_fill_bid",
              "comp_fill_ask", "comp_fill_bid")

    def __init__(self, n_steps: int):
        self.cols = {name: np.empty(n_steps) for name in self._FLOATS}
        self.cols |= {name: np.empty(n_steps, np.int64) for name in self._INTS}
        self.cols |= {name: np.empty(n_steps, bool) for name in self._BOOLS}

    def pre_step(self, i, t, state, quote, comp):
        c = self.cols
        c["t"][i] = t
        c["s"][i] = state["s"][0]
        c["z"][i] = state["z"][0]
        c["x"][i] = state["x"][0]
        c["running_penalty"][i] = state["penalty"][0]
        c["q"][i] = state["q"][0]
        c["q_tilde"][i] = state["q_tilde"][0]
        for name, val in (("ask", quote.ask), ("bid", quote.bid),
                          ("comp_ask", comp.ask), ("comp_bid", comp.bid)):
            c[name][i] = np.asarray(val).reshape(-1)[0]
        for name, val in (("ask_posted", quote.ask_posted),
                          ("bid_posted", quote.bid_posted),
                          ("ask_truncated", quote.ask_truncated),
                          ("bid_truncated", quote.bid_truncated)):
            c[name][i] = np.asarray(val).reshape(-1)[0]

    def events(self, i, ev):
        names = ("arrival_ask", "arrival_bid", "ref_fill_ask", "ref_fill_bid",
                 "comp_fill_ask", "comp_fill_bid")
        for name, mask in zip(names, ev):
            self.cols[name][i] = np.asarray(mask).reshape(-1)[0]

    def trajectory(self) -> Trajectory:
        return Trajectory(**self.cols)


def _run_block(params: ModelParams, strategy, path_indices, n_steps: int,
               seed: int, record: bool = False):
    n = len(path_indices)
    if record and n != 1:
        raise ValueError("trajectory recording works on single-path blocks")
    dt = params.horizon / n_steps
    draws = _draw_block(seed, path_indices, n_steps)
    state = {
        "s": np.full(n, float(params.s0)),
        "x": np.zeros(n),
        "z": np.zeros(n),
        "q": np.zeros(n, np.int64),
        "q_tilde": np.zeros(n, np.int64),
        "penalty": np.zeros(n),
    }
    fills_a = np.zeros(n, np.int64)
    fills_b = np.zeros(n, np.int64)
    comp_fills_a = np.zeros(n, np.int64)
    comp_fills_b = np.zeros(n, np.int64)
    generosity = np.zeros(n, bool)
    recorder = _Recorder(n_steps) if record else None

    t = 0.0
    for i in range(n_steps):
        quote = strategy.quotes(t, state["q"], state["q_tilde"], state["z"])
        _check_posting(params, quote, state["q"])
        comp = competitor_depths(params, state["q_tilde"], state["z"])
        if recorder is not None:
            recorder.pre_step(i, t, state, quote, comp)
        ev = _advance(params, state, quote, comp, dt,
                      draws["price"][i], draws["noise"][i],
                      draws["buy"][i], draws["sell"][i],
                      draws["fill_a"][i], draws["fill_b"][i])
        if recorder is not None:
            recorder.events(i, ev)
        fills_a += ev[2]
        fills_b += ev[3]
        comp_fills_a += ev[4]
        comp_fills_b += ev[5]
        generosity |= np.asarray(quote.ask_truncated, bool)
        generosity |= np.asarray(quote.bid_truncated, bool)
        t += dt

    objective = state["x"] \
        + mark_to_market(params, state["q"], state["s"], state["q_tilde"], state["z"]) \
        - params.gamma * state["q"].astype(float) ** 2 - state["penalty"]
    return state, objective, fills_a, fills_b, comp_fills_a, comp_fills_b, \
        generosity, recorder


def simulate_paths(params: ModelParams, strategy, n_paths: int, n_steps: int,
                   seed: int, n_threads: int = 1,
                   block_size: int = 1024) -> BatchResult:
    """Run paths 0..n_paths-1 and collect per-path outcomes.

    Paths are advanced in vectorised blocks; blocks are independent given
    their substreams, so thread scheduling cannot change any result.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    blocks = [range(start, min(start + block_size, n_paths))
              for start in range(0, n_paths, block_size)]

    def run(block):
        return _run_block(params, strategy, list(block), n_steps, seed)

    if n_threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]

    return BatchResult(
        objectives=np.concatenate([r[1] for r in results]),
        fills_ask=np.concatenate([r[2] for r in results]),
        fills_bid=np.concatenate([r[3] for r in results]),
        comp_fills_ask=np.concatenate([r[4] for r in results]),
        comp_fills_bid=np.concatenate([r[5] for r in results]),
        generosity=np.concatenate([r[6] for r in results]),
        n_steps=n_steps,
        seed=seed,
    )


def run_path(params: ModelParams, strategy, n_steps: int, seed: int,
             path_index: int = 0, record_trajectory: bool = False) -> PathResult:
    """Simulate one path from a flat start; deterministic given the seed."""
    state, objective, fa, fb, ca, cb, gen, recorder = _run_block(
        params, strategy, [path_index], n_steps, seed, record=record_trajectory)
    final = SimState(
        t=params.horizon,
        s=float(state["s"][0]),
        x=float(state["x"][0]),
        q=int(state["q"][0]),
        q_tilde=int(state["q_tilde"][0]),
        z=float(state["z"][0]),
        running_penalty=float(state["penalty"][0]),
    )
    return PathResult(
        objective=float(objective[0]),
        fills_ask=int(fa[0]),
        fills_bid=int(fb[0]),
        comp_fills_ask=int(ca[0]),
        comp_fills_bid=int(cb[0]),
        generosity_event=bool(gen[0]),
        final_state=final,
        trajectory=recorder.trajectory() if recorder is not None else None,
    )


class MarketMakingEnv:
    """Reset/step environment over the same dynamics, for external control.

    The per-step reward is the cash increment plus the mark-to-market
    increment of the inventory (at the competitor mid) minus the running
    penalty accrual; the terminal inventory penalty is charged on the last
    step.  Episode rewards therefore sum to the path objective that
    :func:`run_path` reports for the same draws.
    """

    def __init__(self, params: ModelParams, n_steps: int):
        if n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {n_steps}")
        self.params = params
        self.n_steps = n_steps
        self.dt = params.horizon / n_steps
        self._state = None
        self._cursor = 0

    def reset(self, seed: int, path_index: int = 0) -> SimState:
        """Start a fresh episode on the substreams of ``(seed, path_index)``."""
        self._draws = _draw_block(seed, [path_index], self.n_steps)
        self._state = {
            "s": np.array([float(self.params.s0)]),
            "x": np.zeros(1),
            "z": np.zeros(1),
            "q": np.zeros(1, np.int64),
            "q_tilde": np.zeros(1, np.int64),
            "penalty": np.zeros(1),
        }
        self._cursor = 0
        self._t = 0.0
        return self.state

    @property
    def state(self) -> SimState:
        if self._state is None:
            raise RuntimeError("environment not reset")
        st = self._state
        return SimState(t=self._t, s=float(st["s"][0]), x=float(st["x"][0]),
                        q=int(st["q"][0]), q_tilde=int(st["q_tilde"][0]),
                        z=float(st["z"][0]),
                        running_penalty=float(st["penalty"][0]))

    @property
    def done(self) -> bool:
        return self._cursor >= self.n_steps

    def step(self, action: DepthPair) -> tuple[SimState, float, bool]:
        """Apply externally supplied depths for one step."""
        if self._state is None:
            raise RuntimeError("environment not reset")
        if self.done:
            raise RuntimeError("episode finished; call reset")
        st = self._state
        _check_posting(self.params, action, st["q"])
        comp = competitor_depths(self.params, st["q_tilde"], st["z"])

        x0 = float(st["x"][0])
        pen0 = float(st["penalty"][0])
        mark0 = float(mark_to_market(self.params, st["q"][0], st["s"][0],
                                     st["q_tilde"][0], st["z"][0]))
        i = self._cursor
        d = self._draws
        _advance(self.params, st, action, comp, self.dt,
                 d["price"][i], d["noise"][i], d["buy"][i], d["sell"][i],
                 d["fill_a"][i], d["fill_b"][i])
        self._cursor += 1
        self._t += self.dt

        mark1 = float(mark_to_market(self.params, st["q"][0], st["s"][0],
                                     st["q_tilde"][0], st["z"][0]))
        reward = (float(st["x"][0]) - x0) + (mark1 - mark0) \
            - (float(st["penalty"][0]) - pen0)
        done = self.done
        if done:
            reward -= self.params.gamma * float(st["q"][0]) ** 2
        return self.state, float(reward), done
