"""Command line entry point: flat key-value configs in, CSV/JSON files out.

Every output file starts with a provenance header (tool version, seed and a
hash of the parsed config), and every subcommand is a pure function of its
inputs: same config, flags and seed give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .closed_form import ClosedFormPolicy, hat_depths, solve_omega
from .experiments import (
    generosity_census,
    run_comparison,
    statics_depth_surface,
    statics_time_surface,
)
from .hjb import EulerPolicy, solve_backward
from .model import MODEL_PARAM_KEYS, ModelParams, params_from_strings
from .policy import CompetitorMatchStrategy, ConstantDepthStrategy
from .simulate import run_path, simulate_paths

__all__ = [
    "ConfigError",
    "RunConfig",
    "RunSettings",
    "config_hash",
    "main",
    "make_strategy",
    "parse_config",
    "read_key_values",
]


class ConfigError(Exception):
    """Config rejected; ``problems`` lists every violation, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


def read_key_values(text: str) -> tuple[dict[str, str], list[str]]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blanks ignored."""
    values: dict[str, str] = {}
    problems = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value', got {raw!r}")
            continue
        key, value = line.split("=", 1)
        key = key.strip()
        if key in values:
            problems.append(f"line {lineno}: duplicate key {key!r}")
            continue
        values[key] = value.strip()
    return values, problems


@dataclass(frozen=True)
class RunSettings:
    """Run block of a config: Monte Carlo sizes, seed and strategy choice."""

    paths: int = 10000
    steps: int = 1000
    seed: int = 1
    strategy: str = "closed-form"
    confidence: float = 0.99
    out_dir: str = "."


_RUN_PARSERS = {
    "paths": int,
    "steps": int,
    "seed": int,
    "strategy": str,
    "confidence": float,
    "out_dir": str,
}


def _run_settings_from_strings(values: dict[str, str]) -> tuple[RunSettings | None, list[str]]:
    problems = []
    parsed = {}
    for key, raw in values.items():
        try:
            parsed[key] = _RUN_PARSERS[key](raw)
        except ValueError:
            problems.append(f"{key}: not a valid {_RUN_PARSERS[key].__name__}: {raw!r}")
    if "paths" in parsed and parsed["paths"] < 1:
        problems.append(f"paths: must be >= 1 (got {parsed['paths']})")
    if "steps" in parsed and parsed["steps"] < 1:
        problems.append(f"steps: must be >= 1 (got {parsed['steps']})")
    if "confidence" in parsed and not 0.0 < parsed["confidence"] < 1.0:
        problems.append(f"confidence: must lie in (0, 1) (got {parsed['confidence']})")
    if problems:
        return None, problems
    return RunSettings(**parsed), []


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration: model parameters plus run settings."""

    params: ModelParams
    run: RunSettings
    sha256: str


def config_hash(params: ModelParams, run: RunSettings) -> str:
    """Hash of the parsed semantic fields; formatting and comments drop out."""
    payload = {**asdict(params), **asdict(run)}
    canonical = "\n".join(f"{k}={payload[k]!r}" for k in sorted(payload))
    return hashlib.sha256(canonical.encode()).hexdigest()


def parse_config(path) -> RunConfig:
    """Read and validate a config file, reporting every violation at once."""
    text = Path(path).read_text()
    values, problems = read_key_values(text)

    param_values = {k: v for k, v in values.items() if k in MODEL_PARAM_KEYS}
    run_values = {k: v for k, v in values.items() if k in _RUN_PARSERS}
    unknown = [k for k in values if k not in MODEL_PARAM_KEYS and k not in _RUN_PARSERS]
    problems += [f"unknown key: {k}" for k in unknown]

    missing = [k for k in MODEL_PARAM_KEYS if k not in param_values]
    problems += [f"missing required key: {k}" for k in missing]
    if not missing:
        params, param_problems = params_from_strings(param_values)
        problems += param_problems
    else:
        params = None

    run, run_problems = _run_settings_from_strings(run_values)
    problems += run_problems

    if problems:
        raise ConfigError(problems)
    return RunConfig(params=params, run=run, sha256=config_hash(params, run))


def make_strategy(spec: str, params: ModelParams, *, n_time: int = 1000,
                  euler_steps: int = 100_000):
    """Build a strategy from its CLI spec string.

    ``closed-form`` | ``euler`` | ``constant:ASK:BID`` | ``match-competitor``.
    """
    if spec == "closed-form":
        return ClosedFormPolicy(params, n_time=n_time)
    if spec == "euler":
        return EulerPolicy(params, n_steps=euler_steps)
    if spec == "match-competitor":
        return CompetitorMatchStrategy(params)
    if spec.startswith("constant:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"constant strategy needs 'constant:ASK:BID', got {spec!r}")
        try:
            return ConstantDepthStrategy(params, float(parts[1]), float(parts[2]))
        except ValueError as exc:
            raise ValueError(f"bad constant depths in {spec!r}: {exc}") from None
    raise ValueError(f"unknown strategy spec: {spec!r}")


# --- output helpers ----------------------------------------------------------

def _meta(cfg: RunConfig, seed: int) -> dict:
    return {
        "tool": f"mmcomp {__version__}",
        "seed": seed,
        "config_sha256": cfg.sha256,
    }


def _write_csv(path, meta: dict, fieldnames, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for key, value in meta.items():
            fh.write(f"# {key} = {value}\n")
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    return path


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return _jsonable(float(value))
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _write_json(path, meta: dict, payload: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"meta": meta, **payload}
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    return path


_TRAJECTORY_COLUMNS = (
    "t", "s", "z", "q", "q_tilde", "x", "running_penalty",
    "ask", "bid", "ask_posted", "bid_posted", "ask_truncated", "bid_truncated",
    "comp_ask", "comp_bid",
    "arrival_ask", "arrival_bid", "ref_fill_ask", "ref_fill_bid",
    "comp_fill_ask", "comp_fill_bid",
)


def _trajectory_rows(trajectory, start: int = 0, stop: int | None = None):
    stop = len(trajectory) if stop is None else stop
    cols = {name: getattr(trajectory, name) for name in _TRAJECTORY_COLUMNS}
    for i in range(start, stop):
        yield {name: _csv_cell(col[i]) for name, col in cols.items()}


def _csv_cell(value):
    if isinstance(value, (np.bool_, bool)):
        return int(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


# --- subcommands -------------------------------------------------------------

def _effective_run(cfg: RunConfig, args) -> RunSettings:
    """Run settings with CLI flag overrides applied."""
    run = cfg.run
    for name in ("paths", "steps", "seed", "strategy", "confidence"):
        value = getattr(args, name, None)
        if value is not None:
            run = replace(run, **{name: value})
    if getattr(args, "out_dir", None) is not None:
        run = replace(run, out_dir=args.out_dir)
    return run


def _cmd_solve_closed_form(args) -> int:
    cfg = parse_config(args.config)
    run = _effective_run(cfg, args)
    n_time = args.n_time if args.n_time is not None else run.steps
    omega = solve_omega(cfg.params, n_time)
    k = cfg.params.kappa
    rows = []
    for i, t in enumerate(omega.time_grid):
        pair = hat_depths(cfg.params, omega, float(t), omega.q_grid,
                          args.q_tilde, args.z)
        for j, q in enumerate(omega.q_grid):
            rows.append({
                "t": float(t),
                "q": int(q),
                "omega": float(omega.values[i, j]),
                "g": float(math.log(omega.values[i, j]) / k),
                "delta_hat_a": float(pair.ask[j]),
                "delta_hat_b": float(pair.bid[j]),
            })
    out = args.out or Path(run.out_dir) / "omega.csv"
    path = _write_csv(out, _meta(cfg, run.seed),
                      ["t", "q", "omega", "g", "delta_hat_a", "delta_hat_b"], rows)
    print(f"wrote {path}")
    return 0


def _cmd_solve_euler(args) -> int:
    cfg = parse_config(args.config)
    run = _effective_run(cfg, args)
    n_steps = args.euler_steps
    grid = solve_backward(cfg.params, n_steps, truncated=not args.untruncated)

    stride = args.csv_stride or max(1, n_steps // 2000)
    rows = []
    for i in range(0, n_steps + 1, stride):
        for j, q in enumerate(grid.q_grid):
            rows.append({"t": float(grid.time_grid[i]), "q": int(q),
                         "g": float(grid.g_values[i, j])})
    out_dir = Path(run.out_dir)
    csv_path = _write_csv(args.out or out_dir / "euler_grid.csv",
                          _meta(cfg, run.seed), ["t", "q", "g"], rows)

    # Richardson-style convergence signal: re-solve at half resolution and
    # compare on the shared rows.
    half = solve_backward(cfg.params, max(1, n_steps // 2),
                          truncated=not args.untruncated)
    shared = grid.g_values[:: 2 if n_steps >= 2 else 1]
    diff = float(np.max(np.abs(shared[: half.g_values.shape[0]] - half.g_values)))
    report_path = _write_json(
        args.report or out_dir / "euler_report.json",
        _meta(cfg, run.seed),
        {
            "n_steps": n_steps,
            "dt": grid.horizon / n_steps,
            "truncated": grid.truncated,
            "g_start_flat": float(grid.g_values[0, grid.q_grid.size // 2]),
            "max_abs_g": float(np.max(np.abs(grid.g_values))),
            "max_abs_diff_vs_half_resolution": diff,
            "csv_stride": stride,
        },
    )
    print(f"wrote {csv_path}")
    print(f"wrote {report_path}")
    return 0


def _cmd_simulate(args) -> int:
    cfg = parse_config(args.config)
    run = _effective_run(cfg, args)
    strategy = make_strategy(run.strategy, cfg.params, n_time=run.steps,
                             euler_steps=args.euler_steps)
    res = simulate_paths(cfg.params, strategy, run.paths, run.steps, run.seed,
                         n_threads=args.threads)
    mean = math.fsum(float(v) for v in res.objectives) / res.n_paths
    var = math.fsum((float(v) - mean) ** 2 for v in res.objectives) \
        / max(1, res.n_paths - 1)
    payload = {
        "strategy": run.strategy,
        "n_paths": run.paths,
        "n_steps": run.steps,
        "objective_mean": mean,
        "objective_sd": math.sqrt(var),
        "mean_fills_ask": float(np.mean(res.fills_ask)),
        "mean_fills_bid": float(np.mean(res.fills_bid)),
        "mean_comp_fills_ask": float(np.mean(res.comp_fills_ask)),
        "mean_comp_fills_bid": float(np.mean(res.comp_fills_bid)),
        "generosity_rate": float(np.count_nonzero(res.generosity)) / res.n_paths,
    }
    out_dir = Path(run.out_dir)
    path = _write_json(args.out or out_dir / "simulation.json",
                       _meta(cfg, run.seed), payload)
    print(f"wrote {path}")

    for i in range(args.record_trajectories):
        pr = run_path(cfg.params, strategy, run.steps, run.seed, path_index=i,
                      record_trajectory=True)
        traj_path = _write_csv(out_dir / f"trajectory_{i:04d}.csv",
                               _meta(cfg, run.seed), _TRAJECTORY_COLUMNS,
                               _trajectory_rows(pr.trajectory))
        print(f"wrote {traj_path}")
    return 0


def _cmd_statics(args) -> int:
    cfg = parse_config(args.config)
    run = _effective_run(cfg, args)
    omega = solve_omega(cfg.params, args.n_time if args.n_time is not None else run.steps)
    out_dir = Path(run.out_dir)

    rows = statics_depth_surface(cfg.params, omega, t_fixed=args.at_time, z=args.z)
    p1 = _write_csv(out_dir / "depths_vs_competitor_inventory.csv",
                    _meta(cfg, run.seed),
                    ["q_tilde", "q", "delta_hat_a", "delta_hat_b",
                     "comp_ask", "comp_bid"], rows)
    rows = statics_time_surface(cfg.params, omega, q_tilde=args.q_tilde, z=args.z)
    p2 = _write_csv(out_dir / "depths_vs_time.csv", _meta(cfg, run.seed),
                    ["t", "q", "delta_hat_a", "delta_hat_b",
                     "comp_ask", "comp_bid"], rows)
    print(f"wrote {p1}")
    print(f"wrote {p2}")
    return 0


def _cmd_compare(args) -> int:
    cfg = parse_config(args.config)
    run = _effective_run(cfg, args)
    strategies = [
        (args.strategy_a,
         make_strategy(args.strategy_a, cfg.params, n_time=run.steps,
                       euler_steps=args.euler_steps)),
        (args.strategy_b,
         make_strategy(args.strategy_b, cfg.params, n_time=run.steps,
                       euler_steps=args.euler_steps)),
    ]
    report = run_comparison(cfg.params, strategies, run.paths, run.steps,
                            run.seed, confidence=run.confidence,
                            n_threads=args.threads)
    payload = {
        "strategies": [asdict(s) for s in report.strategies],
        "paired": asdict(report.paired),
        "n_paths": report.n_paths,
        "n_steps": report.n_steps,
    }
    path = _write_json(args.out or Path(run.out_dir) / "comparison.json",
                       _meta(cfg, run.seed), payload)
    print(f"wrote {path}")
    return 0


def _cmd_census(args) -> int:
    cfg = parse_config(args.config)
    run = _effective_run(cfg, args)
    strategy = make_strategy(run.strategy, cfg.params, n_time=run.steps,
                             euler_steps=args.euler_steps)
    census = generosity_census(cfg.params, strategy, run.paths, run.steps,
                               run.seed, n_threads=args.threads,
                               collect_windows=args.dump_events,
                               window_margin=args.margin)
    payload = {
        "strategy": run.strategy,
        "rate": census.rate,
        "n_events": census.n_events,
        "n_paths": census.n_paths,
        "n_steps": census.n_steps,
        "flagged_paths": list(census.flagged_paths),
    }
    out_dir = Path(run.out_dir)
    path = _write_json(args.out or out_dir / "census.json",
                       _meta(cfg, run.seed), payload)
    print(f"wrote {path}")
    for window in census.windows:
        wpath = _write_csv(
            out_dir / f"generosity_path_{window.path_index:05d}.csv",
            _meta(cfg, run.seed), _TRAJECTORY_COLUMNS,
            _trajectory_rows(window.trajectory, window.start, window.stop))
        print(f"wrote {wpath}")
    return 0


# --- argument parsing --------------------------------------------------------

def _add_common(sub, *, paths=False, steps=True, strategy=False):
    sub.add_argument("--config", required=True, help="flat key-value config file")
    sub.add_argument("--seed", type=int, default=None, help="override config seed")
    sub.add_argument("--threads", type=int, default=1,
                     help="worker threads for path blocks")
    sub.add_argument("--out-dir", default=None, help="directory for outputs")
    if paths:
        sub.add_argument("--paths", type=int, default=None,
                         help="override config path count")
    if steps:
        sub.add_argument("--steps", type=int, default=None,
                         help="override config step count")
    if strategy:
        sub.add_argument("--strategy", default=None,
                         help="closed-form | euler | constant:ASK:BID | match-competitor")
    sub.add_argument("--euler-steps", type=int, default=100_000,
                     help="time steps for the Euler value solve")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmcomp",
        description="Quoting policies and market simulation against an "
                    "aggregated rule-of-thumb competitor.",
    )
    parser.add_argument("--version", action="version",
                        version=f"mmcomp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-closed-form",
                       help="tabulate omega and the unrestrained depths as CSV")
    _add_common(p)
    p.add_argument("--n-time", type=int, default=None,
                   help="time grid points for the omega table (default: steps)")
    p.add_argument("--q-tilde", type=int, default=0)
    p.add_argument("--z", type=float, default=0.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_solve_closed_form)

    p = sub.add_parser("solve-euler", help="backward Euler value grid as CSV")
    _add_common(p)
    p.add_argument("--untruncated", action="store_true",
                   help="drop the capped-probability branch")
    p.add_argument("--csv-stride", type=int, default=None,
                   help="emit every k-th time row (default: about 2000 rows)")
    p.add_argument("--out", default=None)
    p.add_argument("--report", default=None, help="JSON convergence report path")
    p.set_defaults(func=_cmd_solve_euler)

    p = sub.add_parser("simulate", help="Monte Carlo run of one strategy")
    _add_common(p, paths=True, strategy=True)
    p.add_argument("--record-trajectories", type=int, default=0,
                   help="emit the first N full path trajectories as CSV")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("statics", help="comparative statics depth tables")
    _add_common(p)
    p.add_argument("--n-time", type=int, default=None)
    p.add_argument("--at-time", type=float, default=0.5,
                   help="fixed time for the inventory surface")
    p.add_argument("--q-tilde", type=int, default=0,
                   help="competitor inventory for the time surface")
    p.add_argument("--z", type=float, default=0.0)
    p.set_defaults(func=_cmd_statics)

    p = sub.add_parser("compare", help="CRN comparison with a paired t-test")
    _add_common(p, paths=True)
    p.add_argument("--strategy-a", default="closed-form",
                   help="baseline strategy (paired difference is B - A)")
    p.add_argument("--strategy-b", default="euler")
    p.add_argument("--confidence", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("census", help="generosity-event census")
    _add_common(p, paths=True, strategy=True)
    p.add_argument("--dump-events", type=int, default=0,
                   help="record the first N flagged paths around their event")
    p.add_argument("--margin", type=int, default=50,
                   help="steps kept either side of the first event")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_census)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
