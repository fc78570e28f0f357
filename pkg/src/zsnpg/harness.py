"""Seeded batch experiments: replications, trace files, summaries and rate fits."""

from __future__ import annotations

import concurrent.futures
import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd

from .game import MarkovGame
from .generators import GENERATORS, generate_game
from .io import SCHEMA_VERSION, load_game, read_json, write_json, write_trace
from .online import FeatureMap, SamplingOracle, SgdConfig, run_online_npg
from .population import PopulationConfig, run_population_npg

logger = logging.getLogger(__name__)

Algorithm = Literal["population", "population-entropy", "online"]
ALGORITHMS = ("population", "population-entropy", "online")
SWEEPABLE = {"K", "T", "T_prime", "N", "N_prime", "eta", "eta_prime", "tau", "W"}
THREADS_ENV = "ZSNPG_THREADS"


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer >= 1, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"{THREADS_ENV} must be an integer >= 1, got {raw!r}")
    return value


def fit_loglog_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares (slope, intercept) of log y against log x; non-positive points are dropped."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    usable = (x > 0) & (y > 0) & np.isfinite(y)
    if usable.sum() < 2:
        return float("nan"), float("nan")
    slope, intercept = np.polyfit(np.log(x[usable]), np.log(y[usable]), 1)
    return float(slope), float(intercept)


# ---------------------------------------------------------------------------
# Experiment specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: a game source, an algorithm with its parameters, and a seed ladder.

    `game` is either {"file": path} or {"generator": kind, "params": {...},
    "seed": int}; for generated games replication r uses game seed
    seed + r. `sweep` = (parameter, values) reruns every replication per
    value, which is what the rate fits regress on.
    """

    name: str
    algorithm: Algorithm
    game: dict[str, Any]
    params: dict[str, Any]
    output_dir: Path
    replications: int = 1
    seed: int = 0
    sweep: tuple[str, tuple[Any, ...]] | None = None
    acceptance: dict[str, Any] = field(default_factory=dict)
    timing: bool = False

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"Unknown algorithm: {self.algorithm!r} (expected one of {', '.join(ALGORITHMS)})")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ValueError(f"replications must be an integer >= 1, got {self.replications!r}")
        has_file = "file" in self.game
        has_generator = "generator" in self.game
        if has_file == has_generator:
            raise ValueError("game must name exactly one of 'file' or 'generator'")
        if has_generator and self.game["generator"] not in GENERATORS:
            raise ValueError(f"Unknown generator: {self.game['generator']!r} (expected one of {', '.join(GENERATORS)})")
        if self.sweep is not None:
            param, values = self.sweep
            if param not in SWEEPABLE:
                raise ValueError(f"cannot sweep {param!r} (sweepable: {', '.join(sorted(SWEEPABLE))})")
            if not values:
                raise ValueError("sweep needs at least one value")
        for value in self.sweep_values():
            self.config_for(value)
        if self.algorithm == "online":
            FeatureMap.check_spec(self.feature_spec)

    @classmethod
    def from_dict(cls, data: dict[str, Any], *, base_dir: Path = Path(".")) -> ExperimentSpec:
        data = dict(data)
        game = dict(data.pop("game"))
        if "file" in game:
            game["file"] = str((base_dir / game["file"]).resolve())
        sweep = data.pop("sweep", None)
        if sweep is not None:
            sweep = (sweep["param"], tuple(sweep["values"]))
        output_dir = base_dir / data.pop("output_dir", "results")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"experiment spec has unknown key(s): {', '.join(sorted(unknown))}")
        return cls(game=game, sweep=sweep, output_dir=output_dir, **data)

    @property
    def feature_spec(self) -> Any:
        return self.params.get("features", "tabular")

    def sweep_values(self) -> tuple[Any, ...]:
        return (None,) if self.sweep is None else self.sweep[1]

    def config_for(self, value: Any) -> PopulationConfig | tuple[SgdConfig, int]:
        params = dict(self.params)
        if value is not None:
            params[self.sweep[0]] = value
        if self.algorithm == "online":
            K = int(params.pop("K", 1))
            params.pop("features", None)
            if K < 1:
                raise ValueError(f"K must be >= 1, got {K}")
            return SgdConfig(**params), K
        config = PopulationConfig(**params)
        if self.algorithm == "population-entropy" and config.tau <= 0:
            raise ValueError("population-entropy needs tau > 0")
        return config


def load_experiment(path: Path) -> ExperimentSpec:
    path = Path(path)
    return ExperimentSpec.from_dict(read_json(path), base_dir=path.parent)


# ---------------------------------------------------------------------------
# Replications
# ---------------------------------------------------------------------------


def replication_seed(master: int, replication: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(replication,)).generate_state(1)[0])


def _game_for(spec: ExperimentSpec, replication: int) -> MarkovGame:
    if "file" in spec.game:
        return load_game(Path(spec.game["file"]))
    return generate_game(spec.game["generator"], spec.game.get("params", {}), int(spec.game.get("seed", 0)) + replication)


def _trace_path(spec: ExperimentSpec, value: Any, replication: int) -> Path:
    label = "" if value is None else f"_{spec.sweep[0]}{value}"
    return spec.output_dir / "traces" / f"{spec.name}{label}_rep{replication:03d}.csv"


def run_replication(spec: ExperimentSpec, value: Any, replication: int) -> dict[str, Any]:
    """Run one (sweep value, replication) cell and write its trace CSV."""
    game = _game_for(spec, replication)
    config = spec.config_for(value)
    if spec.algorithm == "online":
        sgd, K = config
        seed = replication_seed(spec.seed, replication)
        oracle = SamplingOracle.from_sigma(game, seed=seed)
        result = run_online_npg(oracle, FeatureMap.from_spec(spec.feature_spec, game.n_states, game.n_actions), sgd, K)
        trace = result.trace
        final = trace.iloc[-1]
        metrics = {
            "exploitability": float(final["exploitability"]),
            "subopt": float(final["subopt_sigma"]),
            "n_samples_used": int(final["n_samples_used"]),
        }
    else:
        result = run_population_npg(game, config)
        trace = result.trace
        final = trace.iloc[-1]
        metrics = {
            "exploitability": float(final["exploitability_rho"]),
            "subopt": float(final["iter_subopt_sigma"]),
        }
    path = write_trace(trace, _trace_path(spec, value, replication), timing=spec.timing)
    return {"value": value, "replication": replication, "trace": str(path), **metrics}


def _run_cell(spec: ExperimentSpec, value: Any, replication: int) -> dict[str, Any]:
    try:
        return run_replication(spec, value, replication)
    except Exception as exc:  # recorded in the summary, never fatal to the batch
        logger.warning("replication %d (value %s) failed: %s", replication, value, exc)
        return {"value": value, "replication": replication, "error": type(exc).__name__, "message": str(exc)}


def _execute(spec: ExperimentSpec, threads: int) -> list[dict[str, Any]]:
    cells = [(value, r) for value in spec.sweep_values() for r in range(spec.replications)]
    if threads == 1:
        return [_run_cell(spec, value, r) for value, r in cells]
    with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_run_cell, spec, value, r) for value, r in cells]
        # results are collected in submission order so the merge is deterministic
        return [future.result() for future in futures]


# ---------------------------------------------------------------------------
# Summary and acceptance
# ---------------------------------------------------------------------------


def _iqr(series: pd.Series) -> float:
    return float(series.quantile(0.75) - series.quantile(0.25))


def summarize(spec: ExperimentSpec, outcomes: list[dict[str, Any]]) -> dict[str, Any]:
    succeeded = pd.DataFrame([o for o in outcomes if "error" not in o])
    failures = [o for o in outcomes if "error" in o]
    results = []
    rate_fits = []
    if not succeeded.empty:
        if spec.sweep is None:
            succeeded["value"] = 0
        grouped = succeeded.groupby("value", sort=True)
        stats = grouped.agg(
            exploitability_median=("exploitability", "median"),
            exploitability_iqr=("exploitability", _iqr),
            subopt_median=("subopt", "median"),
            subopt_iqr=("subopt", _iqr),
            n_ok=("replication", "count"),
        ).reset_index()
        for row in stats.itertuples(index=False):
            results.append(
                {
                    "param": None if spec.sweep is None else spec.sweep[0],
                    "value": None if spec.sweep is None else _plain(row.value),
                    "exploitability": {"median": row.exploitability_median, "iqr": row.exploitability_iqr},
                    "subopt": {"median": row.subopt_median, "iqr": row.subopt_iqr},
                    "n_ok": int(row.n_ok),
                }
            )
        if spec.sweep is not None and len(stats) >= 2:
            for metric in ("exploitability", "subopt"):
                slope, intercept = fit_loglog_slope(stats["value"], stats[f"{metric}_median"])
                rate_fits.append({"metric": metric, "param": spec.sweep[0], "slope": slope, "intercept": intercept})

    acceptance = check_acceptance(spec, results, rate_fits)
    summary = {
        "schema": SCHEMA_VERSION,
        "name": spec.name,
        "algorithm": spec.algorithm,
        "replications": spec.replications,
        "seed": spec.seed,
        "results": results,
        "rate_fits": rate_fits,
        "acceptance": acceptance,
        "failures": failures,
    }
    return _json_safe(summary)


def _plain(value: Any) -> Any:
    return value.item() if isinstance(value, np.generic) else value


def _json_safe(value: Any) -> Any:
    """Replace NaN and infinities with None so summary.json stays strict JSON."""
    if isinstance(value, dict):
        return {key: _json_safe(item) for key, item in value.items()}
    if isinstance(value, list | tuple):
        return [_json_safe(item) for item in value]
    value = _plain(value)
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def check_acceptance(
    spec: ExperimentSpec, results: list[dict[str, Any]], rate_fits: list[dict[str, Any]]
) -> dict[str, Any]:
    """Evaluate the spec's thresholds.

    Supported keys: "max_median_exploitability" (checked at the last sweep
    value) and "slope" = {"metric", "min", "max"}.
    """
    checks = []
    limit = spec.acceptance.get("max_median_exploitability")
    if limit is not None:
        observed = results[-1]["exploitability"]["median"] if results else float("nan")
        checks.append({"check": "max_median_exploitability", "limit": limit, "observed": observed, "passed": bool(observed <= limit)})
    slope_rule = spec.acceptance.get("slope")
    if slope_rule is not None:
        fit = next((f for f in rate_fits if f["metric"] == slope_rule["metric"]), None)
        observed = fit["slope"] if fit else float("nan")
        passed = bool(slope_rule.get("min", -np.inf) <= observed <= slope_rule.get("max", np.inf))
        checks.append({"check": "slope", **slope_rule, "observed": observed, "passed": passed})
    return {"passed": all(c["passed"] for c in checks), "checks": checks}


def run_experiment(spec: ExperimentSpec, *, threads: int | None = None) -> int:
    """Run every replication, write traces and summary.json; return the exit code.

    Exit code 1 when any replication failed or an acceptance check did not pass.
    """
    threads = thread_count() if threads is None else threads
    spec.output_dir.mkdir(parents=True, exist_ok=True)
    logger.info("experiment %s: %d cell(s) on %d worker(s)", spec.name, len(spec.sweep_values()) * spec.replications, threads)
    outcomes = _execute(spec, threads)
    summary = summarize(spec, outcomes)
    write_json(spec.output_dir / "summary.json", summary)
    if summary["failures"]:
        return 1
    return 0 if summary["acceptance"]["passed"] else 1


def with_output_dir(spec: ExperimentSpec, output_dir: Path) -> ExperimentSpec:
    return replace(spec, output_dir=output_dir)
