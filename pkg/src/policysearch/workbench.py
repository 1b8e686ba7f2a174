"""Main entry point: configure, run, verify and compare experiments."""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .config import ExperimentConfig, SeedMatrix, load_config, seed_matrix
from .exceptions import ConfigError, SeedMatrixMismatch
from .progress import create_progress_callback
from .records import (
    ComparisonTable,
    RunRecord,
    compare_runs,
    write_csv,
    write_sidecar,
    write_trace_csv,
)
from .optimizers import STEP_SIZE_GRIDS
from .training import run
from .utils import build_id, ensure_path_exists, resolve_threads
from .verify import CheckResult, render_report, run_checks

logger = logging.getLogger(__name__)

ConfigLike = Union[ExperimentConfig, str, Path]


@dataclass(frozen=True)
class RunResult:
    """Records of a finished run with the config and seeds that produced them."""

    config: ExperimentConfig
    records: List[RunRecord]
    seeds: SeedMatrix

    @property
    def label(self) -> str:
        return self.config.method


class Workbench:
    """
    Policy-search experiment workbench.

    Wires a config to its environment, policy, estimator and optimizer, runs seeded
    repetitions and writes the CSV / JSON artifacts.

    Args:
        threads: Parallel workers for repetitions (defaults to POLICYSEARCH_THREADS, then 1)
        progress: Show an iteration progress bar

    Example:
        >>> bench = Workbench(threads=4)
        >>> result = bench.run('configs/two_state_trace.toml')
        >>> bench.write(result, 'out')
    """

    def __init__(self, threads: Optional[int] = None, progress: bool = False):
        self.threads = resolve_threads(threads)
        self.progress = progress

    @staticmethod
    def load(config: ConfigLike, seed: Optional[int] = None) -> ExperimentConfig:
        """Load a config (path or object), optionally overriding its master seed."""
        if not isinstance(config, ExperimentConfig):
            config = load_config(config)
        return config if seed is None else config.with_seed(seed)

    def run(self, config: ConfigLike, seed: Optional[int] = None) -> RunResult:
        """
        Run an experiment.

        Args:
            config: Config object or path to a TOML file
            seed: Master seed overriding the config's

        Returns:
            RunResult with one record per (repetition, iteration)

        Raises:
            ConfigError: If the config is invalid
        """
        config = self.load(config, seed)
        logger.info(
            "Running %s on %s: %d repetitions x %d iterations",
            config.method,
            config.environment,
            config.repetitions,
            config.iterations,
        )
        callback = create_progress_callback(
            config.repetitions * config.iterations,
            description=f"{config.environment}/{config.method}",
            enabled=self.progress,
        )
        records = run(config, n_jobs=self.threads, progress=callback)
        return RunResult(
            config, records, seed_matrix(config.seed, config.repetitions, config.iterations)
        )

    def write(
        self, result: RunResult, out_dir: Union[str, Path], stem: str = "run"
    ) -> Dict[str, Path]:
        """
        Write ``<stem>.csv``, ``<stem>.json`` and, in trace mode, ``<stem>.trace.csv``.

        Returns:
            Mapping of artifact kind to path
        """
        out = ensure_path_exists(str(out_dir))
        paths = {
            "csv": write_csv(result.records, out / f"{stem}.csv"),
            "json": write_sidecar(
                out / f"{stem}.json",
                result.config.to_dict(),
                result.records,
                build_id(),
                result.seeds.direction,
            ),
        }
        trace = write_trace_csv(result.records, out / f"{stem}.trace.csv")
        if trace is not None:
            paths["trace"] = trace
        return paths

    @staticmethod
    def verify(seed: int = 0, corrupt_gradient: float = 0.0) -> Tuple[List[CheckResult], str]:
        """
        Run the oracle suite.

        Returns:
            Tuple (check results, rendered report)
        """
        results = run_checks(seed=seed, corrupt_gradient=corrupt_gradient)
        return results, render_report(results)

    def compare(
        self, configs: Sequence[ConfigLike], seed: Optional[int] = None
    ) -> Tuple[ComparisonTable, List[RunResult]]:
        """
        Run several configs on a shared seed matrix and merge their summaries.

        Nonlinear-system scores are normalised by the best mean across the compared runs.

        Raises:
            ConfigError: If no configs are given
            SeedMatrixMismatch: If the configs do not share environment, seed and shape
        """
        loaded = [self.load(c, seed) for c in configs]
        if not loaded:
            raise ConfigError("no configs given")
        first = loaded[0]
        for config in loaded[1:]:
            if config.environment != first.environment:
                raise SeedMatrixMismatch(
                    f"Cannot compare {config.environment!r} with {first.environment!r}"
                )
            if (config.seed, config.repetitions, config.iterations) != (
                first.seed,
                first.repetitions,
                first.iterations,
            ):
                raise SeedMatrixMismatch(
                    "Compared configs must share seed, repetitions and iterations "
                    f"({config.seed}, {config.repetitions}, {config.iterations}) vs "
                    f"({first.seed}, {first.repetitions}, {first.iterations})"
                )

        results = [self.run(config) for config in loaded]
        table = compare_runs(
            [(r.label, r.records, r.seeds.direction) for r in results],
            normalise=first.environment == "nonlinear" and len(results) > 1,
        )
        return table, results

    def sweep(
        self,
        config: ConfigLike,
        seed: Optional[int] = None,
        alphas: Optional[Sequence[float]] = None,
    ) -> Tuple[ComparisonTable, List[RunResult]]:
        """
        Run one config once per step size on a shared seed matrix.

        The step sizes default to the grid of the config's schedule kind. Columns are
        labelled ``alpha=<value>``; nonlinear-system scores are normalised by the best mean
        across the sweep.

        Raises:
            ConfigError: If there are no positive step sizes to try
        """
        config = self.load(config, seed)
        kind = config.schedule.kind
        if config.method == "em":
            raise ConfigError("method: em takes unit steps, there is nothing to sweep")
        if kind == "line-search":
            raise ConfigError("schedule.kind: a line search picks its own step sizes")
        if alphas is None:
            if kind not in STEP_SIZE_GRIDS:
                raise ConfigError(f"schedule.kind: {kind!r} has no step-size grid")
            alphas = STEP_SIZE_GRIDS[kind]
        if not alphas or min(alphas) <= 0:
            raise ConfigError(f"step sizes must be positive, got {list(alphas)}")

        results = [
            self.run(replace(config, schedule=replace(config.schedule, alpha=float(alpha))))
            for alpha in alphas
        ]
        runs = [(f"alpha={a:g}", r.records, r.seeds.direction) for a, r in zip(alphas, results)]
        table = compare_runs(runs, normalise=config.environment == "nonlinear")
        if table.iterations:
            logger.info("Sweep of %s: best final score at %s", config.method, table.best_final())
        return table, results
