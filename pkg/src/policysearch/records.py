"""Run records and their CSV / JSON artifacts."""

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ConfigError, SeedMatrixMismatch, ValidationError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("repetition", "iteration", "score", "alpha", "dir_norm", "ridge", "ms", "seed")


@dataclass(frozen=True)
class RunRecord:
    """
    One optimisation iteration of one repetition.

    Attributes:
        repetition: Repetition index (row of the seed matrix)
        iteration: Iteration number, starting at 1
        score: Exact U, or the environment score of the sampled estimate
        alpha: Step size used
        dir_norm: Euclidean norm of the search direction
        ridge: Ridge added to make the metric positive definite (0 if none)
        ms: Wall-clock milliseconds (0 unless timing is enabled)
        seed: Direction-estimation seed
        w: Parameters before the step, in trace mode
    """

    repetition: int
    iteration: int
    score: float
    alpha: float
    dir_norm: float
    ridge: float
    ms: float
    seed: int
    w: Optional[Tuple[float, ...]] = None

    def row(self) -> List[Any]:
        return [getattr(self, column) for column in CSV_COLUMNS]


@dataclass(frozen=True)
class IterationSummary:
    iteration: int
    mean: float
    stderr: float
    n: int


def summarize(records: Sequence[RunRecord]) -> List[IterationSummary]:
    """Mean and standard error of the score per iteration across repetitions."""
    by_iteration: Dict[int, List[float]] = {}
    for record in records:
        by_iteration.setdefault(record.iteration, []).append(record.score)
    summary = []
    for iteration in sorted(by_iteration):
        scores = np.asarray(by_iteration[iteration])
        stderr = float(scores.std(ddof=1) / math.sqrt(len(scores))) if len(scores) > 1 else 0.0
        summary.append(IterationSummary(iteration, float(scores.mean()), stderr, len(scores)))
    return summary


def write_csv(records: Sequence[RunRecord], path: Union[str, Path]) -> Path:
    """Write records sorted by (repetition, iteration)."""
    path = Path(path)
    ordered = sorted(records, key=lambda r: (r.repetition, r.iteration))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(record.row() for record in ordered)
    logger.info("Wrote %d records to %s", len(ordered), path)
    return path


def read_csv(path: Union[str, Path]) -> List[RunRecord]:
    """Read records written by :func:`write_csv`."""
    with open(path, newline="") as f:
        return [
            RunRecord(
                repetition=int(row["repetition"]),
                iteration=int(row["iteration"]),
                score=float(row["score"]),
                alpha=float(row["alpha"]),
                dir_norm=float(row["dir_norm"]),
                ridge=float(row["ridge"]),
                ms=float(row["ms"]),
                seed=int(row["seed"]),
            )
            for row in csv.DictReader(f)
        ]


def write_trace_csv(records: Sequence[RunRecord], path: Union[str, Path]) -> Optional[Path]:
    """Per-iteration parameter trace (repetition, iteration, w1, w2, ...), if recorded."""
    traced = [r for r in records if r.w is not None]
    if not traced:
        return None
    path = Path(path)
    n_params = len(traced[0].w)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["repetition", "iteration"] + [f"w{i + 1}" for i in range(n_params)])
        for r in sorted(traced, key=lambda r: (r.repetition, r.iteration)):
            writer.writerow([r.repetition, r.iteration, *r.w])
    return path


def write_sidecar(
    path: Union[str, Path],
    config: Mapping[str, Any],
    records: Sequence[RunRecord],
    build: str,
    seeds: np.ndarray,
) -> Path:
    """
    JSON sidecar: config echo, build id, direction seed matrix and per-iteration summary.
    """
    doc = {
        "build": build,
        "config": config,
        "seed_matrix": np.asarray(seeds).tolist(),
        "summary": [
            {"iteration": s.iteration, "mean": s.mean, "stderr": s.stderr, "n": s.n}
            for s in summarize(records)
        ],
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


@dataclass(frozen=True)
class ComparisonTable:
    """Aligned per-iteration mean and standard error, one column per run."""

    labels: Tuple[str, ...]
    iterations: Tuple[int, ...]
    means: np.ndarray
    stderrs: np.ndarray
    normaliser: float = 1.0

    def render(self) -> str:
        header = ["iteration"] + list(self.labels)
        lines = ["\t".join(header)]
        for i, iteration in enumerate(self.iterations):
            cells = [str(iteration)]
            for j in range(len(self.labels)):
                mean, err = self.means[i, j], self.stderrs[i, j]
                cells.append("" if np.isnan(mean) else f"{mean:.6g} +/- {err:.3g}")
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"

    def best_final(self) -> str:
        """Label with the highest mean at the last iteration."""
        if not self.iterations:
            raise ValidationError("The comparison table has no iterations")
        return self.labels[int(np.nanargmax(self.means[-1]))]

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            header = ["iteration"]
            for label in self.labels:
                header += [f"{label}_mean", f"{label}_stderr"]
            writer.writerow(header)
            for i, iteration in enumerate(self.iterations):
                row: List[Any] = [iteration]
                for j in range(len(self.labels)):
                    row += [float(self.means[i, j]), float(self.stderrs[i, j])]
                writer.writerow(row)
        return path


def _unique_labels(names: Sequence[str]) -> Tuple[str, ...]:
    seen: Dict[str, int] = {}
    labels = []
    for name in names:
        seen[name] = seen.get(name, 0) + 1
        labels.append(name if seen[name] == 1 else f"{name}#{seen[name]}")
    return tuple(labels)


def compare_runs(
    runs: Sequence[Tuple[str, Sequence[RunRecord], np.ndarray]],
    normalise: bool = False,
) -> ComparisonTable:
    """
    Merge the summaries of several runs into one table.

    Args:
        runs: (label, records, direction seed matrix) per run
        normalise: Divide every mean and stderr by the largest mean in the table

    Raises:
        ConfigError: If no runs are given
        SeedMatrixMismatch: If the runs did not use the same seed matrix
    """
    if not runs:
        raise ConfigError("no configs given")
    reference = np.asarray(runs[0][2])
    for label, _, seeds in runs[1:]:
        seeds = np.asarray(seeds)
        if seeds.shape != reference.shape or not np.array_equal(seeds, reference):
            raise SeedMatrixMismatch(
                f"Run {label!r} used a different seed matrix than {runs[0][0]!r}"
            )

    summaries = [{s.iteration: s for s in summarize(records)} for _, records, _ in runs]
    iterations = sorted(set().union(*summaries))
    means = np.full((len(iterations), len(runs)), np.nan)
    stderrs = np.full_like(means, np.nan)
    for j, summary in enumerate(summaries):
        for i, iteration in enumerate(iterations):
            if iteration in summary:
                means[i, j] = summary[iteration].mean
                stderrs[i, j] = summary[iteration].stderr

    normaliser = 1.0
    if normalise and means.size and np.nanmax(means) > 0:
        normaliser = float(np.nanmax(means))
        means, stderrs = means / normaliser, stderrs / normaliser

    return ComparisonTable(
        labels=_unique_labels([label for label, _, _ in runs]),
        iterations=tuple(iterations),
        means=means,
        stderrs=stderrs,
        normaliser=normaliser,
    )
