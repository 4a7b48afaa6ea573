"""
Experiment orchestration: single runs, entropy sweeps, paired comparisons,
band-task generation, env suites and projection-overhead sweeps.

Every artifact is written below one output directory:

    <out>/run.log
    <out>/<algo>/seed_<n>/{config.yaml, metrics.csv, cosines.jsonl, checkpoint.json}
    <out>/sweep/<algo>/coef_<i>/seed_<n>/...
    <out>/summary.csv, summary.json
"""

import csv
import json
import logging
import math
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, cast

import numpy as np

from .checkpoint import write_document
from .config import EnvConfig, RunConfig, TrainConfig, dump_config
from .envs import BandObjective
from .exceptions import ConflictPPOError, TrainingAborted, ValidationError
from .gradres import GradientSet, resolve_components
from .metrics import (
    CosineLog,
    MetricsWriter,
    OverheadFit,
    avg_conflict,
    conflict_spc_correlation,
    final_return,
    overhead_fit,
    spc,
    win_rate,
    zscore_outliers,
)
from .trainer import Trainer, default_env_factory
from .types import BAND_QUANTITIES, BandQuantity, ComponentKind, SummaryRow

logger = logging.getLogger(__name__)

PACKAGE_LOGGER = "conflict_ppo"
SWEEP_RANGE = (1e-4, 0.03)
SWEEP_SEED_OFFSET = 10_000
RERUN_SEED_OFFSET = 1_000


@dataclass
class CellResult:
    """Outcome of one (algo, seed) run."""

    algo: str
    seed: int
    entropy_coef: float
    path: str
    final_return: float = math.nan
    max_return: float = math.nan
    avg_conflict: float = math.nan
    mean_update_s: float = math.nan
    updates: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and math.isfinite(self.final_return)


def run_cell(run: RunConfig, out_dir: str | Path) -> CellResult:
    """
    Train one configuration and write its artifacts into `out_dir`.

    On a numerical abort the last-good checkpoint is written before the
    exception propagates.

    Raises:
        TrainingAborted: If training hits a non-finite value.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(run, out / "config.yaml")
    cosine_path = out / "cosines.jsonl"
    cosine_path.unlink(missing_ok=True)

    trainer = Trainer(run.train, default_env_factory(run.env), CosineLog(cosine_path))
    returns: list[float] = []
    conflicts: list[int] = []
    update_times: list[float] = []
    try:
        with (out / "metrics.csv").open("w", encoding="utf-8", newline="") as f:
            writer = MetricsWriter(f, trainer.component_spec.names)
            for record in trainer.iterate():
                writer.write(record)
                returns.append(record.mean_return)
                conflicts.extend(record.minibatch_conflicts)
                update_times.append(record.t_update_s)
    except TrainingAborted as e:
        if e.checkpoint is not None:
            write_document(out / "checkpoint.json", e.checkpoint)
        raise

    write_document(out / "checkpoint.json", trainer.checkpoint())
    finite = [r for r in returns if math.isfinite(r)]
    return CellResult(
        algo=run.train.algo,
        seed=run.train.seed,
        entropy_coef=run.train.entropy_coef,
        path=str(out),
        final_return=final_return(returns),
        max_return=max(finite) if finite else math.nan,
        avg_conflict=avg_conflict(conflicts),
        mean_update_s=float(np.mean(update_times)),
        updates=len(returns),
    )


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if values else math.nan


def _guarded_cell(run: RunConfig, out_dir: str) -> CellResult:
    """Process-pool entry point: failures become recorded cells."""
    try:
        return run_cell(run, out_dir)
    except ConflictPPOError as e:
        logger.warning("Cell %s failed: %s", out_dir, e.message)
        return CellResult(
            run.train.algo, run.train.seed, run.train.entropy_coef, out_dir, error=e.message
        )


@dataclass(frozen=True)
class SweepResult:
    algo: str
    coefficients: list[float]
    scores: list[float]
    best: float


@dataclass(frozen=True)
class SuiteResult:
    rows: list[dict[str, Any]]
    spearman_rho: float | None
    spearman_p: float | None


@dataclass(frozen=True)
class OverheadReport:
    measurements: list[dict[str, float]]
    fit: OverheadFit


def sample_band_sets(
    n_objectives: int, n_samples: int, seed: int
) -> list[tuple[BandObjective, ...]]:
    """
    Draw random band-objective sets.

    Each set picks `n_objectives` distinct measured quantities and, for each,
    one of its five ascending band levels.

    Raises:
        ValidationError: If more objectives are requested than quantities exist.
    """
    if not 1 <= n_objectives <= len(BAND_QUANTITIES):
        raise ValidationError(
            f"n-objectives must lie in 1..{len(BAND_QUANTITIES)}, got {n_objectives}"
        )
    if n_samples < 1:
        raise ValidationError("n-samples must be positive")
    rng = np.random.default_rng(seed)
    sets = []
    for _ in range(n_samples):
        picks = sorted(rng.choice(len(BAND_QUANTITIES), size=n_objectives, replace=False))
        band_set = []
        for q in picks:
            quantity = cast(BandQuantity, BAND_QUANTITIES[int(q)])
            band_set.append(BandObjective.from_level(quantity, int(rng.integers(5))))
        sets.append(tuple(band_set))
    return sets


def synthetic_gradient_set(
    k: int, dim: int, conflict_rate: float, rng: np.random.Generator
) -> GradientSet:
    """
    Gradients sharing one direction, each flipped with probability `conflict_rate`.

    The first component is a task, the rest alternate task / regulariser.
    """
    base = rng.standard_normal(dim)
    signs = np.where(rng.random(k) < conflict_rate, -1.0, 1.0)
    signs[0] = 1.0
    vectors = signs[:, None] * base[None, :] + 0.3 * rng.standard_normal((k, dim))
    kinds: tuple[ComponentKind, ComponentKind] = ("task", "regulariser")
    return GradientSet(vectors, tuple(kinds[i % 2] for i in range(k)))


class Experiment:
    """
    Runs experiments below one output directory.

    Use as a context manager: on entry the directory is created and a
    `run.log` file handler is attached to the package logger; on exit the
    handler is removed.

    Args:
        out_dir: Root directory of every artifact.
        workers: Process-pool size for compare cells (1 runs in-process).
        outlier_rerun: Rerun cells whose final return has |z| > 3 with a new seed.

    Example:
        >>> with Experiment("runs/demo") as exp:
        ...     cell = exp.train(RunConfig())
    """

    def __init__(self, out_dir: str | Path, workers: int = 1, outlier_rerun: bool = False):
        if workers < 1:
            raise ValidationError("workers must be positive")
        self.out_dir = Path(out_dir)
        self.workers = workers
        self.outlier_rerun = outlier_rerun
        self._handler: logging.Handler | None = None

    def open(self) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if self._handler is None:
            handler = logging.FileHandler(self.out_dir / "run.log", encoding="utf-8")
            handler.setFormatter(
                logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
            )
            logging.getLogger(PACKAGE_LOGGER).addHandler(handler)
            self._handler = handler

    def close(self) -> None:
        """Detach and close the run.log handler."""
        if self._handler is not None:
            logging.getLogger(PACKAGE_LOGGER).removeHandler(self._handler)
            self._handler.close()
            self._handler = None

    def __enter__(self) -> "Experiment":
        self.open()
        return self

    def __exit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        self.close()

    # Single runs

    def train(self, run: RunConfig, subdir: str | None = None) -> CellResult:
        """
        Train one run into `<out>/<subdir>` (default: the output root).

        Raises:
            TrainingAborted: On a numerical failure; the last-good checkpoint
                is already on disk.
        """
        target = self.out_dir / subdir if subdir else self.out_dir
        cell = run_cell(run, target)
        logger.info(
            "Trained %s seed %d: final return %.3f, avg conflict %.3f",
            cell.algo,
            cell.seed,
            cell.final_return,
            cell.avg_conflict,
        )
        return cell

    def _run_cells(self, jobs: Sequence[tuple[RunConfig, Path]]) -> list[CellResult]:
        if self.workers == 1 or len(jobs) < 2:
            return [_guarded_cell(run, str(path)) for run, path in jobs]
        with ProcessPoolExecutor(max_workers=self.workers) as pool:
            futures = [pool.submit(_guarded_cell, run, str(path)) for run, path in jobs]
            return [f.result() for f in futures]

    # Entropy-coefficient sweep

    def sweep(
        self, run: RunConfig, points: int = 5, seeds: int = 3, subdir: str = "sweep"
    ) -> SweepResult:
        """
        Log-scale entropy-coefficient sweep at half the update budget.

        Coefficients are spaced geometrically over [1e-4, 0.03]; each is scored
        by the mean final return over `seeds` runs and the best is returned.
        """
        if points < 1 or seeds < 1:
            raise ValidationError("sweep needs at least one point and one seed")
        algo = run.train.algo
        coefficients = [float(c) for c in np.geomspace(*SWEEP_RANGE, points)]
        updates = max(1, run.train.updates // 2)
        jobs = []
        for i, coef in enumerate(coefficients):
            for s in range(seeds):
                seed = SWEEP_SEED_OFFSET + run.train.seed + s
                cfg = replace(run.train, entropy_coef=coef, updates=updates, seed=seed)
                path = self.out_dir / subdir / algo / f"coef_{i}" / f"seed_{s}"
                jobs.append((RunConfig(cfg, run.env), path))
        cells = self._run_cells(jobs)

        scores = []
        for i in range(len(coefficients)):
            finals = [c.final_return for c in cells[i * seeds : (i + 1) * seeds] if c.ok]
            scores.append(float(np.mean(finals)) if finals else -math.inf)
        best = coefficients[int(np.argmax(scores))]
        logger.info("Entropy sweep for %s selected %.2e (scores %s)", algo, best, scores)
        return SweepResult(algo, coefficients, scores, best)

    # Paired comparison

    def compare(
        self,
        run: RunConfig,
        algos: Sequence[str],
        seeds: int,
        sweep: bool = True,
        sweep_points: int = 5,
        sweep_seeds: int = 3,
    ) -> list[SummaryRow]:
        """
        Run every algo x seed cell and summarize against the first algo.

        Args:
            run: Base configuration; `algo`, `seed` and possibly `entropy_coef`
                are replaced per cell.
            algos: At least two algorithm modes; the first is the reference.
            seeds: Seeds per algo (run.train.seed, run.train.seed + 1, ...).
            sweep: Tune the entropy coefficient per algo first.
            sweep_points: Sweep grid size.
            sweep_seeds: Seeds per sweep point.

        Returns:
            One summary row per algo, also written to summary.csv / summary.json.
        """
        if len(algos) < 2:
            raise ValidationError("compare needs at least two algorithms")
        if seeds < 1:
            raise ValidationError("compare needs at least one seed")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        configs = {algo: replace(run.train, algo=algo) for algo in algos}

        coefs: dict[str, float] = {}
        for algo in algos:
            if sweep:
                result = self.sweep(RunConfig(configs[algo], run.env), sweep_points, sweep_seeds)
                coefs[algo] = result.best
            else:
                coefs[algo] = configs[algo].entropy_coef

        jobs = []
        for algo in algos:
            for s in range(seeds):
                cfg = replace(configs[algo], entropy_coef=coefs[algo], seed=run.train.seed + s)
                jobs.append((RunConfig(cfg, run.env), self.out_dir / algo / f"seed_{s}"))
        cells = self._run_cells(jobs)
        by_algo = {algo: cells[i * seeds : (i + 1) * seeds] for i, algo in enumerate(algos)}

        reruns = {algo: 0 for algo in algos}
        if self.outlier_rerun:
            for algo in algos:
                reruns[algo] = self._rerun_outliers(by_algo[algo], run, configs[algo], coefs[algo])

        rows = self._summarize(algos, by_algo, coefs, reruns)
        self._write_summary(rows)
        return rows

    def _rerun_outliers(
        self, cells: list[CellResult], run: RunConfig, cfg: TrainConfig, coef: float
    ) -> int:
        finals = [c.final_return if c.ok else math.nan for c in cells]
        outliers = zscore_outliers(finals)
        for index in outliers:
            old = cells[index]
            seed = old.seed + RERUN_SEED_OFFSET
            logger.warning(
                "Final return %.3f of %s seed %d is a z > 3 outlier; rerunning with seed %d",
                old.final_return,
                old.algo,
                old.seed,
                seed,
            )
            new_cfg = replace(cfg, entropy_coef=coef, seed=seed)
            path = self.out_dir / old.algo / f"seed_{index}_rerun"
            cells[index] = _guarded_cell(RunConfig(new_cfg, run.env), str(path))
        return len(outliers)

    def _summarize(
        self,
        algos: Sequence[str],
        by_algo: dict[str, list[CellResult]],
        coefs: dict[str, float],
        reruns: dict[str, int],
    ) -> list[SummaryRow]:
        reference = algos[0]
        ref_cells = by_algo[reference]
        ref_finals = [c.final_return for c in ref_cells if c.ok]
        ref_mean = float(np.mean(ref_finals)) if ref_finals else math.nan

        rows: list[SummaryRow] = []
        for algo in algos:
            cells = by_algo[algo]
            good = [c for c in cells if c.ok]
            finals = [c.final_return for c in good]
            n = len(finals)
            mean_final = float(np.mean(finals)) if finals else math.nan
            row: SummaryRow = {
                "algo": algo,
                "n": n,
                "mean_final": mean_final,
                "std_final": float(np.std(finals, ddof=1)) if n > 1 else 0.0,
                "max_return": max((c.max_return for c in good), default=math.nan),
                "spc": None,
                "win_rate": None,
                "ties": 0,
                "p_value": None,
                "avg_conflict": _mean([c.avg_conflict for c in good]),
                "mean_update_s": _mean([c.mean_update_s for c in good]),
                "entropy_coef": coefs[algo],
                "missing": len(cells) - n,
                "reruns": reruns[algo],
            }
            if algo != reference and finals and ref_finals:
                row["spc"] = spc(ref_mean, mean_final)
                pairs = [
                    (a.final_return, b.final_return)
                    for a, b in zip(cells, ref_cells)
                    if a.ok and b.ok
                ]
                if pairs:
                    w = win_rate([a for a, _ in pairs], [b for _, b in pairs])
                    row["win_rate"] = w.rate
                    row["ties"] = w.ties
                    row["p_value"] = w.p_value if len(pairs) > 1 else None
            rows.append(row)
            if row["missing"]:
                logger.warning("%s: %d of %d cells missing", algo, row["missing"], len(cells))
        return rows

    def _write_summary(self, rows: list[SummaryRow], name: str = "summary") -> None:
        columns = list(rows[0].keys())
        with (self.out_dir / f"{name}.csv").open("w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, columns, lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: "" if v is None else v for k, v in row.items()})
        (self.out_dir / f"{name}.json").write_text(
            json.dumps(rows, indent=2) + "\n", encoding="utf-8"
        )

    # Band tasks

    def bands(
        self, run: RunConfig, n_objectives: int, n_samples: int, seed: int, subdir: str = "bands"
    ) -> list[Path]:
        """
        Write `n_samples` pointmass-styled configs with random band sets.

        Raises:
            ValidationError: If the configured env does not take band objectives
                or `n_objectives` is out of range.
        """
        if run.env.name != "pointmass-styled":
            raise ValidationError(f"{run.env.name} does not support band objectives")
        target = self.out_dir / subdir
        target.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, band_set in enumerate(sample_band_sets(n_objectives, n_samples, seed)):
            env = EnvConfig(run.env.name, run.env.episode_length, band_set)
            path = target / f"bands_{i:02d}.yaml"
            dump_config(RunConfig(run.train, env), path)
            paths.append(path)
        logger.info("Wrote %d band configs to %s", len(paths), target)
        return paths

    # Suite

    def suite(
        self,
        runs: Sequence[tuple[str, RunConfig]],
        algos: Sequence[str],
        seeds: int,
        sweep: bool = False,
    ) -> SuiteResult:
        """
        Compare `algos` on several named configs and correlate conflict with SPC.

        The correlation is Spearman's rank coefficient between each config's
        average conflict (measured under the last algo) and the SPC of the last
        algo over the first.
        """
        rows: list[dict[str, Any]] = []
        for name, run in runs:
            sub = Experiment(self.out_dir / name, self.workers, self.outlier_rerun)
            summary = sub.compare(run, algos, seeds, sweep=sweep)
            rows.append(
                {
                    "name": name,
                    "env": run.env.name,
                    "avg_conflict": summary[-1]["avg_conflict"],
                    "spc": summary[-1]["spc"],
                }
            )
        rho: float | None = None
        p: float | None = None
        usable = [r for r in rows if r["spc"] is not None]
        if len(usable) >= 3:
            rho, p = conflict_spc_correlation(
                [r["avg_conflict"] for r in usable], [r["spc"] for r in usable]
            )
        else:
            logger.warning("Suite has %d usable configs; Spearman needs 3", len(usable))
        result = SuiteResult(rows, rho, p)
        (self.out_dir / "suite.json").write_text(
            json.dumps(asdict(result), indent=2) + "\n", encoding="utf-8"
        )
        return result

    # Projection overhead

    def overhead(
        self,
        ks: Sequence[int] = (2, 4, 8),
        rates: Sequence[float] = (0.0, 0.25, 0.5, 0.75),
        dim: int = 4096,
        trials: int = 20,
        seed: int = 0,
    ) -> OverheadReport:
        """
        Time priority resolution on synthetic gradient sets.

        For every K and conflict rate, `trials` random sets are resolved and
        timed; time spent in the projection phases is then fitted linearly on
        conflict count. `total_seconds` also includes conflict detection.
        """
        rng = np.random.default_rng(seed)
        resolve_rng = np.random.default_rng(seed + 1)
        measurements: list[dict[str, float]] = []
        for k in ks:
            for rate in rates:
                for _ in range(trials):
                    gs = synthetic_gradient_set(k, dim, rate, rng)
                    start = time.perf_counter()
                    _, stats = resolve_components(gs, resolve_rng, "priority")
                    elapsed = time.perf_counter() - start
                    measurements.append(
                        {
                            "k": float(k),
                            "rate": rate,
                            "conflicts": float(stats.conflict_count),
                            "projections": float(stats.n_projections),
                            "seconds": stats.project_seconds,
                            "total_seconds": elapsed,
                        }
                    )
        fit = overhead_fit(
            [m["conflicts"] for m in measurements], [m["seconds"] for m in measurements]
        )
        logger.info(
            "Projection overhead: %.3e s per conflicting pair (R^2 %.3f)",
            fit.slope,
            fit.r_squared,
        )
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with (self.out_dir / "overhead.csv").open("w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, list(measurements[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(measurements)
        (self.out_dir / "overhead.json").write_text(
            json.dumps(asdict(fit), indent=2) + "\n", encoding="utf-8"
        )
        return OverheadReport(measurements, fit)
