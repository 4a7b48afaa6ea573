"""
Command-line entry point.

Exit codes: 0 success, 1 usage or validation error, 2 numerical abort.

Example:
    $ conflict-ppo train --config configs/styled.yaml --algo gcr --seed 0 --out runs/gcr0
    $ conflict-ppo compare --config configs/styled.yaml --algos ppo,gcr --seeds 10 --out runs/cmp
"""

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import NoReturn

from .config import RunConfig, load_config
from .exceptions import ConflictPPOError, NumericalError, TrainingAborted, ValidationError
from .harness import Experiment
from .types import ALGO_MODES, ENV_NAMES, SummaryRow

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with EXIT_USAGE."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _algo_list(value: str) -> list[str]:
    algos = [a.strip() for a in value.split(",") if a.strip()]
    unknown = [a for a in algos if a not in ALGO_MODES]
    if unknown:
        raise argparse.ArgumentTypeError(
            f"unknown algo(s) {', '.join(unknown)}; expected from {', '.join(ALGO_MODES)}"
        )
    return algos


def _int_list(value: str) -> list[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="conflict-ppo", description="Conflict-aware multi-objective PPO")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Root logging level",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Train one run")
    train.add_argument("--config", type=Path, help="YAML run config")
    train.add_argument("--algo", choices=ALGO_MODES, help="Override the config's algo")
    train.add_argument("--seed", type=int, help="Override the config's seed")
    train.add_argument("--out", type=Path, required=True, help="Output directory")

    compare = commands.add_parser("compare", help="Paired multi-seed comparison")
    compare.add_argument("--config", type=Path)
    compare.add_argument("--algos", type=_algo_list, required=True, help="e.g. ppo,gcr")
    compare.add_argument("--seeds", type=int, default=10)
    compare.add_argument("--out", type=Path, required=True)
    compare.add_argument("--no-sweep", action="store_true", help="Skip the entropy sweep")
    compare.add_argument("--sweep-points", type=int, default=5)
    compare.add_argument("--sweep-seeds", type=int, default=3)
    compare.add_argument("--workers", type=int, default=1)
    compare.add_argument("--outlier-rerun", action="store_true")

    sweep = commands.add_parser("sweep", help="Entropy-coefficient sweep")
    sweep.add_argument("--config", type=Path)
    sweep.add_argument("--algo", choices=ALGO_MODES)
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--points", type=int, default=5)
    sweep.add_argument("--seeds", type=int, default=3)
    sweep.add_argument("--workers", type=int, default=1)
    sweep.add_argument("--out", type=Path, required=True)

    bands = commands.add_parser("bands", help="Generate band-objective configs")
    bands.add_argument("--config", type=Path, help="Base config for the generated files")
    bands.add_argument("--task", choices=ENV_NAMES, default="pointmass-styled")
    bands.add_argument("--n-objectives", type=int, required=True)
    bands.add_argument("--n-samples", type=int, required=True)
    bands.add_argument("--seed", type=int, default=0)
    bands.add_argument("--out", type=Path, required=True)

    suite = commands.add_parser("suite", help="Compare over several configs")
    suite.add_argument("--configs", type=Path, nargs="+", required=True)
    suite.add_argument("--algos", type=_algo_list, required=True)
    suite.add_argument("--seeds", type=int, default=10)
    suite.add_argument("--sweep", action="store_true")
    suite.add_argument("--workers", type=int, default=1)
    suite.add_argument("--outlier-rerun", action="store_true")
    suite.add_argument("--out", type=Path, required=True)

    overhead = commands.add_parser("overhead", help="Projection-time sweep")
    overhead.add_argument("--ks", type=_int_list, default=[2, 4, 8])
    overhead.add_argument("--dim", type=int, default=4096)
    overhead.add_argument("--trials", type=int, default=20)
    overhead.add_argument("--seed", type=int, default=0)
    overhead.add_argument("--out", type=Path, required=True)
    return parser


def _load(path: Path | None, algo: str | None = None, seed: int | None = None) -> RunConfig:
    run = load_config(path) if path is not None else RunConfig()
    return run.with_overrides(algo=algo, seed=seed)


def _print_summary(rows: Sequence[SummaryRow]) -> None:
    print(
        f"{'algo':<12}{'n':>4}{'final':>12}{'std':>10}{'max':>10}"
        f"{'spc%':>9}{'win%':>8}{'p':>8}"
    )
    for row in rows:
        spc = row.get("spc")
        win = row.get("win_rate")
        p = row.get("p_value")
        print(
            f"{row['algo']:<12}{row['n']:>4}{row['mean_final']:>12.3f}{row['std_final']:>10.3f}"
            f"{row['max_return']:>10.3f}"
            f"{'-' if spc is None else f'{spc:.2f}':>9}"
            f"{'-' if win is None else f'{win:.1f}':>8}"
            f"{'-' if p is None else f'{p:.3f}':>8}"
        )


def run_command(args: argparse.Namespace) -> int:
    if args.command == "train":
        run = _load(args.config, args.algo, args.seed)
        with Experiment(args.out) as exp:
            cell = exp.train(run)
        print(f"final return {cell.final_return:.3f} over {cell.updates} updates -> {cell.path}")
        return EXIT_OK

    if args.command == "compare":
        run = _load(args.config)
        if len(args.algos) < 2:
            raise ValidationError("compare needs at least two algorithms")
        with Experiment(args.out, args.workers, args.outlier_rerun) as exp:
            rows = exp.compare(
                run,
                args.algos,
                args.seeds,
                sweep=not args.no_sweep,
                sweep_points=args.sweep_points,
                sweep_seeds=args.sweep_seeds,
            )
        _print_summary(rows)
        return EXIT_OK

    if args.command == "sweep":
        run = _load(args.config, args.algo, args.seed)
        with Experiment(args.out, args.workers) as exp:
            result = exp.sweep(run, args.points, args.seeds)
        print(f"{result.algo}: best entropy coefficient {result.best:.3e}")
        return EXIT_OK

    if args.command == "bands":
        run = _load(args.config)
        if args.task != "pointmass-styled":
            raise ValidationError(f"{args.task} does not support band objectives")
        with Experiment(args.out) as exp:
            paths = exp.bands(run, args.n_objectives, args.n_samples, args.seed)
        for path in paths:
            print(path)
        return EXIT_OK

    if args.command == "suite":
        runs = [(path.stem, load_config(path)) for path in args.configs]
        with Experiment(args.out, args.workers, args.outlier_rerun) as exp:
            result = exp.suite(runs, args.algos, args.seeds, sweep=args.sweep)
        for row in result.rows:
            print(f"{row['name']:<24}conflict {row['avg_conflict']:.3f}  spc {row['spc']}")
        print(f"spearman rho {result.spearman_rho} (p {result.spearman_p})")
        return EXIT_OK

    if args.command == "overhead":
        with Experiment(args.out) as exp:
            report = exp.overhead(args.ks, dim=args.dim, trials=args.trials, seed=args.seed)
        print(
            f"slope {report.fit.slope:.3e} s/pair, intercept {report.fit.intercept:.3e} s, "
            f"R^2 {report.fit.r_squared:.3f}"
        )
        return EXIT_OK

    raise ValidationError(f"unknown command {args.command}")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return run_command(args)
    except TrainingAborted as e:
        logger.error("Training aborted at update %s: %s", e.update, e.message)
        return EXIT_NUMERICAL
    except NumericalError as e:
        logger.error("Numerical failure: %s", e.message)
        return EXIT_NUMERICAL
    except ConflictPPOError as e:
        print(f"conflict-ppo: error: {e.message}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
