"""
Run metrics: symmetric percent change, conflict averages, paired win rates,
cosine histories, rank correlation, overhead fits and the per-update CSV.
"""

import csv
import json
import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import IO, TYPE_CHECKING, Literal

import numpy as np
from scipy import stats

from .diffcore import Array
from .exceptions import ValidationError
from .gradres import cosine_matrix
from .types import CosineEntry

if TYPE_CHECKING:
    from .trainer import UpdateRecord

logger = logging.getLogger(__name__)

FINAL_FRACTION = 0.1
OUTLIER_Z = 3.0

__all__ = [
    "spc",
    "avg_conflict",
    "WinRate",
    "win_rate",
    "cosine_matrix",
    "CosineLog",
    "cosine_history",
    "final_return",
    "conflict_trend",
    "spearman",
    "conflict_spc_correlation",
    "OverheadFit",
    "overhead_fit",
    "zscore_outliers",
    "csv_columns",
    "MetricsWriter",
    "read_metrics",
]


def spc(a: float, b: float) -> float | None:
    """
    Symmetric percent change from `a` to `b`: 100 * (b - a) / ((a + b) / 2).

    Returns:
        The percentage, or None when a + b == 0.

    Example:
        >>> round(spc(64.205, 64.911), 2)
        1.09
    """
    total = a + b
    if total == 0 or not math.isfinite(total):
        return None
    return 100.0 * (b - a) / (0.5 * total)


def avg_conflict(counts: Iterable[float]) -> float:
    """
    Mean conflict count over a run.

    Args:
        counts: Per-mini-batch counts, or per-update means over equally many
            mini-batches.

    Raises:
        ValidationError: If no counts are given.
    """
    values = np.asarray(list(counts), dtype=np.float64)
    if values.size == 0:
        raise ValidationError("average conflict of an empty history is undefined")
    return float(values.mean())


@dataclass(frozen=True)
class WinRate:
    wins: int
    ties: int
    losses: int
    rate: float
    p_value: float | None

    @property
    def n(self) -> int:
        return self.wins + self.ties + self.losses


def win_rate(
    a: Sequence[float],
    b: Sequence[float],
    alternative: Literal["greater", "two-sided", "less"] = "greater",
) -> WinRate:
    """
    Paired win rate of `a` over `b` with an exact binomial sign test.

    Ties count as half a win in the rate and are left out of the test.

    Args:
        a: Scores of the candidate.
        b: Paired scores of the reference.
        alternative: Sign-test alternative; "greater" tests a > b.

    Returns:
        The tally, the rate in percent, and the p-value (None when every pair ties).

    Example:
        >>> w = win_rate([1] * 10 + [0] * 3, [0] * 10 + [1] * 3)
        >>> round(w.rate, 1), round(w.p_value, 3)
        (76.9, 0.046)
    """
    if len(a) != len(b):
        raise ValidationError(f"paired lists differ in length ({len(a)} vs {len(b)})")
    if not a:
        raise ValidationError("win rate needs at least one pair")
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    wins = int(np.sum(diff > 0))
    ties = int(np.sum(diff == 0))
    losses = int(np.sum(diff < 0))
    rate = 100.0 * (wins + 0.5 * ties) / len(diff)
    decided = wins + losses
    p_value = (
        float(stats.binomtest(wins, decided, 0.5, alternative=alternative).pvalue)
        if decided
        else None
    )
    return WinRate(wins, ties, losses, rate, p_value)


class CosineLog:
    """
    Append-only JSON-lines sidecar of cosine matrices keyed by update.

    Example:
        >>> log = CosineLog("runs/demo/cosines.jsonl")
        >>> log.append({"update": 0, "names": ["a"], "cosine": [[1.0]], "conflict_count": 0})
        >>> [e["update"] for e in log.read()]
        [0]
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def append(self, entry: CosineEntry) -> None:
        with self.path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(entry) + "\n")

    def read(self) -> list[CosineEntry]:
        if not self.path.exists():
            return []
        with self.path.open(encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]


def cosine_history(source: CosineLog | str | Path) -> dict[int, Array]:
    """Per-update cosine matrices from a sidecar; logged vectors, when present, win."""
    log = source if isinstance(source, CosineLog) else CosineLog(source)
    history: dict[int, Array] = {}
    for entry in log.read():
        if entry.get("vectors"):
            history[entry["update"]] = cosine_matrix(np.asarray(entry["vectors"]))
        else:
            history[entry["update"]] = np.asarray(entry["cosine"], dtype=np.float64)
    return history


def _tail(values: Array, fraction: float) -> Array:
    if not 0 < fraction <= 1:
        raise ValidationError(f"fraction must lie in (0, 1], got {fraction}")
    count = max(1, math.ceil(fraction * values.size))
    return values[-count:]


def final_return(returns: Sequence[float], fraction: float = FINAL_FRACTION) -> float:
    """Mean of the last `fraction` of per-update mean returns, NaN entries skipped."""
    values = np.asarray(returns, dtype=np.float64)
    if values.size == 0:
        return math.nan
    tail = _tail(values, fraction)
    tail = tail[np.isfinite(tail)]
    return float(tail.mean()) if tail.size else math.nan


def conflict_trend(
    counts: Sequence[float], fraction: float = FINAL_FRACTION
) -> tuple[float, float]:
    """(mean over the first `fraction` of updates, mean over the last `fraction`)."""
    values = np.asarray(counts, dtype=np.float64)
    if values.size == 0:
        raise ValidationError("conflict trend of an empty history is undefined")
    head = _tail(values[::-1], fraction)
    return float(head.mean()), float(_tail(values, fraction).mean())


def spearman(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Spearman rank correlation and its two-sided p-value."""
    if len(x) != len(y) or len(x) < 3:
        raise ValidationError("spearman needs two equal-length sequences of at least 3 values")
    result = stats.spearmanr(x, y)
    return float(result.statistic), float(result.pvalue)


def conflict_spc_correlation(
    avg_conflicts: Sequence[float], spcs: Sequence[float | None]
) -> tuple[float, float]:
    """Rank correlation between per-env average conflict and SPC, missing SPC dropped."""
    pairs = [(c, s) for c, s in zip(avg_conflicts, spcs) if s is not None]
    return spearman([c for c, _ in pairs], [s for _, s in pairs])


@dataclass(frozen=True)
class OverheadFit:
    slope: float
    intercept: float
    r_squared: float


def overhead_fit(conflicts: Sequence[float], seconds: Sequence[float]) -> OverheadFit:
    """Least-squares line of projection time on conflicting-pair count."""
    if len(conflicts) != len(seconds) or len(conflicts) < 2:
        raise ValidationError("overhead fit needs at least two paired measurements")
    fit = stats.linregress(conflicts, seconds)
    return OverheadFit(float(fit.slope), float(fit.intercept), float(fit.rvalue**2))


def zscore_outliers(values: Sequence[float], threshold: float = OUTLIER_Z) -> list[int]:
    """Indices whose z-score magnitude exceeds `threshold` (none if the spread is zero)."""
    data = np.asarray(values, dtype=np.float64)
    finite = data[np.isfinite(data)]
    if finite.size < 2:
        return []
    std = float(finite.std(ddof=1))
    if std == 0.0:
        return []
    z = (data - finite.mean()) / std
    return [int(i) for i in np.flatnonzero(np.abs(z) > threshold)]


BASE_COLUMNS = ["update", "mean_return"]
TAIL_COLUMNS = [
    "loss_surrogate_sum",
    "loss_value",
    "entropy",
    "kl",
    "lr",
    "conflict_count",
    "t_collect_s",
    "t_update_s",
    "t_project_s",
]


def csv_columns(component_names: Sequence[str]) -> list[str]:
    return BASE_COLUMNS + [f"return_{name}" for name in component_names] + TAIL_COLUMNS


def _cell(value: float) -> str:
    return repr(float(value))


class MetricsWriter:
    """
    One CSV row per update.

    Floats are written with `repr`, so values round-trip exactly and equal
    runs produce byte-identical files.
    """

    def __init__(self, stream: IO[str], component_names: Sequence[str]):
        self.columns = csv_columns(component_names)
        self._writer = csv.writer(stream, lineterminator="\n")
        self._writer.writerow(self.columns)
        self.rows = 0

    def write(self, record: "UpdateRecord") -> None:
        row = [str(record.update), _cell(record.mean_return)]
        row += [_cell(v) for v in record.component_returns]
        row += [
            _cell(record.loss_surrogate_sum),
            _cell(record.loss_value),
            _cell(record.entropy),
            _cell(record.kl),
            _cell(record.lr),
            _cell(record.conflict_count),
            _cell(record.t_collect_s),
            _cell(record.t_update_s),
            _cell(record.t_project_s),
        ]
        self._writer.writerow(row)
        self.rows += 1


def read_metrics(path: str | Path) -> dict[str, Array]:
    """Columns of a metrics CSV as float arrays."""
    with Path(path).open(encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
        columns = reader.fieldnames or []
    return {c: np.array([float(r[c]) for r in rows]) for c in columns}
