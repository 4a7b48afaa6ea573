"""Type definitions shared across conflict_ppo."""

from typing import Literal, TypedDict, get_args

AlgoMode = Literal["ppo", "multihead", "gcr-noprio", "gcr"]

ComponentKind = Literal["task", "regulariser"]

EnvName = Literal["pointmass-aligned", "pointmass-styled", "pointmass-conflict"]

BandQuantity = Literal["speed", "heading", "height", "effort"]

SymmetricReference = Literal["original", "running"]

ResolutionPolicy = Literal["sum", "priority", "symmetric"]

ALGO_MODES: tuple[str, ...] = get_args(AlgoMode)
COMPONENT_KINDS: tuple[str, ...] = get_args(ComponentKind)
ENV_NAMES: tuple[str, ...] = get_args(EnvName)
BAND_QUANTITIES: tuple[str, ...] = get_args(BandQuantity)
SYMMETRIC_REFERENCES: tuple[str, ...] = get_args(SymmetricReference)


class CosineEntry(TypedDict, total=False):
    """One line of the cosine-history sidecar."""

    update: int
    names: list[str]
    cosine: list[list[float]]
    conflict_count: int
    vectors: list[list[float]]


class SummaryRow(TypedDict, total=False):
    """One algorithm row of a paired-comparison summary."""

    algo: str
    n: int
    mean_final: float
    std_final: float
    max_return: float
    spc: float | None
    win_rate: float | None
    ties: int
    p_value: float | None
    avg_conflict: float
    mean_update_s: float
    entropy_coef: float
    missing: int
    reruns: int
