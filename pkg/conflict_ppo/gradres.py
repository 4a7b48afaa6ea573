"""
Conflict detection and priority-aware projection of per-component gradients.

Two gradients conflict when their inner product is negative. Resolution
removes, from one gradient, its component along a conflicting one:

    g_i <- g_i - (g_i . g_j / |g_j|^2) g_j

Priority resolution runs three phases over a GradientSet:

    (a) each regulariser is projected, task by task in random order, against
        every task gradient its current value conflicts with; task
        gradients are never touched here
    (b) task gradients resolve among themselves with symmetric PCGrad; a task
        left pointing away from its own raw gradient is projected back onto
        the boundary of that half-space
    (c) the phase-(a) regulariser vectors resolve among themselves the same way

The update direction is the sum of the projected vectors.
"""

import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .diffcore import Array
from .exceptions import ValidationError
from .types import COMPONENT_KINDS, SYMMETRIC_REFERENCES, ComponentKind, ResolutionPolicy

logger = logging.getLogger(__name__)

POLICIES: tuple[ResolutionPolicy, ...] = ("sum", "priority", "symmetric")


@dataclass(frozen=True)
class GradientSet:
    """K flat gradient vectors with their priority labels, in RewardSpec order."""

    vectors: Array
    labels: tuple[ComponentKind, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] < 1:
            raise ValidationError(f"gradient set must be (K, P) with K >= 1, got {vectors.shape}")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) != vectors.shape[0]:
            raise ValidationError(
                f"{vectors.shape[0]} gradients but {len(self.labels)} priority labels"
            )
        for label in self.labels:
            if label not in COMPONENT_KINDS:
                raise ValidationError(f"unknown priority label '{label}'")
        if self.names and len(self.names) != vectors.shape[0]:
            raise ValidationError("gradient names do not match the number of gradients")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"g{i}" for i in range(vectors.shape[0])))

    @property
    def k(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def tasks(self) -> list[int]:
        return [i for i, label in enumerate(self.labels) if label == "task"]

    @property
    def regularisers(self) -> list[int]:
        return [i for i, label in enumerate(self.labels) if label == "regulariser"]


@dataclass(frozen=True)
class Projection:
    """One applied projection: `target` lost `magnitude` along `reference`."""

    target: int
    reference: int
    magnitude: float


@dataclass
class ConflictStats:
    """
    Pairwise statistics of the raw gradients of one GradientSet.

    `projections` and `project_seconds` are filled by resolution; detection
    alone leaves them empty.
    """

    inner: Array
    cosine: Array
    conflict_count: int
    projections: list[Projection] = field(default_factory=list)
    project_seconds: float = 0.0

    @property
    def n_projections(self) -> int:
        return len(self.projections)

    @property
    def conflicting_pairs(self) -> list[tuple[int, int]]:
        k = self.inner.shape[0]
        return [(i, j) for i in range(k) for j in range(i + 1, k) if self.inner[i, j] < 0]

    def projection_magnitudes(self) -> dict[tuple[int, int], float]:
        totals: dict[tuple[int, int], float] = {}
        for p in self.projections:
            key = (p.target, p.reference)
            totals[key] = totals.get(key, 0.0) + p.magnitude
        return totals


def inner_products(vectors: Array) -> Array:
    """Exact pairwise dot products, filled symmetrically from i <= j."""
    k = vectors.shape[0]
    inner = np.zeros((k, k))
    for i in range(k):
        for j in range(i, k):
            inner[i, j] = inner[j, i] = float(vectors[i] @ vectors[j])
    return inner


def cosine_matrix(vectors: Array, inner: Array | None = None) -> Array:
    """Pairwise cosine similarities; rows or columns of zero vectors are 0."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    inner = inner_products(vectors) if inner is None else inner
    norms = np.sqrt(np.diag(inner))
    cosine = np.zeros_like(inner)
    nonzero = norms > 0
    scale = np.outer(norms, norms)
    mask = np.outer(nonzero, nonzero)
    cosine[mask] = inner[mask] / scale[mask]
    np.fill_diagonal(cosine, nonzero.astype(np.float64))
    return np.clip(cosine, -1.0, 1.0)


def detect_conflicts(gs: GradientSet) -> ConflictStats:
    """
    Example:
        >>> stats = detect_conflicts(GradientSet(np.array([[1.0, 0.0], [-1.0, 0.0]]),
        ...                                      ("task", "task")))
        >>> stats.conflict_count, stats.cosine[0, 1]
        (1, -1.0)
    """
    inner = inner_products(gs.vectors)
    count = int(np.sum(np.triu(inner < 0, k=1)))
    return ConflictStats(inner, cosine_matrix(gs.vectors, inner), count)


def project(gi: Array, gj: Array) -> Array:
    """
    Remove from `gi` its component along `gj`.

    The caller decides whether the pair conflicts; a zero `gj` is a no-op.
    """
    norm_sq = float(gj @ gj)
    if norm_sq == 0.0:
        return gi.copy()
    return gi - (float(gi @ gj) / norm_sq) * gj


def _project_if_conflicting(
    g: Array, reference: Array, target: int, ref_index: int, log: list[Projection]
) -> Array:
    dot = float(g @ reference)
    if dot < 0.0:
        norm = float(np.sqrt(reference @ reference))
        if norm > 0.0:
            log.append(Projection(target, ref_index, -dot / norm))
            return project(g, reference)
    return g


def _regulariser_phase(
    vectors: Array,
    regularisers: Sequence[int],
    tasks: Sequence[int],
    rng: np.random.Generator,
    log: list[Projection],
) -> None:
    """Project each regulariser against conflicting tasks; task vectors are read only."""
    for r in rng.permutation(regularisers) if regularisers else []:
        g = vectors[r].copy()
        for t in rng.permutation(tasks) if tasks else []:
            g = _project_if_conflicting(g, vectors[t], int(r), int(t), log)
        vectors[r] = g


def _symmetric_phase(
    vectors: Array,
    group: Sequence[int],
    rng: np.random.Generator,
    reference: str,
    log: list[Projection],
    preserve: bool = False,
) -> None:
    """
    PCGrad within one group, in place.

    With reference "original" every working copy is projected against the
    other members' values as they were on entry to the phase; with "running"
    it is projected against their latest values. With preserve set, every
    member ends with a non-negative inner product against its entry value.
    """
    if len(group) < 2:
        return
    snapshot = {i: vectors[i].copy() for i in group}
    for i in rng.permutation(group):
        g = vectors[i].copy()
        others = [j for j in group if j != i]
        for j in rng.permutation(others):
            ref = snapshot[j] if reference == "original" else vectors[j]
            g = _project_if_conflicting(g, ref, int(i), int(j), log)
        vectors[i] = g
    if preserve:
        for i in group:
            entry = snapshot[i]
            g = _project_if_conflicting(vectors[i], entry, int(i), int(i), log)
            # rounding can leave a tiny negative residue
            vectors[i] = g if float(g @ entry) >= 0.0 else entry


def resolve_components(
    gs: GradientSet,
    rng: np.random.Generator,
    policy: ResolutionPolicy = "priority",
    reference: str = "original",
) -> tuple[Array, ConflictStats]:
    """
    Resolve conflicts and return the projected vectors.

    Args:
        gs: Raw per-component gradients.
        rng: Generator fixing every processing order.
        policy: "sum" leaves vectors untouched, "priority" applies the
            task-over-regulariser phases, "symmetric" runs PCGrad over all
            components regardless of labels.
        reference: "original" or "running" reference vectors in symmetric phases.

    Returns:
        (projected vectors (K, P), statistics measured on the raw vectors).
    """
    if policy not in POLICIES:
        raise ValidationError(f"unknown resolution policy '{policy}'; expected one of {POLICIES}")
    if reference not in SYMMETRIC_REFERENCES:
        raise ValidationError(
            f"unknown symmetric reference '{reference}'; expected one of {SYMMETRIC_REFERENCES}"
        )
    stats = detect_conflicts(gs)
    vectors = gs.vectors.copy()
    if policy == "sum" or gs.k == 1 or stats.conflict_count == 0:
        return vectors, stats

    log: list[Projection] = []
    start = time.perf_counter()
    if policy == "symmetric":
        _symmetric_phase(vectors, list(range(gs.k)), rng, reference, log)
    else:
        tasks, regularisers = gs.tasks, gs.regularisers
        _regulariser_phase(vectors, regularisers, tasks, rng, log)
        _symmetric_phase(vectors, tasks, rng, reference, log, preserve=True)
        _symmetric_phase(vectors, regularisers, rng, reference, log)
    stats.project_seconds = time.perf_counter() - start
    stats.projections = log
    logger.debug(
        "Resolved %d conflicting pairs with %d projections (%s)",
        stats.conflict_count,
        len(log),
        policy,
    )
    return vectors, stats


def resolve(
    gs: GradientSet,
    rng: np.random.Generator,
    policy: ResolutionPolicy = "priority",
    reference: str = "original",
) -> tuple[Array, ConflictStats]:
    """
    Resolve conflicts and aggregate.

    Returns:
        (g_final, stats), where g_final is the sum of the projected vectors.

    Example:
        >>> gs = GradientSet(np.array([[1.0, 0.0], [-1.0, 1.0]]), ("task", "regulariser"))
        >>> resolve(gs, np.random.default_rng(0))[0]
        array([1., 1.])
    """
    projected, stats = resolve_components(gs, rng, policy, reference)
    return projected.sum(axis=0), stats
