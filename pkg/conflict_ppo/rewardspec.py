"""Reward decomposition: named components partitioned into tasks and regularisers."""

import math
from dataclasses import dataclass
from typing import Any

from .exceptions import ValidationError
from .types import COMPONENT_KINDS, ComponentKind


@dataclass(frozen=True)
class RewardComponent:
    """
    One additive reward term.

    Args:
        name: Identifier, unique within a spec; used as the CSV column suffix.
        kind: "task" for objective attainment, "regulariser" for penalties
            that shape behaviour. Tasks take precedence during gradient resolution.
        scale: Weight applied to the raw signal when the environment emits it.
    """

    name: str
    kind: ComponentKind
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not self.name or not self.name.strip():
            raise ValidationError("reward component name is required and cannot be empty")
        if self.kind not in COMPONENT_KINDS:
            raise ValidationError(
                f"reward component '{self.name}' has kind '{self.kind}'; "
                f"expected one of {', '.join(COMPONENT_KINDS)}"
            )
        if not math.isfinite(self.scale):
            raise ValidationError(f"reward component '{self.name}' has non-finite scale")


@dataclass(frozen=True)
class RewardSpec:
    """Ordered, immutable list of the K reward components."""

    components: tuple[RewardComponent, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValidationError("a reward spec needs at least one component")
        seen: set[str] = set()
        for component in self.components:
            if component.name in seen:
                raise ValidationError(f"duplicate reward component name '{component.name}'")
            seen.add(component.name)

    def __len__(self) -> int:
        return len(self.components)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.components]

    @property
    def labels(self) -> list[ComponentKind]:
        return [c.kind for c in self.components]

    @property
    def scales(self) -> list[float]:
        return [c.scale for c in self.components]

    def scalarized(self) -> "RewardSpec":
        """Single-task spec whose one component is the per-step sum."""
        return RewardSpec((RewardComponent("total", "task", 1.0),))

    def to_dict(self) -> dict[str, Any]:
        return {
            "components": [
                {"name": c.name, "kind": c.kind, "scale": c.scale} for c in self.components
            ]
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RewardSpec":
        try:
            entries = data["components"]
            return cls(
                tuple(
                    RewardComponent(str(e["name"]), e["kind"], float(e["scale"])) for e in entries
                )
            )
        except (KeyError, TypeError) as e:
            raise ValidationError(f"malformed reward spec: {e}") from e


def split_indices(spec: RewardSpec) -> tuple[list[int], list[int]]:
    """
    Partition component indices by kind.

    Returns:
        (task indices, regulariser indices), disjoint and together covering
        0..K-1, each in spec order.

    Example:
        >>> spec = RewardSpec((RewardComponent("goal", "task"),
        ...                    RewardComponent("effort", "regulariser")))
        >>> split_indices(spec)
        ([0], [1])
    """
    tasks = [i for i, c in enumerate(spec.components) if c.kind == "task"]
    regularisers = [i for i, c in enumerate(spec.components) if c.kind == "regulariser"]
    return tasks, regularisers
