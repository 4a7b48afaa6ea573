"""
Point-mass environments with additive vector rewards.

A unit-mass point moves in the plane under a clipped force action with
explicit Euler integration and per-step velocity damping. Each environment
declares a RewardSpec and emits one already-scaled reward per component.

    pointmass-aligned   goal progress (task) + effort penalty (regulariser)
    pointmass-styled    goal progress + 1-4 band objectives (tasks) + effort penalty
    pointmass-conflict  +x velocity (task), -x velocity (task), effort penalty
"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

from .diffcore import Array
from .exceptions import EpisodeDoneError, NumericalError, ValidationError
from .rewardspec import RewardComponent, RewardSpec
from .types import BAND_QUANTITIES, ENV_NAMES, BandQuantity

logger = logging.getLogger(__name__)

DT = 0.05
DAMPING = 0.05
EPISODE_LENGTH = 400
GOAL = (5.0, 0.0)
GOAL_RADIUS = 0.25
ARENA_HALF_WIDTH = 10.0
START_SPREAD = 0.5
OBS_DIM = 4
ACTION_DIM = 2

PROGRESS_SCALE = 1.0
EFFORT_SCALE = -0.1
DEFAULT_BONUS = 0.3
# below this speed the direction of travel is undefined
HEADING_MIN_SPEED = 1e-6

NUM_LEVELS = 5
QUANTITY_RANGES: dict[str, tuple[float, float]] = {
    "speed": (0.0, 1.0),
    "heading": (-math.pi, math.pi),
    "height": (-2.0, 2.0),
    "effort": (0.0, 2.0),
}


def band_levels(quantity: BandQuantity) -> list[tuple[float, float]]:
    """Five ascending, non-overlapping [lo, hi) intervals partitioning a quantity's range."""
    if quantity not in QUANTITY_RANGES:
        raise ValidationError(
            f"unknown band quantity '{quantity}'; expected one of {', '.join(BAND_QUANTITIES)}"
        )
    lo, hi = QUANTITY_RANGES[quantity]
    edges = np.linspace(lo, hi, NUM_LEVELS + 1)
    return [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]


def measure(quantity: str, position: Array, velocity: Array, action: Array) -> float:
    """Current value of a band quantity. Heading is NaN at rest and falls in no band."""
    if quantity == "speed":
        return float(np.hypot(velocity[0], velocity[1]))
    if quantity == "heading":
        if np.hypot(velocity[0], velocity[1]) < HEADING_MIN_SPEED:
            return math.nan
        return float(math.atan2(velocity[1], velocity[0]))
    if quantity == "height":
        return float(position[1])
    if quantity == "effort":
        return float(action @ action)
    raise ValidationError(f"unknown band quantity '{quantity}'")


@dataclass(frozen=True)
class BandObjective:
    """A {0, bonus}-valued reward granted while a measured quantity lies in [lo, hi)."""

    quantity: BandQuantity
    lo: float
    hi: float
    bonus: float = DEFAULT_BONUS

    def __post_init__(self) -> None:
        if self.quantity not in BAND_QUANTITIES:
            raise ValidationError(
                f"unknown band quantity '{self.quantity}'; "
                f"expected one of {', '.join(BAND_QUANTITIES)}"
            )
        if not self.lo < self.hi:
            raise ValidationError(f"band [{self.lo}, {self.hi}) is empty")
        if not (self.bonus >= 0 and math.isfinite(self.bonus)):
            raise ValidationError(f"band bonus must be finite and >= 0, got {self.bonus}")

    @classmethod
    def from_level(
        cls, quantity: BandQuantity, level: int, bonus: float = DEFAULT_BONUS
    ) -> "BandObjective":
        levels = band_levels(quantity)
        if not 0 <= level < len(levels):
            raise ValidationError(f"band level must be in 0..{len(levels) - 1}, got {level}")
        lo, hi = levels[level]
        return cls(quantity, lo, hi, bonus)

    def indicator(self, value: float) -> float:
        return 1.0 if self.lo <= value < self.hi else 0.0

    def overlaps(self, other: "BandObjective") -> bool:
        return self.quantity == other.quantity and self.lo < other.hi and other.lo < self.hi

    def to_dict(self) -> dict[str, Any]:
        return {"quantity": self.quantity, "lo": self.lo, "hi": self.hi, "bonus": self.bonus}


@dataclass
class EnvState:
    position: Array
    velocity: Array
    step_index: int
    rng: np.random.Generator


@dataclass(frozen=True)
class StepResult:
    """
    Outcome of one transition.

    `reward` is the training reward vector (length K of the env's RewardSpec);
    `components` is the full per-component vector used for logging, equal to
    `reward` except for scalarized environments.
    """

    observation: Array
    reward: Array
    done: bool
    timeout: bool
    components: Array


# raw signal of one component: (previous position, new position, new velocity, clipped action)
RawReward = Callable[[Array, Array, Array, Array], float]


def _goal_progress(prev_pos: Array, pos: Array, vel: Array, action: Array) -> float:
    to_goal = np.asarray(GOAL) - prev_pos
    distance = float(np.hypot(to_goal[0], to_goal[1]))
    if distance == 0.0:
        return 0.0
    return float(vel @ to_goal) / distance


def _effort(prev_pos: Array, pos: Array, vel: Array, action: Array) -> float:
    return float(action @ action)


def _x_velocity(prev_pos: Array, pos: Array, vel: Array, action: Array) -> float:
    return float(vel[0])


def _neg_x_velocity(prev_pos: Array, pos: Array, vel: Array, action: Array) -> float:
    return -float(vel[0])


def _band_term(band: BandObjective) -> RawReward:
    def raw(prev_pos: Array, pos: Array, vel: Array, action: Array) -> float:
        return band.indicator(measure(band.quantity, pos, vel, action))

    return raw


class Env(Protocol):
    reward_spec: RewardSpec
    component_spec: RewardSpec
    obs_dim: int
    action_dim: int

    def reset(self) -> Array: ...

    def step(self, action: Array) -> StepResult: ...


@dataclass
class _Term:
    component: RewardComponent
    raw: RawReward


@dataclass
class PointMassEnv:
    """
    Point-mass double integrator with an additive reward vector.

    Args:
        name: Environment name (for logs and configs).
        terms: One reward term per component, in RewardSpec order.
        seed: Seed of the per-instance generator (start positions).
        episode_length: Steps before a timeout.
        goal_terminates: Whether reaching the goal radius ends the episode.
    """

    name: str
    terms: list[_Term]
    seed: int = 0
    episode_length: int = EPISODE_LENGTH
    goal_terminates: bool = True
    bands: tuple[BandObjective, ...] = ()
    reward_spec: RewardSpec = field(init=False)
    component_spec: RewardSpec = field(init=False)
    state: EnvState = field(init=False)
    obs_dim: int = OBS_DIM
    action_dim: int = ACTION_DIM

    def __post_init__(self) -> None:
        if self.episode_length < 1:
            raise ValidationError("episode_length must be positive")
        self.reward_spec = RewardSpec(tuple(t.component for t in self.terms))
        self.component_spec = self.reward_spec
        self._rng = np.random.default_rng(self.seed)
        self._finished = True
        self.reset()

    def reset(self) -> Array:
        position = self._rng.uniform(-START_SPREAD, START_SPREAD, size=2)
        self.state = EnvState(position, np.zeros(2), 0, self._rng)
        self._finished = False
        return self.observation()

    def observation(self) -> Array:
        return np.concatenate([np.asarray(GOAL) - self.state.position, self.state.velocity])

    def step(self, action: Array) -> StepResult:
        """
        Advance one step of DT seconds.

        The action is clipped to [-1, 1]^2, velocity integrates a*DT and is then
        damped by DAMPING, and position integrates the new velocity.

        Raises:
            EpisodeDoneError: If the episode already terminated or timed out.
            NumericalError: If the action is non-finite.
        """
        if self._finished:
            raise EpisodeDoneError(
                f"{self.name}: step() called after the episode ended; call reset() first"
            )
        action = np.asarray(action, dtype=np.float64).reshape(ACTION_DIM)
        if not np.all(np.isfinite(action)):
            raise NumericalError(f"{self.name}: non-finite action {action.tolist()}")
        action = np.clip(action, -1.0, 1.0)

        prev_pos = self.state.position
        velocity = (self.state.velocity + action * DT) * (1.0 - DAMPING)
        position = prev_pos + velocity * DT
        self.state = EnvState(position, velocity, self.state.step_index + 1, self._rng)

        reward = np.array(
            [t.component.scale * t.raw(prev_pos, position, velocity, action) for t in self.terms]
        )

        outside = bool(np.any(np.abs(position) > ARENA_HALF_WIDTH))
        reached = self.goal_terminates and bool(
            np.hypot(*(np.asarray(GOAL) - position)) < GOAL_RADIUS
        )
        done = outside or reached
        timeout = not done and self.state.step_index >= self.episode_length
        self._finished = done or timeout
        return StepResult(self.observation(), reward, done, timeout, reward)


class ScalarizedEnv:
    """
    Reference single-reward view of a vector-reward environment.

    The training reward is the per-step sum of the wrapped components; the
    full vector is still reported in `StepResult.components`.
    """

    def __init__(self, env: Env):
        self.env = env
        self.reward_spec = env.reward_spec.scalarized()
        self.component_spec = env.component_spec
        self.obs_dim = env.obs_dim
        self.action_dim = env.action_dim

    def reset(self) -> Array:
        return self.env.reset()

    def step(self, action: Array) -> StepResult:
        result = self.env.step(action)
        return StepResult(
            result.observation,
            np.array([result.reward.sum()]),
            result.done,
            result.timeout,
            result.components,
        )


def default_bands() -> tuple[BandObjective, ...]:
    """A feasible style set: moderate speed, straight heading, centred height."""
    return (
        BandObjective.from_level("speed", 2),
        BandObjective.from_level("heading", 2),
        BandObjective.from_level("height", 2),
    )


def _band_names(bands: Sequence[BandObjective]) -> list[str]:
    counts: dict[str, int] = {}
    for band in bands:
        counts[band.quantity] = counts.get(band.quantity, 0) + 1
    names = []
    seen: dict[str, int] = {}
    for band in bands:
        if counts[band.quantity] == 1:
            names.append(f"{band.quantity}_band")
        else:
            seen[band.quantity] = seen.get(band.quantity, 0) + 1
            names.append(f"{band.quantity}_band_{seen[band.quantity]}")
    return names


def validate_bands(bands: Sequence[BandObjective]) -> None:
    if not 1 <= len(bands) <= 4:
        raise ValidationError(f"pointmass-styled takes 1 to 4 band objectives, got {len(bands)}")
    for i, a in enumerate(bands):
        for b in bands[i + 1 :]:
            if a.overlaps(b):
                raise ValidationError(
                    f"band objectives on '{a.quantity}' overlap: "
                    f"[{a.lo}, {a.hi}) and [{b.lo}, {b.hi})"
                )


def make_env(
    name: str,
    bands: Sequence[BandObjective] | None = None,
    seed: int = 0,
    episode_length: int = EPISODE_LENGTH,
) -> PointMassEnv:
    """
    Build a named environment.

    Args:
        name: One of pointmass-aligned, pointmass-styled, pointmass-conflict.
        bands: Band objectives for pointmass-styled (default: `default_bands()`).
        seed: Per-instance seed.
        episode_length: Steps before timeout.

    Raises:
        ValidationError: For an unknown name, bands on a non-styled env, or an
            invalid band set.
    """
    if name not in ENV_NAMES:
        raise ValidationError(
            f"unknown environment '{name}'; expected one of {', '.join(ENV_NAMES)}"
        )
    effort = _Term(RewardComponent("effort", "regulariser", EFFORT_SCALE), _effort)
    progress = _Term(RewardComponent("goal", "task", PROGRESS_SCALE), _goal_progress)

    if name != "pointmass-styled" and bands:
        raise ValidationError(f"{name} does not take band objectives")

    if name == "pointmass-aligned":
        return PointMassEnv(name, [progress, effort], seed, episode_length)

    if name == "pointmass-conflict":
        terms = [
            _Term(RewardComponent("right", "task", PROGRESS_SCALE), _x_velocity),
            _Term(RewardComponent("left", "task", PROGRESS_SCALE), _neg_x_velocity),
            effort,
        ]
        return PointMassEnv(name, terms, seed, episode_length, goal_terminates=False)

    band_set = tuple(bands) if bands else default_bands()
    validate_bands(band_set)
    band_terms = [
        _Term(RewardComponent(band_name, "task", band.bonus), _band_term(band))
        for band_name, band in zip(_band_names(band_set), band_set)
    ]
    return PointMassEnv(
        name, [progress, *band_terms, effort], seed, episode_length, bands=band_set
    )
