"""
Vectorized on-policy collection into fixed-horizon trajectory segments.

Every array in a TrajectoryBatch is laid out (num_envs, horizon, ...). When an
episode ends inside a segment the environment is reset immediately and the
next row starts the new episode; the done/timeout flags mark the boundary.
"""

import logging
from collections import deque
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .diffcore import Array
from .envs import Env
from .exceptions import NumericalError, ValidationError
from .nets import GaussianActor, MultiHeadCritic
from .rewardspec import RewardSpec

logger = logging.getLogger(__name__)

RETURN_WINDOW = 100


@dataclass(frozen=True)
class TrajectoryBatch:
    """
    One collected segment.

    Attributes:
        observations: (E, T, obs_dim) observations s_t.
        actions: (E, T, action_dim) sampled (unclipped) actions.
        log_probs: (E, T) behaviour-policy log-densities.
        rewards: (E, T, K) training reward vectors.
        dones: (E, T) termination flags d_t.
        timeouts: (E, T) timeout flags.
        values: (E, T, K) critic values V(s_t).
        next_values: (E, T, K) critic values at each successor state, taken
            before any reset; the last column is the segment bootstrap V(s_T).
        episode_returns: (M, C) per-component returns of the M episodes that
            completed during the segment, C = number of logged components.
    """

    observations: Array
    actions: Array
    log_probs: Array
    rewards: Array
    dones: Array
    timeouts: Array
    values: Array
    next_values: Array
    episode_returns: Array

    def __post_init__(self) -> None:
        lead = self.log_probs.shape
        if len(lead) != 2:
            raise ValidationError(f"log_probs must be (num_envs, horizon), got {lead}")
        for name in ("observations", "actions", "rewards", "dones", "timeouts", "values"):
            if getattr(self, name).shape[:2] != lead:
                raise ValidationError(
                    f"{name} has leading shape {getattr(self, name).shape[:2]}, expected {lead}"
                )
        if self.next_values.shape != self.values.shape:
            raise ValidationError("next_values and values must have the same shape")
        if self.rewards.shape[2] != self.values.shape[2]:
            raise ValidationError(
                f"reward vectors have {self.rewards.shape[2]} entries but the critic "
                f"has {self.values.shape[2]} heads"
            )
        if not np.all(np.isfinite(self.log_probs)):
            raise NumericalError("non-finite behaviour log-probabilities in batch")

    @property
    def num_envs(self) -> int:
        return int(self.log_probs.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.log_probs.shape[1])

    @property
    def k(self) -> int:
        return int(self.rewards.shape[2])

    @property
    def size(self) -> int:
        return self.num_envs * self.horizon

    @property
    def bootstrap_values(self) -> Array:
        return self.next_values[:, -1]

    def flat(self, name: str) -> Array:
        """Merge the (E, T) leading axes of one field, env-major."""
        value = getattr(self, name)
        return value.reshape(self.size, *value.shape[2:])


class VectorEnv:
    """
    A fixed set of environment instances stepped in lockstep.

    Keeps each instance's running per-component return and a window of the
    last RETURN_WINDOW completed episodes for reporting.
    """

    def __init__(self, envs: Sequence[Env]):
        if not envs:
            raise ValidationError("a vector env needs at least one environment")
        self.envs = list(envs)
        self.reward_spec: RewardSpec = self.envs[0].reward_spec
        self.component_spec: RewardSpec = self.envs[0].component_spec
        for env in self.envs[1:]:
            if env.reward_spec != self.reward_spec:
                raise ValidationError("all environments must share one reward spec")
        self.obs_dim = self.envs[0].obs_dim
        self.action_dim = self.envs[0].action_dim
        self.observations = np.stack([env.reset() for env in self.envs])
        self._running = np.zeros((len(self.envs), self.component_spec.k))
        self.completed: deque[Array] = deque(maxlen=RETURN_WINDOW)

    @property
    def num_envs(self) -> int:
        return len(self.envs)

    def mean_component_returns(self) -> Array:
        """Mean per-component episodic return over the window (NaN before any episode ends)."""
        if not self.completed:
            return np.full(self.component_spec.k, np.nan)
        return np.mean(np.stack(list(self.completed)), axis=0)

    def mean_return(self) -> float:
        return float(np.sum(self.mean_component_returns()))


def collect(
    actor: GaussianActor,
    critic: MultiHeadCritic,
    venv: VectorEnv,
    horizon: int,
    rng: np.random.Generator,
) -> TrajectoryBatch:
    """
    Roll every environment forward `horizon` steps under the current policy.

    Args:
        actor: Behaviour policy; its log-densities are stored with each action.
        critic: Value network evaluated at every state and successor state.
        venv: Environments, continued from wherever the previous segment stopped.
        horizon: Steps per environment.
        rng: Action-noise generator.

    Returns:
        A batch of exactly num_envs * horizon transitions.

    Raises:
        NumericalError: If an environment produces a non-finite observation.
    """
    if horizon < 1:
        raise ValidationError("horizon must be positive")
    if critic.num_heads != venv.reward_spec.k:
        raise ValidationError(
            f"critic has {critic.num_heads} heads but the environments emit "
            f"{venv.reward_spec.k} reward components"
        )
    E, T, K = venv.num_envs, horizon, venv.reward_spec.k
    observations = np.zeros((E, T, venv.obs_dim))
    actions = np.zeros((E, T, venv.action_dim))
    log_probs = np.zeros((E, T))
    rewards = np.zeros((E, T, K))
    dones = np.zeros((E, T))
    timeouts = np.zeros((E, T))
    values = np.zeros((E, T, K))
    next_values = np.zeros((E, T, K))
    finished: list[Array] = []

    for t in range(T):
        obs = venv.observations
        _check_observations(obs, t)
        action, logp = actor.sample(obs, rng)
        observations[:, t] = obs
        actions[:, t] = action
        log_probs[:, t] = logp
        values[:, t] = critic.values(obs)

        successors = np.zeros_like(obs)
        reset_obs = np.zeros_like(obs)
        for i, env in enumerate(venv.envs):
            result = env.step(action[i])
            successors[i] = result.observation
            rewards[i, t] = result.reward
            dones[i, t] = float(result.done)
            timeouts[i, t] = float(result.timeout)
            venv._running[i] += result.components
            if result.done or result.timeout:
                finished.append(venv._running[i].copy())
                venv.completed.append(venv._running[i].copy())
                venv._running[i] = 0.0
                reset_obs[i] = env.reset()
            else:
                reset_obs[i] = result.observation

        _check_observations(successors, t)
        next_values[:, t] = critic.values(successors)
        venv.observations = reset_obs

    episode_returns = (
        np.stack(finished) if finished else np.zeros((0, venv.component_spec.k))
    )
    return TrajectoryBatch(
        observations,
        actions,
        log_probs,
        rewards,
        dones,
        timeouts,
        values,
        next_values,
        episode_returns,
    )


def _check_observations(obs: Array, step: int) -> None:
    if not np.all(np.isfinite(obs)):
        bad = np.flatnonzero(~np.all(np.isfinite(obs), axis=1)).tolist()
        raise NumericalError(
            f"non-finite observation from environment(s) {bad} at step {step}",
            {"envs": bad, "step": step},
        )
