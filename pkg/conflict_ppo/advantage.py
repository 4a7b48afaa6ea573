"""Component-wise GAE and joint advantage normalization."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .diffcore import Array
from .exceptions import ValidationError
from .rollout import TrajectoryBatch

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-8
DEGENERATE_RATIO = 1e-8


@dataclass(frozen=True)
class AdvantageBlock:
    """
    Advantages for one batch, flattened env-major to N = num_envs * horizon rows.

    Attributes:
        advantages: (N, K) raw GAE advantages.
        targets: (N, K) TD(lambda) targets, advantages + values.
        normalized: (N, K) jointly normalized advantages.
        mean: (K,) per-component batch means.
        covariance: (K, K) sample covariance (N - 1 divisor).
        denominator: The shared scale sqrt(1'C1 + eps).
    """

    advantages: Array
    targets: Array
    normalized: Array
    mean: Array
    covariance: Array
    denominator: float

    @property
    def k(self) -> int:
        return int(self.advantages.shape[1])


def gae_arrays(
    rewards: Array,
    values: Array,
    next_values: Array,
    dones: Array,
    timeouts: Array,
    gamma: float,
    lam: float,
) -> tuple[Array, Array]:
    """
    GAE over (E, T, K) segments, every component independently.

    delta_t = r_t + gamma * (1 - d_t) * V(s_{t+1}) - V(s_t). The recursion is
    cut at every episode boundary (termination or timeout); only termination
    drops the bootstrap term from delta.

    Returns:
        (advantages, targets), both (E, T, K).
    """
    if not 0.0 < gamma < 1.0:
        raise ValidationError(f"gamma must lie in (0, 1), got {gamma}")
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"gae lambda must lie in [0, 1], got {lam}")

    if rewards.ndim != 3 or values.shape != rewards.shape or next_values.shape != rewards.shape:
        raise ValidationError(
            "rewards, values and next_values must share one (num_envs, horizon, K) shape"
        )
    if dones.shape != rewards.shape[:2] or timeouts.shape != rewards.shape[:2]:
        raise ValidationError("dones and timeouts must be (num_envs, horizon)")

    not_done = (1.0 - dones)[..., None]
    carry = ((1.0 - dones) * (1.0 - timeouts))[..., None]
    deltas = rewards + gamma * not_done * next_values - values

    advantages = np.zeros_like(rewards)
    running = np.zeros((rewards.shape[0], rewards.shape[2]))
    for t in reversed(range(rewards.shape[1])):
        running = deltas[:, t] + gamma * lam * carry[:, t] * running
        advantages[:, t] = running
    return advantages, advantages + values


def gae(batch: TrajectoryBatch, gamma: float, lam: float) -> tuple[Array, Array]:
    """Component-wise GAE of a collected batch; see `gae_arrays`."""
    return gae_arrays(
        batch.rewards,
        batch.values,
        batch.next_values,
        batch.dones,
        batch.timeouts,
        gamma,
        lam,
    )


def normalize(advantages: Array, eps: float = DEFAULT_EPS) -> tuple[Array, Array, Array, float]:
    """
    Jointly normalize per-component advantages.

    Each component is centred by its own mean, then every component is divided
    by the same scalar sqrt(1'C1 + eps), so the summed advantage has unit
    variance and ratios between components are preserved.

    Args:
        advantages: (N, K) raw advantages.
        eps: Denominator guard.

    Returns:
        (normalized, mean, covariance, denominator).

    Raises:
        ValidationError: If N < 2.

    Example:
        >>> a = np.array([[1.0], [3.0]])
        >>> normalize(a, eps=0.0)[0].ravel()
        array([-0.70710678,  0.70710678])
    """
    advantages = np.asarray(advantages, dtype=np.float64)
    if advantages.ndim != 2:
        raise ValidationError(f"advantages must be (N, K), got shape {advantages.shape}")
    n = advantages.shape[0]
    if n < 2:
        raise ValidationError(f"joint normalization needs at least 2 samples, got {n}")

    mean = advantages.mean(axis=0)
    centred = advantages - mean
    covariance = centred.T @ centred / (n - 1)
    total = max(float(covariance.sum()), 0.0)
    denominator = math.sqrt(total + eps)

    spread = float(np.trace(covariance))
    if spread > 0.0 and total < DEGENERATE_RATIO * spread:
        logger.warning(
            "Summed advantage variance %.3e is degenerate (component variances sum to %.3e); "
            "normalization denominator is %.3e",
            total,
            spread,
            denominator,
        )
    return centred / denominator, mean, covariance, denominator


def compute_advantages(
    batch: TrajectoryBatch, gamma: float, lam: float, eps: float = DEFAULT_EPS
) -> AdvantageBlock:
    """GAE plus joint normalization over the full batch, flattened env-major."""
    advantages, targets = gae(batch, gamma, lam)
    flat_adv = advantages.reshape(batch.size, batch.k)
    normalized, mean, covariance, denominator = normalize(flat_adv, eps)
    return AdvantageBlock(
        flat_adv,
        targets.reshape(batch.size, batch.k),
        normalized,
        mean,
        covariance,
        denominator,
    )
