"""
Per-component clipped surrogates, the joint value loss and the entropy bonus.

Each surrogate is evaluated on its own tape (tapes are single-use), so K
policy gradients cost K forward/backward passes over the same mini-batch.
"""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Array, Tensor
from .exceptions import NumericalError, ValidationError
from .nets import GaussianActor, MultiHeadCritic


@dataclass(frozen=True)
class MiniBatch:
    """
    Rows drawn from a flattened batch plus their advantage rows.

    Attributes:
        observations: (n, obs_dim)
        actions: (n, action_dim)
        log_probs: (n,) behaviour log-densities.
        advantages: (n, K) normalized advantages.
        targets: (n, K) value targets.
    """

    observations: Array
    actions: Array
    log_probs: Array
    advantages: Array
    targets: Array

    def __post_init__(self) -> None:
        n = self.log_probs.shape[0]
        for name in ("observations", "actions", "advantages", "targets"):
            if getattr(self, name).shape[0] != n:
                raise ValidationError(f"mini-batch field {name} does not have {n} rows")

    def __len__(self) -> int:
        return int(self.log_probs.shape[0])

    @property
    def k(self) -> int:
        return int(self.advantages.shape[1])


@dataclass(frozen=True)
class LossReport:
    surrogate: Array
    value_loss: float
    entropy: float
    mean_ratio: float
    approx_kl: float

    def __post_init__(self) -> None:
        scalars = [self.value_loss, self.entropy, self.mean_ratio, self.approx_kl]
        if not (np.all(np.isfinite(self.surrogate)) and np.all(np.isfinite(scalars))):
            raise NumericalError(
                "non-finite loss",
                {
                    "surrogate": self.surrogate.tolist(),
                    "value_loss": self.value_loss,
                    "entropy": self.entropy,
                    "approx_kl": self.approx_kl,
                },
            )
        if self.value_loss < 0:
            raise NumericalError(f"negative value loss {self.value_loss}")

    @property
    def surrogate_sum(self) -> float:
        return float(np.sum(self.surrogate))


def kl_from_log_ratio(log_ratio: Array) -> float:
    """mean(rho - 1 - ln rho): nonnegative per sample, zero iff rho == 1."""
    return float(np.mean(np.expm1(log_ratio) - log_ratio))


def log_ratio(actor: GaussianActor, batch: MiniBatch) -> Array:
    return actor.log_prob(batch.observations, batch.actions) - batch.log_probs


def approx_kl(actor: GaussianActor, batch: MiniBatch) -> float:
    """KL(pi_old || pi_theta) estimated from the stored behaviour log-densities."""
    return kl_from_log_ratio(log_ratio(actor, batch))


def check_ratio(log_ratios: Array) -> None:
    """
    Raises:
        NumericalError: If any importance ratio is non-finite; carries KL diagnostics.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.exp(log_ratios)
    if not np.all(np.isfinite(ratio)):
        finite = log_ratios[np.isfinite(log_ratios)]
        raise NumericalError(
            "non-finite importance ratio",
            {
                "non_finite": int((~np.isfinite(ratio)).sum()),
                "max_log_ratio": float(np.max(finite)) if finite.size else None,
                "approx_kl": kl_from_log_ratio(finite) if finite.size else None,
            },
        )


def surrogate_graph(
    actor: GaussianActor,
    params: list[Tensor],
    batch: MiniBatch,
    advantage: Array,
    clip: float,
) -> Tensor:
    """-mean(min(rho * A, clip(rho, 1 - clip, 1 + clip) * A))."""
    obs = dc.constant(batch.observations)
    actions = dc.constant(batch.actions)
    adv = dc.constant(advantage)
    logp = actor.log_prob_graph(params, obs, actions)
    ratio = dc.exp(dc.sub(logp, dc.constant(batch.log_probs)))
    unclipped = dc.mul(ratio, adv)
    clipped = dc.mul(dc.clamp(ratio, 1.0 - clip, 1.0 + clip), adv)
    return dc.neg(dc.mean(dc.minimum(unclipped, clipped)))


def surrogate_k(
    actor: GaussianActor, batch: MiniBatch, advantage: Array, clip: float
) -> Tensor:
    """
    Clipped surrogate for one component on a fresh tape.

    Returns:
        The scalar loss tensor; `backward(out.tape, 1.0)` yields its gradient
        with respect to every actor parameter in registry order.
    """
    if not 0.0 < clip < 1.0:
        raise ValidationError(f"clip must lie in (0, 1), got {clip}")
    advantage = np.asarray(advantage, dtype=np.float64)
    if advantage.shape != (len(batch),):
        raise ValidationError(
            f"advantage column has shape {advantage.shape}, expected ({len(batch)},)"
        )
    return dc.forward(
        lambda *params: surrogate_graph(actor, list(params), batch, advantage, clip),
        actor.parameters(),
    )


def policy_gradients(
    actor: GaussianActor, batch: MiniBatch, clip: float
) -> tuple[Array, Array, Array]:
    """
    Per-component surrogate losses and their flat actor gradients.

    Returns:
        (losses (K,), gradients (K, P), log ratios (n,)).

    Raises:
        NumericalError: If an importance ratio is non-finite.
    """
    ratios = log_ratio(actor, batch)
    check_ratio(ratios)
    losses = np.zeros(batch.k)
    gradients = np.zeros((batch.k, actor.num_parameters))
    for k in range(batch.k):
        out = surrogate_k(actor, batch, batch.advantages[:, k], clip)
        assert out.tape is not None
        losses[k] = out.item()
        gradients[k] = dc.flatten_gradients(dc.backward(out.tape, np.ones(())))
    return losses, gradients, ratios


def value_loss_graph(
    critic: MultiHeadCritic, params: list[Tensor], observations: Array, targets: Array
) -> Tensor:
    values = critic.values_graph(params, dc.constant(observations))
    residual = dc.sub(dc.constant(targets), values)
    return dc.scale(dc.sum(dc.square(residual)), 0.5 / targets.shape[0])


def value_loss(
    critic: MultiHeadCritic, observations: Array, targets: Array
) -> tuple[float, Array]:
    """
    Half the mean over samples of the summed squared head errors.

    Returns:
        (loss, flat critic gradient).
    """
    observations = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if targets.shape != (observations.shape[0], critic.num_heads):
        raise ValidationError(
            f"targets have shape {targets.shape}, expected "
            f"({observations.shape[0]}, {critic.num_heads})"
        )
    loss, grads = dc.value_and_grad(
        lambda *params: value_loss_graph(critic, list(params), observations, targets),
        critic.parameters(),
    )
    return loss, dc.flatten_gradients(grads)


def entropy_gradient(actor: GaussianActor) -> tuple[float, Array]:
    """Entropy of the policy and its flat gradient (nonzero only on log_std)."""
    entropy, grads = dc.value_and_grad(
        lambda *params: actor.entropy_graph(list(params)), actor.parameters()
    )
    return entropy, dc.flatten_gradients(grads)
