"""
The multi-objective PPO update loop.

One update: collect a segment from every environment, run component-wise
GAE, normalize jointly over the whole batch, then for each epoch and
mini-batch compute K surrogate gradients, resolve them according to the
algorithm mode, add the entropy gradient and take an Adam step. The critic
takes one step on the joint value loss per mini-batch. The learning rate
follows the KL-adaptive rule, evaluated once per mini-batch before its step.

Mode -> resolution policy:

    ppo         scalarized reward, one head, plain sum
    multihead   K heads and K surrogates, plain sum
    gcr-noprio  symmetric PCGrad over all components
    gcr         task-over-regulariser priority resolution
"""

import logging
import time
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .advantage import compute_advantages
from .checkpoint import checkpoint_document
from .config import EnvConfig, TrainConfig
from .diffcore import Array
from .envs import Env, ScalarizedEnv, make_env
from .exceptions import NumericalError, TrainingAborted
from .gradres import ConflictStats, GradientSet, detect_conflicts, resolve_components
from .losses import (
    LossReport,
    MiniBatch,
    entropy_gradient,
    kl_from_log_ratio,
    policy_gradients,
    value_loss,
)
from .metrics import CosineLog
from .nets import GaussianActor, MultiHeadCritic
from .optim import Adam, clip_by_norm
from .rewardspec import RewardSpec
from .rollout import TrajectoryBatch, VectorEnv, collect
from .types import AlgoMode, CosineEntry, ResolutionPolicy

logger = logging.getLogger(__name__)

LR_MIN = 1e-6
LR_MAX = 1e-2
LR_FACTOR = 1.5

RESOLUTION_POLICY: dict[AlgoMode, ResolutionPolicy] = {
    "ppo": "sum",
    "multihead": "sum",
    "gcr-noprio": "symmetric",
    "gcr": "priority",
}

EnvFactory = Callable[[int], Env]


def adapt_lr(lr: float, kl: float, target_kl: float) -> float:
    """
    KL-adaptive learning rate.

    Example:
        >>> adapt_lr(1e-3, 0.04, 0.01)  # KL above twice the target
        0.0006666666666666666
    """
    if kl > 2.0 * target_kl:
        return max(lr / LR_FACTOR, LR_MIN)
    if kl < target_kl / 2.0:
        return min(lr * LR_FACTOR, LR_MAX)
    return lr


@dataclass
class UpdateRecord:
    """Everything logged about one update."""

    update: int
    mean_return: float
    component_returns: Array
    loss_surrogate_sum: float
    loss_value: float
    entropy: float
    kl: float
    lr: float
    conflict_count: float
    n_projections: float
    t_collect_s: float
    t_gae_s: float
    t_update_s: float
    t_project_s: float
    minibatch_conflicts: list[int] = field(default_factory=list)


@dataclass
class TrainResult:
    records: list[UpdateRecord]
    actor: GaussianActor
    critic: MultiHeadCritic
    reward_spec: RewardSpec
    component_spec: RewardSpec

    def checkpoint(self) -> dict[str, Any]:
        return checkpoint_document(
            self.actor,
            self.critic,
            self.reward_spec,
            extra={"updates": len(self.records)},
        )


def default_env_factory(env: EnvConfig) -> EnvFactory:
    def factory(seed: int) -> Env:
        return make_env(env.name, env.bands or None, seed, env.episode_length)

    return factory


class Trainer:
    """
    Owns the networks, optimizers and generators of one run.

    Args:
        config: Training hyperparameters.
        env_factory: Builds one environment instance from a seed.
        cosine_log: Optional sidecar receiving cosine matrices every
            `config.cosine_every` updates.

    Example:
        >>> trainer = Trainer(TrainConfig(updates=2, num_envs=4, horizon=16),
        ...                   default_env_factory(EnvConfig("pointmass-aligned")))
        >>> records = list(trainer.iterate())
    """

    def __init__(
        self,
        config: TrainConfig,
        env_factory: EnvFactory,
        cosine_log: CosineLog | None = None,
    ):
        self.config = config
        self.cosine_log = cosine_log
        self.policy = RESOLUTION_POLICY[config.algo]

        init_seq, sample_seq, shuffle_seq, resolve_seq, env_seq = np.random.SeedSequence(
            config.seed
        ).spawn(5)
        self.sample_rng = np.random.default_rng(sample_seq)
        self.shuffle_rng = np.random.default_rng(shuffle_seq)
        self.resolve_rng = np.random.default_rng(resolve_seq)

        env_seeds = env_seq.generate_state(config.num_envs)
        envs: list[Env] = []
        for s in env_seeds:
            env = env_factory(int(s))
            envs.append(ScalarizedEnv(env) if config.algo == "ppo" else env)
        self.venv = VectorEnv(envs)
        self.reward_spec = self.venv.reward_spec
        self.component_spec = self.venv.component_spec

        init_rng = np.random.default_rng(init_seq)
        self.actor = GaussianActor(
            self.venv.obs_dim, self.venv.action_dim, config.hidden_sizes, init_rng
        )
        self.critic = MultiHeadCritic(
            self.venv.obs_dim,
            self.reward_spec.k,
            config.hidden_sizes,
            init_rng,
            reward_spec=self.reward_spec,
        )
        self.actor_opt = Adam(self.actor.num_parameters)
        self.critic_opt = Adam(self.critic.num_parameters)
        self.lr = config.learning_rate
        self.records: list[UpdateRecord] = []
        self._last_good = (self.actor.copy(), self.critic.copy())

    def checkpoint(self) -> dict[str, Any]:
        return checkpoint_document(
            self.actor,
            self.critic,
            self.reward_spec,
            extra={"updates": len(self.records), "seed": self.config.seed},
        )

    def _timer(self) -> float:
        return time.perf_counter() if self.config.record_timings else 0.0

    def _abort(self, update: int, error: NumericalError) -> TrainingAborted:
        actor, critic = self._last_good
        document = checkpoint_document(
            actor, critic, self.reward_spec, extra={"update": update, "aborted": True}
        )
        logger.error("Update %d aborted: %s", update, error.message)
        return TrainingAborted(
            f"update {update}: {error.message}", error.details, document, update
        )

    def iterate(self) -> Iterator[UpdateRecord]:
        """
        Run every update, yielding one record each.

        Raises:
            TrainingAborted: On a non-finite observation, ratio or loss; the
                exception carries the checkpoint of the parameters at the
                start of the failing update.
        """
        for update in range(self.config.updates):
            self._last_good = (self.actor.copy(), self.critic.copy())
            try:
                record = self.step(update)
            except TrainingAborted:
                raise
            except NumericalError as e:
                raise self._abort(update, e) from e
            self.records.append(record)
            logger.info(
                "update %d: return %.3f kl %.4f lr %.2e conflicts %.2f",
                update,
                record.mean_return,
                record.kl,
                record.lr,
                record.conflict_count,
            )
            yield record

    def run(self) -> TrainResult:
        for _ in self.iterate():
            pass
        return TrainResult(
            self.records, self.actor, self.critic, self.reward_spec, self.component_spec
        )

    def step(self, update: int) -> UpdateRecord:
        """Collect one segment and optimize on it."""
        cfg = self.config
        t0 = self._timer()
        batch = collect(self.actor, self.critic, self.venv, cfg.horizon, self.sample_rng)
        t1 = self._timer()
        block = compute_advantages(batch, cfg.gamma, cfg.gae_lambda, cfg.adv_eps)
        t2 = self._timer()

        reports: list[LossReport] = []
        conflicts: list[int] = []
        projections: list[int] = []
        t_project = 0.0
        for epoch in range(cfg.epochs):
            order = self.shuffle_rng.permutation(batch.size)
            for mb_index, rows in enumerate(np.array_split(order, cfg.minibatches)):
                mb = self._minibatch(batch, block.normalized, block.targets, rows)
                log_cosines = (
                    self.cosine_log is not None
                    and update % cfg.cosine_every == 0
                    and epoch == 0
                    and mb_index == 0
                )
                report, stats, n_proj, dt = self._optimize(mb, update, log_cosines)
                reports.append(report)
                conflicts.append(stats.conflict_count)
                projections.append(n_proj)
                t_project += dt
                logger.debug(
                    "update %d epoch %d mb %d: %d conflicts, %d projections",
                    update,
                    epoch,
                    mb_index,
                    stats.conflict_count,
                    n_proj,
                )
        t3 = self._timer()

        component_returns = self.venv.mean_component_returns()
        return UpdateRecord(
            update=update,
            mean_return=float(np.sum(component_returns)),
            component_returns=component_returns,
            loss_surrogate_sum=float(np.mean([r.surrogate_sum for r in reports])),
            loss_value=float(np.mean([r.value_loss for r in reports])),
            entropy=reports[-1].entropy,
            kl=float(np.mean([r.approx_kl for r in reports])),
            lr=self.lr,
            conflict_count=float(np.mean(conflicts)),
            n_projections=float(np.mean(projections)),
            t_collect_s=t1 - t0,
            t_gae_s=t2 - t1,
            t_update_s=t3 - t2,
            t_project_s=t_project,
            minibatch_conflicts=conflicts,
        )

    def _minibatch(
        self, batch: TrajectoryBatch, advantages: Array, targets: Array, rows: Array
    ) -> MiniBatch:
        return MiniBatch(
            batch.flat("observations")[rows],
            batch.flat("actions")[rows],
            batch.flat("log_probs")[rows],
            advantages[rows],
            targets[rows],
        )

    def _optimize(
        self, mb: MiniBatch, update: int, log_cosines: bool
    ) -> tuple[LossReport, ConflictStats, int, float]:
        cfg = self.config
        losses, gradients, log_ratios = policy_gradients(self.actor, mb, cfg.clip)
        if not np.all(np.isfinite(losses)):
            raise NumericalError("non-finite surrogate loss", {"surrogate": losses.tolist()})
        kl = kl_from_log_ratio(log_ratios)
        new_lr = adapt_lr(self.lr, kl, cfg.target_kl)
        if new_lr != self.lr and new_lr in (LR_MIN, LR_MAX):
            logger.warning("Learning rate reached its bound %.0e (kl %.4f)", new_lr, kl)
        self.lr = new_lr

        entropy, entropy_grad = entropy_gradient(self.actor)
        entropy_loss_grad = -cfg.entropy_coef * entropy_grad

        gs = GradientSet(gradients, tuple(self.reward_spec.labels), tuple(self.reward_spec.names))
        append_entropy = cfg.project_entropy and self.policy != "sum"
        if append_entropy:
            resolve_set = GradientSet(
                np.vstack([gradients, entropy_loss_grad]),
                (*gs.labels, "regulariser"),
                (*gs.names, "entropy"),
            )
        else:
            resolve_set = gs

        tp = self._timer()
        projected, stats = resolve_components(
            resolve_set, self.resolve_rng, self.policy, cfg.symmetric_reference
        )
        t_project = self._timer() - tp
        n_proj = stats.n_projections
        if append_entropy:
            stats = detect_conflicts(gs)
            direction = projected.sum(axis=0)
        else:
            direction = projected.sum(axis=0) + entropy_loss_grad

        if log_cosines and self.cosine_log is not None:
            entry: CosineEntry = {
                "update": update,
                "names": list(gs.names),
                "cosine": stats.cosine.tolist(),
                "conflict_count": stats.conflict_count,
            }
            if cfg.log_gradient_vectors:
                entry["vectors"] = gs.vectors.tolist()
            self.cosine_log.append(entry)

        if not np.all(np.isfinite(direction)):
            raise NumericalError("non-finite actor update direction", {"approx_kl": kl})
        direction = clip_by_norm(direction, cfg.max_grad_norm)
        self.actor.load_flat(self.actor_opt.step(self.actor.flat(), direction, self.lr))

        v_loss, v_grad = value_loss(self.critic, mb.observations, mb.targets)
        if not np.all(np.isfinite(v_grad)):
            raise NumericalError("non-finite critic gradient", {"value_loss": v_loss})
        v_grad = clip_by_norm(cfg.value_coef * v_grad, cfg.max_grad_norm)
        self.critic.load_flat(self.critic_opt.step(self.critic.flat(), v_grad, self.lr))

        report = LossReport(
            surrogate=losses,
            value_loss=v_loss,
            entropy=entropy,
            mean_ratio=float(np.mean(np.exp(log_ratios))),
            approx_kl=kl,
        )
        return report, stats, n_proj, t_project


def train(
    config: TrainConfig,
    env: EnvConfig | None = None,
    env_factory: EnvFactory | None = None,
    cosine_log: CosineLog | None = None,
) -> TrainResult:
    """
    Train one policy.

    Args:
        config: Training hyperparameters.
        env: Environment config; ignored when `env_factory` is given.
        env_factory: Custom environment builder taking a seed.
        cosine_log: Optional cosine-history sidecar.

    Returns:
        The update records and the final networks.

    Raises:
        TrainingAborted: On a numerical failure.
    """
    factory = env_factory or default_env_factory(env or EnvConfig())
    return Trainer(config, factory, cosine_log).run()
