"""Shared test fixtures for conflict_ppo tests."""

import numpy as np
import pytest

from conflict_ppo.config import EnvConfig, RunConfig, TrainConfig
from conflict_ppo.envs import ScalarizedEnv, StepResult, make_env
from conflict_ppo.gradres import GradientSet
from conflict_ppo.losses import MiniBatch
from conflict_ppo.nets import GaussianActor, MultiHeadCritic
from conflict_ppo.rollout import TrajectoryBatch


@pytest.fixture
def rng():
    """Seeded generator for test data."""
    return np.random.default_rng(0)


@pytest.fixture
def tiny_config():
    """A training config small enough to run several updates in a test."""
    return TrainConfig(
        updates=2,
        num_envs=2,
        horizon=8,
        epochs=1,
        minibatches=2,
        hidden_sizes=(8,),
        cosine_every=1,
        record_timings=False,
    )


@pytest.fixture
def tiny_run(tiny_config):
    """Tiny config on the aligned env with episodes short enough to finish."""
    return RunConfig(tiny_config, EnvConfig("pointmass-aligned", episode_length=8))


@pytest.fixture
def scalar_env_factory():
    """Single-component environment factory."""

    def _factory(seed):
        return ScalarizedEnv(make_env("pointmass-aligned", seed=seed, episode_length=8))

    return _factory


class NaNEnv:
    """Wraps an environment and emits non-finite observations from step()."""

    def __init__(self, env):
        self.env = env
        self.reward_spec = env.reward_spec
        self.component_spec = env.component_spec
        self.obs_dim = env.obs_dim
        self.action_dim = env.action_dim

    def reset(self):
        return self.env.reset()

    def step(self, action):
        result = self.env.step(action)
        return StepResult(
            np.full(self.obs_dim, np.nan),
            result.reward,
            result.done,
            result.timeout,
            result.components,
        )


@pytest.fixture
def nan_env_factory():
    """Factory whose environments diverge on the first step."""

    def _factory(seed):
        return NaNEnv(make_env("pointmass-aligned", seed=seed))

    return _factory


@pytest.fixture
def make_gradient_set():
    """Factory fixture for random gradient sets."""

    def _create(k=3, dim=16, labels=None, seed=0):
        gen = np.random.default_rng(seed)
        if labels is None:
            labels = tuple("task" if i % 2 == 0 else "regulariser" for i in range(k))
        return GradientSet(gen.standard_normal((k, dim)), tuple(labels))

    return _create


@pytest.fixture
def make_batch():
    """Factory fixture for random trajectory batches."""

    def _create(num_envs=3, horizon=5, k=2, obs_dim=4, action_dim=2, seed=0, done_rate=0.0):
        gen = np.random.default_rng(seed)
        shape = (num_envs, horizon)
        dones = (gen.random(shape) < done_rate).astype(np.float64)
        return TrajectoryBatch(
            observations=gen.standard_normal((*shape, obs_dim)),
            actions=gen.standard_normal((*shape, action_dim)),
            log_probs=gen.standard_normal(shape),
            rewards=gen.standard_normal((*shape, k)),
            dones=dones,
            timeouts=np.zeros(shape),
            values=gen.standard_normal((*shape, k)),
            next_values=gen.standard_normal((*shape, k)),
            episode_returns=np.zeros((0, k)),
        )

    return _create


@pytest.fixture
def small_actor():
    """Actor with 3-d observations, 2-d actions and one hidden layer."""
    return GaussianActor(3, 2, (4,), np.random.default_rng(1), output_gain=1.0)


@pytest.fixture
def small_critic():
    """Critic with 3-d observations and two heads."""
    return MultiHeadCritic(3, 2, (4,), np.random.default_rng(2))


@pytest.fixture
def make_minibatch():
    """Factory fixture for mini-batches drawn under a given actor."""

    def _create(actor, n=6, k=2, seed=0, log_prob_noise=0.0):
        gen = np.random.default_rng(seed)
        obs = gen.standard_normal((n, actor.obs_dim))
        actions = gen.standard_normal((n, actor.action_dim))
        log_probs = actor.log_prob(obs, actions) + log_prob_noise * gen.standard_normal(n)
        return MiniBatch(
            obs,
            actions,
            log_probs,
            gen.standard_normal((n, k)),
            gen.standard_normal((n, k)),
        )

    return _create
