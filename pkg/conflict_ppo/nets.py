"""
Gaussian-policy actor and multi-head critic.

Both networks keep their parameters as plain float64 arrays in a fixed
registry order and express their forward passes as diffcore graphs over a
list of parameter tensors. Passing watched tensors yields a differentiable
evaluation; passing constants yields the same numbers without a tape.

Registry order:
    actor:  mean.0.weight, mean.0.bias, ..., mean.L.weight, mean.L.bias, log_std
    critic: trunk.0.weight, trunk.0.bias, ..., heads.weight, heads.bias

Weights are stored as (fan_in, fan_out) so a layer computes x @ W + b.
"""

import math
from collections.abc import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Array, Tensor
from .exceptions import NumericalError, ValidationError
from .rewardspec import RewardSpec

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)


def orthogonal(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> Array:
    """Orthogonal matrix of the given shape scaled by `gain` (QR of a Gaussian draw)."""
    rows, cols = shape
    draw = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(draw)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def _check_finite(name: str, value: Array) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericalError(
            f"non-finite {name} passed to the network",
            {"nan": int(np.isnan(value).sum()), "inf": int(np.isinf(value).sum())},
        )


def _mlp(params: Sequence[Tensor], x: Tensor) -> Tensor:
    """tanh MLP over alternating (weight, bias) tensors; the last layer is linear."""
    n_layers = len(params) // 2
    h = x
    for i in range(n_layers):
        h = dc.add_bias(dc.matmul(h, params[2 * i]), params[2 * i + 1])
        if i < n_layers - 1:
            h = dc.tanh(h)
    return h


def _init_layers(
    sizes: Sequence[int], rng: np.random.Generator, hidden_gain: float, output_gain: float
) -> list[Array]:
    layers: list[Array] = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = output_gain if i == len(sizes) - 2 else hidden_gain
        layers.append(orthogonal((fan_in, fan_out), gain, rng))
        layers.append(np.zeros(fan_out))
    return layers


class _Network:
    """Shared parameter-registry plumbing."""

    _names: list[str]
    _params: list[Array]

    def parameter_names(self) -> list[str]:
        return list(self._names)

    def parameters(self) -> list[Array]:
        return self._params

    def shapes(self) -> list[tuple[int, ...]]:
        return [p.shape for p in self._params]

    @property
    def num_parameters(self) -> int:
        return int(np.sum([p.size for p in self._params]))

    def flat(self) -> Array:
        return dc.flatten_gradients(self._params)

    def load_flat(self, vector: Array) -> None:
        self._params = dc.unflatten_gradients(vector, self.shapes())

    def load_parameters(self, params: Sequence[Array]) -> None:
        if [tuple(np.shape(p)) for p in params] != self.shapes():
            raise ValidationError("parameter shapes do not match the network architecture")
        self._params = [np.array(p, dtype=np.float64) for p in params]

    def _constants(self) -> list[Tensor]:
        return [dc.constant(p) for p in self._params]


class GaussianActor(_Network):
    """
    Diagonal-Gaussian policy: tanh MLP mean plus a state-independent log-std.

    Args:
        obs_dim: Observation size.
        action_dim: Action size.
        hidden_sizes: Hidden layer widths.
        rng: Generator used for initialization.
        hidden_gain: Orthogonal-init gain for hidden layers.
        output_gain: Orthogonal-init gain for the mean output layer.
        log_std_init: Initial value of every log-std coordinate.
    """

    def __init__(
        self,
        obs_dim: int,
        action_dim: int,
        hidden_sizes: Sequence[int] = (64, 64),
        rng: np.random.Generator | None = None,
        hidden_gain: float = 1.0,
        output_gain: float = 0.01,
        log_std_init: float = 0.0,
    ):
        if obs_dim < 1 or action_dim < 1:
            raise ValidationError("obs_dim and action_dim must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        sizes = [obs_dim, *self.hidden_sizes, action_dim]
        self._params = _init_layers(sizes, rng, hidden_gain, output_gain)
        self._params.append(np.full(action_dim, float(log_std_init)))
        self._names = []
        for i in range(len(sizes) - 1):
            self._names += [f"mean.{i}.weight", f"mean.{i}.bias"]
        self._names.append("log_std")

    @property
    def log_std(self) -> Array:
        return self._params[-1]

    def copy(self) -> "GaussianActor":
        clone = object.__new__(GaussianActor)
        clone.obs_dim = self.obs_dim
        clone.action_dim = self.action_dim
        clone.hidden_sizes = self.hidden_sizes
        clone._names = list(self._names)
        clone._params = [p.copy() for p in self._params]
        return clone

    # Graphs

    def mean_graph(self, params: Sequence[Tensor], obs: Tensor) -> Tensor:
        return _mlp(params[:-1], obs)

    def log_prob_graph(self, params: Sequence[Tensor], obs: Tensor, action: Tensor) -> Tensor:
        """Per-sample log-density, shape (N,)."""
        mean = self.mean_graph(params, obs)
        log_std = dc.add_bias(dc.constant(np.zeros(action.shape)), params[-1])
        z = dc.mul(dc.sub(action, mean), dc.exp(dc.neg(log_std)))
        per_dim = dc.sub(dc.scale(dc.square(z), -0.5), dc.shift(log_std, HALF_LOG_2PI))
        return dc.sum(per_dim, axis=1)

    def entropy_graph(self, params: Sequence[Tensor]) -> Tensor:
        return dc.sum(dc.shift(params[-1], HALF_LOG_2PIE))

    # Plain evaluation

    def mean(self, obs: Array) -> Array:
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        _check_finite("observation", obs)
        return self.mean_graph(self._constants(), dc.constant(obs)).data

    def log_prob(self, obs: Array, action: Array) -> Array:
        """
        Exact diagonal-Gaussian log-density of `action` under the policy at `obs`.

        Raises:
            NumericalError: If an observation is non-finite.
        """
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        action = np.atleast_2d(np.asarray(action, dtype=np.float64))
        _check_finite("observation", obs)
        return self.log_prob_graph(self._constants(), dc.constant(obs), dc.constant(action)).data

    def sample(self, obs: Array, rng: np.random.Generator) -> tuple[Array, Array]:
        """Reparameterized draw a = mu + sigma * z and its log-density."""
        mean = self.mean(obs)
        noise = rng.standard_normal(mean.shape)
        action = mean + np.exp(self.log_std) * noise
        return action, self.log_prob(obs, action)

    def entropy(self) -> float:
        return self.entropy_graph(self._constants()).item()


class MultiHeadCritic(_Network):
    """
    Shared tanh trunk with K linear heads; head k estimates the return of component k.

    Args:
        obs_dim: Observation size.
        num_heads: K, the number of reward components.
        hidden_sizes: Trunk widths.
        rng: Generator used for initialization.
        reward_spec: If given, K must equal its component count.
        hidden_gain: Orthogonal-init gain for trunk layers.
        head_gain: Orthogonal-init gain for the heads (0 gives zero heads).

    Raises:
        ValidationError: If K < 1 or K disagrees with `reward_spec`.
    """

    def __init__(
        self,
        obs_dim: int,
        num_heads: int,
        hidden_sizes: Sequence[int] = (64, 64),
        rng: np.random.Generator | None = None,
        reward_spec: RewardSpec | None = None,
        hidden_gain: float = 1.0,
        head_gain: float = 1.0,
    ):
        if num_heads < 1:
            raise ValidationError("the critic needs at least one head")
        if reward_spec is not None and reward_spec.k != num_heads:
            raise ValidationError(
                f"critic has {num_heads} heads but the reward spec declares {reward_spec.k} "
                "components"
            )
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.num_heads = num_heads
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        sizes = [obs_dim, *self.hidden_sizes, num_heads]
        self._params = _init_layers(sizes, rng, hidden_gain, head_gain)
        self._names = []
        for i in range(len(sizes) - 2):
            self._names += [f"trunk.{i}.weight", f"trunk.{i}.bias"]
        self._names += ["heads.weight", "heads.bias"]

    def copy(self) -> "MultiHeadCritic":
        clone = object.__new__(MultiHeadCritic)
        clone.obs_dim = self.obs_dim
        clone.num_heads = self.num_heads
        clone.hidden_sizes = self.hidden_sizes
        clone._names = list(self._names)
        clone._params = [p.copy() for p in self._params]
        return clone

    def values_graph(self, params: Sequence[Tensor], obs: Tensor) -> Tensor:
        """Per-sample value vector, shape (N, K)."""
        return _mlp(params, obs)

    def values(self, obs: Array) -> Array:
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        _check_finite("observation", obs)
        return self.values_graph(self._constants(), dc.constant(obs)).data
