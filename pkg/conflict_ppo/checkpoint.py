"""Versioned structured-text checkpoints for an actor/critic pair."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .exceptions import CheckpointError, ValidationError
from .nets import GaussianActor, MultiHeadCritic
from .rewardspec import RewardSpec

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "conflict-ppo-checkpoint"
CHECKPOINT_VERSION = 1
PROBE_SEED = 20240611
NUM_PROBES = 4


@dataclass
class Checkpoint:
    """A loaded checkpoint."""

    actor: GaussianActor
    critic: MultiHeadCritic
    reward_spec: RewardSpec
    document: dict[str, Any]


def _named(names: list[str], params: list[np.ndarray]) -> dict[str, dict[str, Any]]:
    return {
        name: {"shape": list(p.shape), "values": p.reshape(-1).tolist()}
        for name, p in zip(names, params)
    }


def checkpoint_document(
    actor: GaussianActor,
    critic: MultiHeadCritic,
    reward_spec: RewardSpec,
    probes: np.ndarray | None = None,
    extra: dict[str, Any] | None = None,
) -> dict[str, Any]:
    """
    Build the checkpoint document.

    Every parameter is stored as a named flat list of doubles. Probe
    observations and the critic values (and actor means) they produce are
    embedded so a loader can verify bit-exact reproduction.
    """
    if probes is None:
        probes = np.random.default_rng(PROBE_SEED).standard_normal((NUM_PROBES, actor.obs_dim))
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "reward_spec": reward_spec.to_dict(),
        "architecture": {
            "obs_dim": actor.obs_dim,
            "action_dim": actor.action_dim,
            "actor_hidden": list(actor.hidden_sizes),
            "critic_hidden": list(critic.hidden_sizes),
            "num_heads": critic.num_heads,
            "activation": "tanh",
        },
        "actor": _named(actor.parameter_names(), actor.parameters()),
        "critic": _named(critic.parameter_names(), critic.parameters()),
        "probes": {
            "observations": probes.tolist(),
            "critic_values": critic.values(probes).tolist(),
            "actor_means": actor.mean(probes).tolist(),
        },
        "extra": extra or {},
    }


def save_checkpoint(
    path: str | Path,
    actor: GaussianActor,
    critic: MultiHeadCritic,
    reward_spec: RewardSpec,
    extra: dict[str, Any] | None = None,
) -> dict[str, Any]:
    document = checkpoint_document(actor, critic, reward_spec, extra=extra)
    write_document(path, document)
    return document


def write_document(path: str | Path, document: dict[str, Any]) -> None:
    Path(path).write_text(json.dumps(document, indent=1) + "\n", encoding="utf-8")
    logger.info("Wrote checkpoint %s", path)


def _restore(names: list[str], stored: dict[str, Any], section: str) -> list[np.ndarray]:
    params = []
    for name in names:
        if name not in stored:
            raise CheckpointError(f"checkpoint {section} is missing parameter '{name}'")
        entry = stored[name]
        values = np.asarray(entry["values"], dtype=np.float64)
        params.append(values.reshape(entry["shape"]))
    return params


def load_checkpoint(source: str | Path | dict[str, Any]) -> Checkpoint:
    """
    Load and verify a checkpoint.

    Args:
        source: Path to a checkpoint file or an already-parsed document.

    Returns:
        The reconstructed networks and reward spec.

    Raises:
        CheckpointError: If the document is malformed, has another format or
            version, or its probe values do not reproduce bit-exactly.
    """
    if isinstance(source, dict):
        document = source
    else:
        try:
            document = json.loads(Path(source).read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise CheckpointError(f"cannot read checkpoint {source}: {e}") from e

    if document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"not a checkpoint document: format={document.get('format')!r}")
    if document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {document.get('version')!r}",
            {"supported": CHECKPOINT_VERSION},
        )

    try:
        spec = RewardSpec.from_dict(document["reward_spec"])
        arch = document["architecture"]
        actor = GaussianActor(arch["obs_dim"], arch["action_dim"], arch["actor_hidden"])
        critic = MultiHeadCritic(
            arch["obs_dim"], arch["num_heads"], arch["critic_hidden"], reward_spec=spec
        )
        actor.load_parameters(_restore(actor.parameter_names(), document["actor"], "actor"))
        critic.load_parameters(_restore(critic.parameter_names(), document["critic"], "critic"))
        probes = np.asarray(document["probes"]["observations"], dtype=np.float64)
        stored_values = np.asarray(document["probes"]["critic_values"], dtype=np.float64)
        stored_means = np.asarray(document["probes"]["actor_means"], dtype=np.float64)
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise CheckpointError(f"malformed checkpoint: {e}") from e

    if not np.array_equal(critic.values(probes), stored_values):
        raise CheckpointError("critic values on stored probes do not reproduce")
    if not np.array_equal(actor.mean(probes), stored_means):
        raise CheckpointError("actor means on stored probes do not reproduce")
    return Checkpoint(actor, critic, spec, document)
