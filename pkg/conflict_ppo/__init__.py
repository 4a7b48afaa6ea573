"""
Conflict-aware multi-objective PPO.

Proximal policy optimization over an additive reward decomposition: a
multi-head critic estimates one value per reward component, advantages are
computed per component and normalized jointly, and per-component policy
gradients are resolved with priority-aware gradient projection before the
update.

Example:
    >>> from conflict_ppo import EnvConfig, Experiment, RunConfig, TrainConfig, train
    >>>
    >>> # Train the full method on the styled point-mass task
    >>> result = train(TrainConfig(algo="gcr", updates=50), EnvConfig("pointmass-styled"))
    >>> result.records[-1].conflict_count
    >>>
    >>> # Compare against plain PPO over several seeds
    >>> with Experiment("runs/cmp") as exp:
    ...     rows = exp.compare(RunConfig(), ["ppo", "gcr"], seeds=10)
"""

from .config import EnvConfig, RunConfig, TrainConfig, load_config
from .exceptions import (
    CheckpointError,
    ConflictPPOError,
    EpisodeDoneError,
    NumericalError,
    ShapeError,
    TapeConsumedError,
    TrainingAborted,
    ValidationError,
)
from .gradres import ConflictStats, GradientSet, detect_conflicts, project, resolve
from .harness import Experiment
from .metrics import spc, win_rate
from .nets import GaussianActor, MultiHeadCritic
from .rewardspec import RewardComponent, RewardSpec, split_indices
from .trainer import Trainer, TrainResult, UpdateRecord, adapt_lr, train

__version__ = "0.1.0"
__author__ = "Conflict PPO Contributors"

__all__ = [
    # Training
    "train",
    "Trainer",
    "TrainResult",
    "UpdateRecord",
    "adapt_lr",
    "Experiment",
    # Configuration
    "TrainConfig",
    "EnvConfig",
    "RunConfig",
    "load_config",
    # Reward decomposition
    "RewardComponent",
    "RewardSpec",
    "split_indices",
    # Networks
    "GaussianActor",
    "MultiHeadCritic",
    # Gradient resolution
    "GradientSet",
    "ConflictStats",
    "detect_conflicts",
    "project",
    "resolve",
    # Metrics
    "spc",
    "win_rate",
    # Exceptions
    "ConflictPPOError",
    "ValidationError",
    "ShapeError",
    "TapeConsumedError",
    "EpisodeDoneError",
    "NumericalError",
    "CheckpointError",
    "TrainingAborted",
]
