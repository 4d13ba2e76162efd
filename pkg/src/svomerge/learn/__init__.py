"""Deep Q-learning over VelocityMap stacks with semi-sequential multi-agent training."""

from .checkpoint import CheckpointError, load_checkpoint, load_policy, save_checkpoint
from .dqn import Learner, TargetSync, TrainSchedule, epsilon, td_loss, td_loss_and_grad
from .network import ArchDescriptor, QNetwork, ShapeError, build_network, greedy_action, q_forward, select_action
from .replay import Batch, ReplayBuffer, ReplayError, Transition, priority
from .stub_env import ConstantRewardEnv
from .trainer import TrainError, Trainer, TrainState, disseminate, episode_seed, train_phase

__all__ = [
    "ArchDescriptor",
    "Batch",
    "CheckpointError",
    "ConstantRewardEnv",
    "Learner",
    "QNetwork",
    "ReplayBuffer",
    "ReplayError",
    "ShapeError",
    "TargetSync",
    "TrainError",
    "TrainSchedule",
    "TrainState",
    "Trainer",
    "Transition",
    "build_network",
    "disseminate",
    "epsilon",
    "episode_seed",
    "greedy_action",
    "load_checkpoint",
    "load_policy",
    "priority",
    "q_forward",
    "save_checkpoint",
    "select_action",
    "td_loss",
    "td_loss_and_grad",
    "train_phase",
]
