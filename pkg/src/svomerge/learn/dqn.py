"""DQN update: TD loss against a periodically copied target network, linear epsilon schedule."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch

from .network import QNetwork, copy_weights, flat_grad
from .replay import Batch, ReplayBuffer


@dataclass(frozen=True)
class TrainSchedule:
    iterations: int = 720_000
    batch_size: int = 32
    learning_rate: float = 5e-4
    adam_betas: tuple = (0.9, 0.999)
    target_update: int = 200
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_steps: int = 504_000
    phase_episodes: int = 50
    learning_starts: int = 200
    train_every: int = 1
    ally_epsilon: float = 0.0

    @classmethod
    def from_config(cls, t) -> "TrainSchedule":
        return cls(
            iterations=t.iterations,
            batch_size=t.batch_size,
            learning_rate=t.learning_rate,
            adam_betas=tuple(t.adam_betas),
            target_update=t.target_update,
            gamma=t.gamma,
            eps_start=t.eps_start,
            eps_end=t.eps_end,
            eps_decay_steps=max(int(round(t.eps_decay_fraction * t.iterations)), 1),
            phase_episodes=t.phase_episodes,
            learning_starts=max(t.learning_starts, t.batch_size),
            train_every=t.train_every,
            ally_epsilon=t.ally_epsilon,
        )


def epsilon(step: int, schedule: TrainSchedule) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    frac = min(step / max(schedule.eps_decay_steps, 1), 1.0)
    return schedule.eps_start + frac * (schedule.eps_end - schedule.eps_start)


def _tensors(batch: Batch, dtype):
    return (
        torch.as_tensor(batch.s, dtype=dtype),
        torch.as_tensor(batch.a, dtype=torch.int64),
        torch.as_tensor(batch.r, dtype=dtype),
        torch.as_tensor(batch.s_next, dtype=dtype),
        torch.as_tensor(batch.terminal, dtype=dtype),
    )


def td_loss(net: QNetwork, target_net: QNetwork, batch: Batch, gamma: float) -> torch.Tensor:
    """Mean squared TD error; the bootstrap term is detached and zero for terminal transitions."""
    if len(batch.a) == 0:
        raise ValueError("empty batch")
    dtype = next(net.parameters()).dtype
    s, a, r, s_next, terminal = _tensors(batch, dtype)
    q = net(s).gather(1, a.unsqueeze(1)).squeeze(1)
    with torch.no_grad():
        best_next = target_net(s_next).max(dim=1).values
        y = r + gamma * (1.0 - terminal) * best_next
    return ((y - q) ** 2).mean()


def td_loss_and_grad(net, target_net, batch, gamma):
    """``(loss, flat gradient)`` with respect to the online network's parameters."""
    net.zero_grad(set_to_none=True)
    loss = td_loss(net, target_net, batch, gamma)
    loss.backward()
    return float(loss.detach()), flat_grad(net).detach().clone()


class TargetSync:
    """Hard copy online -> target every ``period`` gradient steps."""

    def __init__(self, period: int):
        self.period = int(period)
        self.steps = 0
        self.copies = 0

    def tick(self, net, target_net) -> bool:
        self.steps += 1
        if self.steps % self.period == 0:
            copy_weights(net, target_net)
            self.copies += 1
            return True
        return False


class Learner:
    """Online network, its target copy, the optimizer and the replay buffer."""

    def __init__(self, net: QNetwork, buffer: ReplayBuffer, schedule: TrainSchedule):
        self.net = net
        self.target = copy.deepcopy(net)
        for p in self.target.parameters():
            p.requires_grad_(False)
        self.buffer = buffer
        self.schedule = schedule
        self.optimizer = torch.optim.Adam(net.parameters(), lr=schedule.learning_rate, betas=schedule.adam_betas)
        self.sync = TargetSync(schedule.target_update)

    @property
    def grad_steps(self):
        return self.sync.steps

    def ready(self) -> bool:
        return len(self.buffer) >= self.schedule.learning_starts

    def update(self, rng: np.random.Generator) -> float:
        batch = self.buffer.sample(self.schedule.batch_size, rng)
        return self.update_on(batch)

    def update_on(self, batch: Batch) -> float:
        self.optimizer.zero_grad(set_to_none=True)
        loss = td_loss(self.net, self.target, batch, self.schedule.gamma)
        loss.backward()
        self.optimizer.step()
        self.sync.tick(self.net, self.target)
        value = float(loss.detach())
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite TD loss at gradient step {self.sync.steps}")
        return value
