"""Semi-sequential multi-agent training.

One agent at a time explores and learns while its allies act greedily with a
frozen copy of the shared weights. After ``phase_episodes`` episodes the
learner's weights are disseminated to every agent and the next agent takes
its turn.
"""

from __future__ import annotations

import copy
import csv
import logging
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .. import config as config_mod
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dqn import Learner, TrainSchedule, epsilon
from .network import ArchDescriptor, build_network, select_action
from .replay import ReplayBuffer, Transition

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "iteration",
    "episode",
    "phase",
    "agent",
    "epsilon",
    "loss",
    "mean_episode_reward",
    "merge_rate",
    "crash_rate",
)


class TrainError(RuntimeError):
    pass


@dataclass
class TrainState:
    iteration: int = 0
    episode: int = 0
    phase: int = 0
    phase_episode: int = 0


@dataclass
class EpisodeStats:
    ret: float = 0.0
    steps: int = 0
    merged: bool = False
    crashed: bool = False


class History:
    """Recent frames of one agent; short histories repeat their first frame."""

    def __init__(self, n):
        self.n = n
        self.frames = deque(maxlen=n)
        self.ids = deque(maxlen=n)

    def push(self, frame, fid=None):
        self.frames.append(frame)
        self.ids.append(fid)

    def _pad(self, items):
        items = list(items)
        return [items[0]] * (self.n - len(items)) + items

    def stack(self):
        return np.stack(self._pad(self.frames))

    def id_stack(self):
        return tuple(self._pad(self.ids))


def episode_seed(base_seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(episode)]).generate_state(1)[0])


def freeze(net):
    frozen = copy.deepcopy(net)
    for p in frozen.parameters():
        p.requires_grad_(False)
    frozen.eval()
    return frozen


def disseminate(w_plus, nets):
    """Load the same weights into every network (idempotent)."""
    state = w_plus.state_dict() if hasattr(w_plus, "state_dict") else w_plus
    for net in nets:
        net.load_state_dict(state)


def make_learner(net, training_cfg, frame_shape, n_frames) -> Learner:
    buf = ReplayBuffer(
        training_cfg.buffer_capacity,
        frame_shape,
        n_frames,
        training_cfg.priority_c1,
        training_cfg.priority_c2,
        training_cfg.priority_length,
        training_cfg.prioritized,
    )
    return Learner(net, buf, TrainSchedule.from_config(training_cfg))


def run_episode(env, seed, policies, active, learner, rng, state: TrainState, budget=None, on_iteration=None) -> EpisodeStats:
    """Roll out one episode; only ``active`` explores and feeds the replay buffer."""
    schedule = learner.schedule
    n = learner.net.desc.frames
    obs = env.reset(seed)
    if active not in obs:
        raise TrainError(f"active agent {active} not present in the episode")
    hist = {a: History(n) for a in obs}
    for a, frame in obs.items():
        hist[a].push(frame, learner.buffer.add_frame(frame) if a == active else None)
    stats = EpisodeStats()
    done = False
    while not done:
        if budget is not None and state.iteration >= budget:
            break
        eps = epsilon(state.iteration, schedule)
        actions = {}
        for a in env.agents:
            net = policies[a]
            e = eps if a == active else schedule.ally_epsilon
            actions[a] = select_action(net, hist[a].stack(), e, rng)
        obs, rewards, terminals, done, info = env.step(actions)
        s_ids = hist[active].id_stack()
        for a, frame in obs.items():
            hist[a].push(frame, learner.buffer.add_frame(frame) if a == active else None)
        r = float(rewards[active])
        terminal = bool(terminals[active])
        learner.buffer.push(
            Transition(s_ids, actions[active], r, hist[active].id_stack(), terminal, r, float(info["x_gap"][active]))
        )
        state.iteration += 1
        stats.ret += r
        stats.steps += 1
        loss = None
        if learner.ready() and state.iteration % schedule.train_every == 0:
            loss = learner.update(rng)
        if on_iteration is not None:
            on_iteration(state, eps, loss)
        status = info.get("mission_status")
        stats.merged = getattr(status, "value", status) == "Merged"
        stats.crashed = stats.crashed or bool(info.get("collisions"))
        if terminal or active in info.get("finished", ()):
            break
    return stats


def train_phase(env_factory, policies, active_agent, k_episodes, schedule=None, learner=None, rng=None, seeds=None, state=None, budget=None, on_iteration=None, on_episode=None):
    """Run ``k_episodes`` with ``active_agent`` learning; returns the updated weights ``w+``.

    ``policies`` maps agent id to network; every entry except the active one is
    used greedily and never modified.
    """
    net = policies[active_agent]
    if learner is None:
        desc = net.desc
        buf = ReplayBuffer(10_000, (desc.channels, desc.width, desc.height), desc.frames)
        learner = Learner(net, buf, schedule or TrainSchedule())
    elif learner.net is not net:
        raise TrainError("learner must own the active agent's network")
    rng = rng if rng is not None else np.random.default_rng(0)
    state = state if state is not None else TrainState()
    env = env_factory()
    for i in range(k_episodes):
        if budget is not None and state.iteration >= budget:
            break
        seed = seeds[i] if seeds is not None else episode_seed(0, state.episode)
        state.episode += 1
        stats = run_episode(env, seed, policies, active_agent, learner, rng, state, budget, on_iteration)
        if on_episode is not None:
            on_episode(state, stats)
    return {k: v.detach().clone() for k, v in net.state_dict().items()}


# --------------------------------------------------------------------------
# full training run with checkpoints and a metrics CSV
# --------------------------------------------------------------------------


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


class Trainer:
    CHECKPOINT = "checkpoint.pt"
    METRICS = "metrics.csv"

    def __init__(self, cfg, out_dir, env_factory=None, resume=False):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.env_factory = env_factory or self._default_env
        t = cfg.training
        torch.set_num_threads(max(int(t.torch_threads), 1))
        self.desc = ArchDescriptor.from_config(t.architecture)
        net = build_network(self.desc, seed=cfg.seed)
        o = cfg.observation
        frame_shape = (self.desc.channels, self.desc.width, self.desc.height)
        if o.kind == "occupancy":
            raise TrainError("the Conv3D network consumes velocity maps; set observation.kind=velocity_map")
        self.learner = make_learner(net, t, frame_shape, self.desc.frames)
        self.frozen = freeze(net)
        self.state = TrainState()
        self.rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 7919]))
        self.returns = deque(maxlen=t.metrics_window)
        self.merges = deque(maxlen=t.metrics_window)
        self.crashes = deque(maxlen=t.metrics_window)
        self.agent_ids = None
        self._last_ckpt = 0
        self.out.mkdir(parents=True, exist_ok=True)
        if resume:
            self._resume()
        else:
            self._fresh()

    def _default_env(self):
        from ..env import MergeEnv

        return MergeEnv(self.cfg)

    @property
    def checkpoint_path(self):
        return self.out / self.CHECKPOINT

    @property
    def metrics_path(self):
        return self.out / self.METRICS

    def _fresh(self):
        with open(self.metrics_path, "w", newline="") as fh:
            csv.writer(fh).writerow(METRIC_COLUMNS)
        config_mod.dump(self.cfg, self.out / "config.yaml")

    def _resume(self):
        blob = load_checkpoint(self.checkpoint_path)
        if blob.get("config_hash") != self.cfg.content_hash():
            raise TrainError(
                f"resume mismatch: checkpoint config hash {blob.get('config_hash')} != {self.cfg.content_hash()}"
            )
        if ArchDescriptor.from_config(blob["arch"]) != self.desc:
            raise CheckpointError("resume mismatch: architecture differs")
        self.learner.net.load_state_dict(blob["weights"])
        self.learner.target.load_state_dict(blob["target_weights"])
        self.frozen.load_state_dict(blob["frozen_weights"])
        self.learner.optimizer.load_state_dict(blob["optimizer"])
        self.learner.sync.steps = int(blob["grad_steps"])
        self.state = TrainState(**blob["state"])
        self.rng.bit_generator.state = blob["numpy_rng"]
        torch.set_rng_state(blob["torch_rng"])
        w = blob["windows"]
        self.returns.extend(w["returns"])
        self.merges.extend(w["merges"])
        self.crashes.extend(w["crashes"])
        self._last_ckpt = self.state.iteration
        # drop rows logged after the checkpoint so resumed rows are not duplicated
        rows = []
        if self.metrics_path.exists():
            with open(self.metrics_path, newline="") as fh:
                rows = list(csv.reader(fh))
        keep = [rows[0]] if rows else [list(METRIC_COLUMNS)]
        keep += [r for r in rows[1:] if r and int(r[0]) <= self.state.iteration]
        with open(self.metrics_path, "w", newline="") as fh:
            csv.writer(fh).writerows(keep)

    def save(self):
        save_checkpoint(
            self.checkpoint_path,
            {
                "arch": self.desc.to_dict(),
                "weights": self.learner.net.state_dict(),
                "target_weights": self.learner.target.state_dict(),
                "frozen_weights": self.frozen.state_dict(),
                "optimizer": self.learner.optimizer.state_dict(),
                "grad_steps": self.learner.grad_steps,
                "state": asdict(self.state),
                "numpy_rng": self.rng.bit_generator.state,
                "torch_rng": torch.get_rng_state(),
                "windows": {"returns": list(self.returns), "merges": list(self.merges), "crashes": list(self.crashes)},
                "config_hash": self.cfg.content_hash(),
                "config": self.cfg.to_dict(),
                "preset": self.cfg.reward.preset,
                "svo": list(self.cfg.svo().triple),
            },
        )
        self._last_ckpt = self.state.iteration

    def _mean(self, xs):
        return float(np.mean(xs)) if xs else None

    def run(self, iterations=None):
        budget = self.cfg.training.iterations if iterations is None else int(iterations)
        t = self.cfg.training
        env = self.env_factory()
        with open(self.metrics_path, "a", newline="") as fh:
            writer = csv.writer(fh)

            def on_iteration(state, eps, loss):
                writer.writerow(
                    [
                        state.iteration,
                        state.episode,
                        state.phase,
                        active,
                        _fmt(float(eps)),
                        _fmt(loss),
                        _fmt(self._mean(self.returns)),
                        _fmt(self._mean(self.merges)),
                        _fmt(self._mean(self.crashes)),
                    ]
                )

            while self.state.iteration < budget:
                seed = episode_seed(self.cfg.seed, self.state.episode)
                if self.agent_ids is None:
                    self.agent_ids = sorted(env.reset(seed))
                    if not self.agent_ids:
                        raise TrainError("scenario has no autonomous agents to train")
                active = self.agent_ids[self.state.phase % len(self.agent_ids)]
                policies = {a: self.frozen for a in self.agent_ids}
                policies[active] = self.learner.net
                self.state.episode += 1
                stats = run_episode(env, seed, policies, active, self.learner, self.rng, self.state, budget, on_iteration)
                self.returns.append(stats.ret)
                self.merges.append(float(stats.merged))
                self.crashes.append(float(stats.crashed))
                self.state.phase_episode += 1
                if self.state.phase_episode >= t.phase_episodes:
                    disseminate(self.learner.net, [self.frozen])
                    self.state.phase += 1
                    self.state.phase_episode = 0
                if self.state.iteration - self._last_ckpt >= t.checkpoint_every:
                    fh.flush()
                    self.save()
            fh.flush()
        self.save()
        return self.checkpoint_path
