"""Single-agent environment with a constant reward, for checking the Q fixed point."""

from __future__ import annotations

import numpy as np


class ConstantRewardEnv:
    """Reward ``reward`` every step; episodes are cut after ``horizon`` steps but never terminal."""

    def __init__(self, frame_shape, reward=1.0, horizon=50, value=0.5):
        self.frame = np.full(frame_shape, value, dtype=np.float32)
        self.reward = float(reward)
        self.horizon = int(horizon)
        self.t = 0

    @property
    def agents(self):
        return [0]

    def reset(self, seed):
        self.t = 0
        return {0: self.frame}

    def step(self, actions):
        self.t += 1
        done = self.t >= self.horizon
        info = {"x_gap": {0: 0.0}, "mission_status": None, "collisions": [], "finished": ()}
        return {0: self.frame}, {0: self.reward}, {0: False}, done, info
