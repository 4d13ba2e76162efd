"""Priority-weighted experience replay.

Frames are stored once in a half-precision ring; transitions refer to them by
id, so a 10-frame stack costs ten integers instead of ten images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ReplayError(RuntimeError):
    pass


def squash(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def priority(r_last: float, x_gap: float, c1=0.5, c2=0.5, length=50.0) -> float:
    """``c1 * sigmoid(r_last) + c2 * exp(-x_gap / length)``: favors rewarding steps near the merge point."""
    return c1 * squash(r_last) + c2 * math.exp(-max(x_gap, 0.0) / length)


@dataclass
class Transition:
    """One replay record; ``s`` and ``s_next`` are frame-id tuples (oldest first)."""

    s: tuple
    a: int
    r: float
    s_next: tuple
    terminal: bool
    r_last: float
    x_gap: float


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray
    indices: np.ndarray


class FrameStore:
    """Ring of frames; ids grow monotonically and go stale once overwritten."""

    def __init__(self, capacity: int, frame_shape, dtype=np.float16):
        self.capacity = int(capacity)
        self.data = np.zeros((self.capacity, *frame_shape), dtype=dtype)
        self.next_id = 0

    def add(self, frame) -> int:
        fid = self.next_id
        self.data[fid % self.capacity] = frame
        self.next_id += 1
        return fid

    def get(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        if ids.size and ids.min() < self.next_id - self.capacity:
            raise ReplayError("frame was overwritten before its transition was evicted")
        return self.data[ids % self.capacity]


class ReplayBuffer:
    def __init__(
        self,
        capacity: int,
        frame_shape,
        n_frames: int = 10,
        c1: float = 0.5,
        c2: float = 0.5,
        length: float = 50.0,
        prioritized: bool = True,
        frames_per_transition: int = 2,
    ):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.n_frames = int(n_frames)
        self.c1, self.c2, self.length = c1, c2, length
        self.prioritized = prioritized
        # shared-history pushes add at most two frames per transition (episode start + next state)
        self.frames_per_transition = int(frames_per_transition)
        self.frames = FrameStore(self.frames_per_transition * self.capacity + 2 * self.n_frames + 16, frame_shape)
        self.items: list = [None] * self.capacity
        self.priorities = np.zeros(self.capacity)
        self.head = 0
        self.size = 0
        self.pushed = 0

    def __len__(self):
        return self.size

    def add_frame(self, frame) -> int:
        return self.frames.add(frame)

    def push(self, t: Transition) -> float:
        """Store ``t`` (evicting the oldest when full) and return its priority."""
        p = priority(t.r_last, t.x_gap, self.c1, self.c2, self.length)
        self.items[self.head] = t
        self.priorities[self.head] = p
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.pushed += 1
        return p

    def push_arrays(self, s, a, r, s_next, terminal, r_last=None, x_gap=0.0) -> float:
        """Convenience push for whole stacks; frames are stored without sharing."""
        if 2 * self.n_frames > self.frames_per_transition:
            raise ReplayError(f"push_arrays stores {2 * self.n_frames} frames per transition; build the buffer with frames_per_transition >= that")
        ids = tuple(self.add_frame(f) for f in s)
        ids_next = tuple(self.add_frame(f) for f in s_next)
        return self.push(Transition(ids, int(a), float(r), ids_next, bool(terminal), float(r if r_last is None else r_last), float(x_gap)))

    def ordered(self):
        """Stored transitions oldest first."""
        start = self.head if self.size == self.capacity else 0
        return [self.items[(start + i) % self.capacity] for i in range(self.size)]

    def probabilities(self) -> np.ndarray:
        p = self.priorities[: self.size] if self.prioritized else np.ones(self.size)
        return p / p.sum()

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ReplayError("cannot sample from an empty buffer")
        cdf = np.cumsum(self.probabilities())
        u = rng.random(batch_size) * cdf[-1]
        return np.minimum(np.searchsorted(cdf, u, side="right"), self.size - 1)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size:
            raise ReplayError(f"cannot sample {batch_size} from a buffer holding {self.size}")
        idx = self.sample_indices(batch_size, rng)
        items = [self.items[i] for i in idx]
        s = self.frames.get([t.s for t in items]).astype(np.float32)
        s_next = self.frames.get([t.s_next for t in items]).astype(np.float32)
        return Batch(
            s=s,
            a=np.array([t.a for t in items], dtype=np.int64),
            r=np.array([t.r for t in items], dtype=np.float32),
            s_next=s_next,
            terminal=np.array([t.terminal for t in items], dtype=np.float32),
            indices=idx,
        )
