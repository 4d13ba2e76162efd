"""Q-function over frame stacks: spatio-temporal convolutions, then dense layers."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ArchDescriptor:
    """Everything needed to rebuild a QNetwork; stored inside checkpoints."""

    frames: int = 10
    channels: int = 4
    width: int = 128
    height: int = 32
    conv_channels: tuple = (16, 32)
    kernel_t: int = 3
    kernel_s: int = 3
    stride_s: tuple = (1, 1)
    pool_t: tuple = (1, 1)
    pool_s: int = 2
    dense: tuple = (256,)
    n_actions: int = 5

    @classmethod
    def from_config(cls, arch) -> "ArchDescriptor":
        d = dataclasses.asdict(arch) if dataclasses.is_dataclass(arch) else dict(arch)
        for key in ("conv_channels", "stride_s", "pool_t", "dense"):
            d[key] = tuple(int(x) for x in d[key])
        return cls(**d)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @property
    def input_shape(self):
        """Per-sample layout ``(frames, channels, width, height)``, as produced by ``stack_frames``."""
        return (self.frames, self.channels, self.width, self.height)


class QNetwork(nn.Module):
    def __init__(self, desc: ArchDescriptor):
        super().__init__()
        self.desc = desc
        layers = []
        c_in = desc.channels
        t, w, h = desc.frames, desc.width, desc.height
        pad = desc.kernel_s // 2
        for c_out, stride, pt in zip(desc.conv_channels, desc.stride_s, desc.pool_t):
            layers += [
                nn.Conv3d(c_in, c_out, (desc.kernel_t, desc.kernel_s, desc.kernel_s), stride=(1, stride, stride), padding=(0, pad, pad)),
                nn.ReLU(),
            ]
            t = t - desc.kernel_t + 1
            w = (w + 2 * pad - desc.kernel_s) // stride + 1
            h = (h + 2 * pad - desc.kernel_s) // stride + 1
            if pt > 1 or desc.pool_s > 1:
                layers.append(nn.MaxPool3d((pt, desc.pool_s, desc.pool_s)))
                t, w, h = t // pt, w // desc.pool_s, h // desc.pool_s
            if min(t, w, h) < 1:
                raise ShapeError(f"architecture collapses the input to ({t}, {w}, {h})")
            c_in = c_out
        self.features = nn.Sequential(*layers)
        flat = c_in * t * w * h
        head = []
        for units in desc.dense:
            head += [nn.Linear(flat, units), nn.ReLU()]
            flat = units
        head.append(nn.Linear(flat, desc.n_actions))
        self.head = nn.Sequential(*head)

    def forward(self, x):
        # (B, T, C, W, H) -> (B, C, T, W, H)
        x = x.permute(0, 2, 1, 3, 4)
        return self.head(self.features(x).flatten(1))


def build_network(desc, seed=None) -> QNetwork:
    if not isinstance(desc, ArchDescriptor):
        desc = ArchDescriptor.from_config(desc)
    if seed is not None:
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            return QNetwork(desc)
    return QNetwork(desc)


def _as_batch(net: QNetwork, x):
    x = torch.as_tensor(np.asarray(x) if not torch.is_tensor(x) else x)
    shape = net.desc.input_shape
    if tuple(x.shape) == shape:
        x = x.unsqueeze(0)
    if x.dim() != 5 or tuple(x.shape[1:]) != shape:
        raise ShapeError(f"expected input (B, {', '.join(map(str, shape))}), got {tuple(x.shape)}")
    dtype = next(net.parameters()).dtype
    return x.to(dtype)


def q_forward(net: QNetwork, x) -> torch.Tensor:
    """Action values without gradient; ``(5,)`` for one stack, ``(B, 5)`` for a batch."""
    single = tuple(np.shape(x)) == net.desc.input_shape
    with torch.no_grad():
        out = net(_as_batch(net, x))
    return out[0] if single else out


def greedy_action(q) -> int:
    """Argmax with ties going to the lowest index."""
    return int(np.argmax(np.asarray(q)))


def select_action(net: QNetwork, x, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(net.desc.n_actions))
    return greedy_action(q_forward(net, x).numpy())


def copy_weights(src: nn.Module, dst: nn.Module):
    dst.load_state_dict(src.state_dict())


def flat_params(net: nn.Module) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in net.parameters()])


def set_flat_params(net: nn.Module, flat):
    flat = torch.as_tensor(flat)
    i = 0
    with torch.no_grad():
        for p in net.parameters():
            n = p.numel()
            p.copy_(flat[i : i + n].view_as(p))
            i += n


def flat_grad(net: nn.Module) -> torch.Tensor:
    return torch.cat([
        (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1) for p in net.parameters()
    ])
