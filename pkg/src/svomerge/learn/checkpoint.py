"""Versioned checkpoint container (torch.save of a plain dict)."""

from __future__ import annotations

import os
from pathlib import Path

import torch

from .network import ArchDescriptor, QNetwork, build_network

FORMAT = "svomerge-checkpoint"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, payload: dict):
    """Atomic write; ``payload`` must hold at least ``arch`` and ``weights``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {"format": FORMAT, "version": VERSION, **payload}
    tmp = path.with_name(path.name + ".tmp")
    torch.save(blob, tmp)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a zoo of types for corrupt files
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc.__class__.__name__})") from None
    if not isinstance(blob, dict) or blob.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if blob.get("version") != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {blob.get('version')} != {VERSION}")
    for key in ("arch", "weights"):
        if key not in blob:
            raise CheckpointError(f"{path}: missing {key!r}")
    return blob


def network_from_checkpoint(blob: dict, expect: ArchDescriptor | None = None) -> QNetwork:
    desc = ArchDescriptor.from_config(blob["arch"])
    if expect is not None and desc != expect:
        raise CheckpointError(f"checkpoint architecture {desc} does not match expected {expect}")
    net = build_network(desc)
    try:
        net.load_state_dict(blob["weights"])
    except RuntimeError as exc:
        raise CheckpointError(f"weights do not fit the stored architecture: {exc}") from None
    net.eval()
    return net


def load_policy(path, expect: ArchDescriptor | None = None) -> QNetwork:
    return network_from_checkpoint(load_checkpoint(path), expect)
