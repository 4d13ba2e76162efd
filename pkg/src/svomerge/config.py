"""Experiment configuration: nested dataclasses with defaults, strict loading, hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Raised for schema violations; ``problems`` lists offending keys."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


PRESETS = {
    "E": (1.0, 0.0, 0.0),
    "C": (1.0, 1.0, 0.0),
    "S": (1.0, 0.0, 1.0),
    "SC": (1.0, 1.0, 1.0),
}


@dataclass
class SpawnSlot:
    """Mean placement of one vehicle; ``offset`` is relative to the mission vehicle's l."""

    lane: int
    offset: float
    speed: float


@dataclass
class ScenarioConfig:
    lane_count: int = 2
    ramp_start: float = 250.0
    ramp_end: float = 400.0
    road_length: float = 500.0
    lane_width: float = 4.0
    # extra lateral separation of the ramp before it joins, tapered to 0 at ramp_start
    ramp_approach_offset: float = 4.0
    ramp_taper_length: float = 100.0
    n_avs: int = 4
    n_hvs: int = 4
    mission_kind: str = "hv"
    mission_l: float = 170.0
    mission_speed: float = 20.0
    av_slots: list = field(
        default_factory=lambda: [
            SpawnSlot(1, 20.0, 22.0),
            SpawnSlot(1, -2.0, 22.0),
            SpawnSlot(0, 10.0, 24.0),
            SpawnSlot(1, -45.0, 22.0),
        ]
    )
    hv_slots: list = field(
        default_factory=lambda: [
            SpawnSlot(1, 42.0, 22.0),
            SpawnSlot(1, -24.0, 22.0),
            SpawnSlot(0, 35.0, 24.0),
            SpawnSlot(0, -20.0, 24.0),
        ]
    )
    position_std: float = 3.0
    speed_std: float = 1.0
    clip_sigmas: float = 2.0
    randomness_scale: float = 1.0
    min_spawn_gap: float = 2.0
    spawn_attempts: int = 200
    t_max: float = 60.0
    post_mission_horizon: float = 5.0
    policy_hz: float = 1.0
    physics_hz: float = 15.0
    sensing_radius: float = 80.0
    v2v_range: float | None = None
    merge_tolerance: float = 0.5
    fail_margin: float = 1.0
    vehicle_length: float = 5.0
    vehicle_width: float = 2.0


@dataclass
class DynamicsConfig:
    wheelbase: float = 2.5
    a_min: float = -5.0
    a_max: float = 3.0
    steer_max: float = 0.3
    v_phys_max: float = 40.0
    v_max: float = 30.0
    dv: float = 2.0
    kp_speed: float = 1.5
    ki_speed: float = 0.0
    kd_speed: float = 0.0
    kp_lateral: float = 0.8
    kp_heading: float = 3.0
    max_heading_offset: float = 0.5


@dataclass
class DriversConfig:
    desired_speed_mean: float = 25.0
    desired_speed_std: float = 2.0
    desired_speed_min: float = 20.0
    desired_speed_max: float = 30.0
    time_headway: float = 1.5
    a_max: float = 1.5
    b_comf: float = 2.0
    jam_distance: float = 2.0
    exponent: float = 4.0
    b_emergency: float = 9.0
    politeness: float = 0.3
    lane_change_threshold: float = 0.2
    b_safe: float = 4.0


@dataclass
class ObservationConfig:
    kind: str = "velocity_map"
    width: int = 128
    height: int = 32
    m_per_px_l: float = 1.0
    m_per_px_d: float = 0.5
    rear_fraction: float = 0.3
    frames: int = 10
    alpha: float = 2.0
    beta: float = 1.0 / math.log(40.0)
    v0: float = 0.5


@dataclass
class RewardConfig:
    preset: str | None = "SC"
    lambda_e: float = 1.0
    lambda_c: float = 1.0
    lambda_s: float = 1.0
    eta: float = 1.0
    psi: float = 1.0
    d_floor: float = 2.0
    w_speed: float = 1.0
    w_jerk: float = 0.1
    w_crash: float = 5.0
    aggregate: str = "mean"


@dataclass
class ArchitectureConfig:
    frames: int = 10
    channels: int = 4
    width: int = 128
    height: int = 32
    conv_channels: list = field(default_factory=lambda: [16, 32])
    kernel_t: int = 3
    kernel_s: int = 3
    stride_s: list = field(default_factory=lambda: [1, 1])
    pool_t: list = field(default_factory=lambda: [1, 1])
    pool_s: int = 2
    dense: list = field(default_factory=lambda: [256])
    n_actions: int = 5


@dataclass
class TrainingConfig:
    iterations: int = 720_000
    batch_size: int = 32
    learning_rate: float = 0.0005
    adam_betas: list = field(default_factory=lambda: [0.9, 0.999])
    target_update: int = 200
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_fraction: float = 0.7
    buffer_capacity: int = 10_000
    learning_starts: int = 200
    train_every: int = 1
    phase_episodes: int = 50
    ally_epsilon: float = 0.0
    priority_c1: float = 0.5
    priority_c2: float = 0.5
    priority_length: float = 50.0
    prioritized: bool = True
    importance_sampling: bool = False
    checkpoint_every: int = 5_000
    metrics_window: int = 50
    torch_threads: int = 1
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)


@dataclass
class EvaluationConfig:
    episodes: int = 3000
    randomness: float = 4.0
    seed: int = 10_000
    workers: int = 1
    export_trajectories: bool = True


@dataclass
class Config:
    seed: int = 0
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    drivers: DriversConfig = field(default_factory=DriversConfig)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def svo(self):
        from .reward import SvoWeights

        return SvoWeights.from_config(self.reward)


# --------------------------------------------------------------------------
# building from plain mappings
# --------------------------------------------------------------------------

_NESTED = {
    (ScenarioConfig, "av_slots"): SpawnSlot,
    (ScenarioConfig, "hv_slots"): SpawnSlot,
}


def _build(cls, data: Any, path: str, problems: list):
    if dataclasses.is_dataclass(data):
        data = dataclasses.asdict(data)
    if not isinstance(data, dict):
        problems.append(f"{path or '<root>'}: expected a mapping")
        return cls()
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            problems.append(f"{path}{key}: unknown key")
    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            continue
        value = data[name]
        sub = f.default_factory() if f.default_factory is not dataclasses.MISSING else None
        item_cls = _NESTED.get((cls, name))
        if dataclasses.is_dataclass(sub):
            kwargs[name] = _build(type(sub), value, f"{path}{name}.", problems)
        elif item_cls is not None:
            if not isinstance(value, list):
                problems.append(f"{path}{name}: expected a list")
                continue
            items = []
            for i, v in enumerate(value):
                if isinstance(v, (list, tuple)):
                    v = dict(zip(("lane", "offset", "speed"), v))
                items.append(_build(item_cls, v, f"{path}{name}[{i}].", problems))
            kwargs[name] = items
        else:
            kwargs[name] = value
    return cls(**kwargs)


def validate(cfg: Config) -> list:
    p = []
    s = cfg.scenario
    if s.lane_count < 1:
        p.append("scenario.lane_count: must be >= 1")
    if s.ramp_end - s.ramp_start <= 0:
        p.append("scenario.ramp_end: ramp length must be positive")
    if s.road_length <= s.ramp_end:
        p.append("scenario.road_length: must exceed ramp_end")
    if s.ramp_start <= 0:
        p.append("scenario.ramp_start: must be positive")
    if s.lane_width <= 0:
        p.append("scenario.lane_width: must be positive")
    if s.mission_kind not in ("hv", "av"):
        p.append("scenario.mission_kind: must be 'hv' or 'av'")
    if s.n_avs < 0 or s.n_hvs < 0:
        p.append("scenario.n_avs/n_hvs: must be non-negative")
    if s.n_avs > len(s.av_slots):
        p.append("scenario.av_slots: fewer slots than n_avs")
    if s.n_hvs > len(s.hv_slots):
        p.append("scenario.hv_slots: fewer slots than n_hvs")
    for name in ("av_slots", "hv_slots"):
        for i, slot in enumerate(getattr(s, name)):
            if not 0 <= slot.lane < s.lane_count:
                p.append(f"scenario.{name}[{i}].lane: not a highway lane")
    if s.randomness_scale <= 0:
        p.append("scenario.randomness_scale: must be positive")
    if s.physics_hz <= 0 or s.policy_hz <= 0:
        p.append("scenario.physics_hz/policy_hz: must be positive")
    if s.vehicle_length <= 0 or s.vehicle_width <= 0:
        p.append("scenario.vehicle_length/width: must be positive")
    d = cfg.dynamics
    if d.a_min >= 0 or d.a_max <= 0:
        p.append("dynamics.a_min/a_max: need a_min < 0 < a_max")
    if d.steer_max <= 0 or d.wheelbase <= 0 or d.v_max <= 0:
        p.append("dynamics: steer_max, wheelbase and v_max must be positive")
    dr = cfg.drivers
    for name in ("time_headway", "a_max", "b_comf", "jam_distance", "exponent", "b_safe", "b_emergency"):
        if getattr(dr, name) <= 0:
            p.append(f"drivers.{name}: must be positive")
    if not 0 <= dr.politeness <= 1:
        p.append("drivers.politeness: must be in [0, 1]")
    o = cfg.observation
    if o.kind not in ("velocity_map", "occupancy"):
        p.append("observation.kind: must be velocity_map or occupancy")
    if o.width < 1 or o.height < 1 or o.frames < 1:
        p.append("observation.width/height/frames: must be >= 1")
    if min(o.alpha, o.beta, o.v0) <= 0:
        p.append("observation.alpha/beta/v0: must be positive")
    r = cfg.reward
    if r.preset is not None and r.preset not in PRESETS:
        p.append(f"reward.preset: unknown preset {r.preset!r}; valid: {', '.join(PRESETS)}")
    for name in ("lambda_e", "lambda_c", "lambda_s"):
        if getattr(r, name) < 0:
            p.append(f"reward.{name}: must be >= 0")
    if r.preset is None and r.lambda_e == r.lambda_c == r.lambda_s == 0:
        p.append("reward.lambda_*: not all zero")
    if r.eta <= 0 or r.d_floor <= 0:
        p.append("reward.eta/d_floor: must be positive")
    if r.aggregate not in ("mean", "sum"):
        p.append("reward.aggregate: must be mean or sum")
    t = cfg.training
    if t.iterations < 0 or t.batch_size < 1 or t.buffer_capacity < 1:
        p.append("training.iterations/batch_size/buffer_capacity: out of range")
    if not 0 <= t.gamma < 1:
        p.append("training.gamma: must be in [0, 1)")
    if t.target_update < 1 or t.learning_rate <= 0:
        p.append("training.target_update/learning_rate: must be positive")
    if not (0 <= t.eps_end <= 1 and 0 <= t.eps_start <= 1):
        p.append("training.eps_start/eps_end: must be in [0, 1]")
    a = t.architecture
    if a.channels != 4 and o.kind == "velocity_map":
        p.append("training.architecture.channels: velocity maps have 4 channels")
    if (a.width, a.height, a.frames) != (o.width, o.height, o.frames):
        p.append("training.architecture: width/height/frames must match observation")
    if len(a.pool_t) != len(a.conv_channels):
        p.append("training.architecture.pool_t: one entry per conv stage")
    if len(a.stride_s) != len(a.conv_channels):
        p.append("training.architecture.stride_s: one entry per conv stage")
    if a.n_actions != 5:
        p.append("training.architecture.n_actions: must be 5")
    e = cfg.evaluation
    if e.episodes < 1:
        p.append("evaluation.episodes: must be >= 1")
    return p


def from_dict(data: dict | None) -> Config:
    problems: list = []
    cfg = _build(Config, data or {}, "", problems)
    if not problems:
        problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def _set_path(data: dict, dotted: str, value):
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: cannot override inside a non-mapping")
    node[keys[-1]] = value


def parse_override(text: str):
    """``"training.iterations=10"`` -> ``("training.iterations", 10)`` (YAML-typed value)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r}: expected key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load(path=None, overrides=()) -> Config:
    data: dict = {}
    if path is not None:
        text = Path(path).read_text()
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides:
        key, value = item if isinstance(item, tuple) else parse_override(item)
        _set_path(data, key, value)
    return from_dict(data)


def with_updates(cfg: Config, **sections) -> Config:
    """Copy of ``cfg`` with ``section={key: value}`` updates applied and re-validated."""
    data = cfg.to_dict()
    for section, values in sections.items():
        if isinstance(values, dict):
            data[section].update(values)
        else:
            data[section] = values
    return from_dict(data)


def dump(cfg: Config, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
