"""Decentralized social reward with tunable social value orientation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .config import PRESETS


@dataclass(frozen=True)
class SvoWeights:
    lambda_e: float = 1.0
    lambda_c: float = 0.0
    lambda_s: float = 0.0
    eta: float = 1.0
    psi: float = 1.0

    def __post_init__(self):
        if min(self.lambda_e, self.lambda_c, self.lambda_s) < 0:
            raise ValueError("SVO weights must be non-negative")
        if self.lambda_e == self.lambda_c == self.lambda_s == 0:
            raise ValueError("at least one SVO weight must be positive")
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    @classmethod
    def preset(cls, name, eta=1.0, psi=1.0):
        try:
            e, c, s = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown preset {name!r}; valid: {', '.join(PRESETS)}") from None
        return cls(e, c, s, eta, psi)

    @classmethod
    def from_config(cls, cfg):
        if cfg.preset is not None:
            return cls.preset(cfg.preset, cfg.eta, cfg.psi)
        return cls(cfg.lambda_e, cfg.lambda_c, cfg.lambda_s, cfg.eta, cfg.psi)

    @property
    def triple(self):
        return (self.lambda_e, self.lambda_c, self.lambda_s)


@dataclass(frozen=True)
class RewardParams:
    w_speed: float = 1.0
    w_jerk: float = 0.1
    w_crash: float = 5.0
    v_max: float = 30.0
    dacc_max: float = 8.0
    d_floor: float = 2.0
    aggregate: str = "mean"

    @classmethod
    def from_config(cls, reward_cfg, dynamics_cfg):
        return cls(
            w_speed=reward_cfg.w_speed,
            w_jerk=reward_cfg.w_jerk,
            w_crash=reward_cfg.w_crash,
            v_max=dynamics_cfg.v_max,
            dacc_max=dynamics_cfg.a_max - dynamics_cfg.a_min,
            d_floor=reward_cfg.d_floor,
            aggregate=reward_cfg.aggregate,
        )

    @property
    def egoistic_bound(self):
        return max(self.w_speed, self.w_crash + self.w_jerk)


class RewardBreakdown(NamedTuple):
    r_ego: float
    r_coop_sum: float
    r_symp_sum: float
    total: float


def utility(vehicle, params: RewardParams) -> float:
    return min(max(vehicle.speed / params.v_max, 0.0), 1.0)


def egoistic_reward(agent_id, world_before, world_after, params: RewardParams = RewardParams()) -> float:
    """Speed term minus an acceleration-change cost and a crash penalty."""
    before = world_before.vehicle(agent_id)
    after = world_after.vehicle(agent_id)
    r = params.w_speed * utility(after, params)
    r -= params.w_jerk * min(abs(after.accel - before.accel) / params.dacc_max, 1.0)
    if after.crashed and not before.crashed:
        r -= params.w_crash
    return r


def _reduce(values, params: RewardParams):
    if not values:
        return 0.0
    total = math.fsum(values)
    return total / len(values) if params.aggregate == "mean" else total


def cooperative_reward(agent_id, perception, world_before, world_after, params: RewardParams = RewardParams()) -> float:
    """Egoistic rewards of visible allies (self excluded), averaged."""
    allies = [j for j in perception.visible_avs if j != agent_id]
    return _reduce([egoistic_reward(j, world_before, world_after, params) for j in allies], params)


def mission_reward(vehicle, transition) -> int:
    """1 on the step the mission vehicle's status goes Pending -> Merged, else 0."""
    from .env import MissionStatus

    if not vehicle.is_mission:
        return 0
    old, new = transition
    return int(old == MissionStatus.PENDING and new == MissionStatus.MERGED)


def sympathy_targets(perception, world):
    """Visible HVs plus the mission vehicle, unless the mission vehicle is autonomous."""
    ids = list(perception.visible_hvs)
    m = world.vehicle(world.mission_id)
    if m.kind.value == "HV" and m.id not in ids and not m.exited:
        ids.append(m.id)
    return sorted(ids)


def sympathetic_term(u, distance, mission_r, weights: SvoWeights, params: RewardParams) -> float:
    d = max(distance, params.d_floor)
    return mission_r + u / (weights.eta * d**weights.psi)


def sympathetic_reward(agent_id, perception, world_before, world_after, weights: SvoWeights, params: RewardParams = RewardParams()) -> float:
    me = world_after.vehicle(agent_id)
    transition = (world_before.mission_status, world_after.mission_status)
    terms = []
    for k in sympathy_targets(perception, world_after):
        hv = world_after.vehicle(k)
        dist = math.hypot(hv.x - me.x, hv.y - me.y)
        terms.append(sympathetic_term(utility(hv, params), dist, mission_reward(hv, transition), weights, params))
    return _reduce(terms, params)


def total_reward(r_ego, r_coop_sum, r_symp_sum, weights: SvoWeights) -> RewardBreakdown:
    total = weights.lambda_e * r_ego + weights.lambda_c * r_coop_sum + weights.lambda_s * r_symp_sum
    return RewardBreakdown(r_ego, r_coop_sum, r_symp_sum, total)


def agent_reward(agent_id, perception, world_before, world_after, weights: SvoWeights, params: RewardParams) -> RewardBreakdown:
    r_e = egoistic_reward(agent_id, world_before, world_after, params)
    r_c = cooperative_reward(agent_id, perception, world_before, world_after, params)
    r_s = sympathetic_reward(agent_id, perception, world_before, world_after, weights, params)
    return total_reward(r_e, r_c, r_s, weights)
