"""Human driver models: IDM car following and MOBIL lane changes."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional


@dataclass(frozen=True)
class IdmParams:
    desired_speed: float = 25.0
    time_headway: float = 1.5
    a_max: float = 1.5
    b_comf: float = 2.0
    jam_distance: float = 2.0
    exponent: float = 4.0
    b_emergency: float = 9.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"IdmParams.{f.name} must be positive")

    @classmethod
    def from_config(cls, cfg, desired_speed=None):
        return cls(
            desired_speed=cfg.desired_speed_mean if desired_speed is None else desired_speed,
            time_headway=cfg.time_headway,
            a_max=cfg.a_max,
            b_comf=cfg.b_comf,
            jam_distance=cfg.jam_distance,
            exponent=cfg.exponent,
            b_emergency=cfg.b_emergency,
        )

    def with_speed(self, v0):
        return dataclasses.replace(self, desired_speed=max(float(v0), 0.1))

    def equilibrium_gap(self, v):
        """Bumper gap at which a follower matching its leader's speed has zero acceleration."""
        ratio = (v / self.desired_speed) ** self.exponent
        return (self.jam_distance + v * self.time_headway) / math.sqrt(1.0 - ratio)


@dataclass(frozen=True)
class MobilParams:
    politeness: float = 0.3
    threshold: float = 0.2
    b_safe: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.politeness <= 1.0:
            raise ValueError("politeness must be in [0, 1]")
        if self.threshold <= 0 or self.b_safe <= 0:
            raise ValueError("MOBIL thresholds must be positive")

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.politeness, cfg.lane_change_threshold, cfg.b_safe)


class Obstacle(NamedTuple):
    """Static or moving blocker usable as an IDM leader (e.g. the ramp terminus)."""

    l: float
    speed: float = 0.0
    length: float = 0.0


def bumper_gap(follower, leader):
    return leader.l - follower.l - 0.5 * (leader.length + follower.length)


def idm_scalar(v, v0, gap, dv, has_leader, p: IdmParams) -> float:
    """Single-vehicle IDM; same arithmetic as the array kernel."""
    if has_leader and gap <= 0.0:
        return -p.b_emergency
    vi = v if v > 0.0 else 0.0
    acc = p.a_max * (1.0 - (vi / v0) ** p.exponent)
    if has_leader:
        dyn = v * p.time_headway + v * dv / (2.0 * math.sqrt(p.a_max * p.b_comf))
        s_star = p.jam_distance + (dyn if dyn > 0.0 else 0.0)
        acc -= p.a_max * (s_star / gap) ** 2
    return min(max(acc, -p.b_emergency), p.a_max)


def idm_acceleration(ego, leader, params: IdmParams) -> float:
    """IDM acceleration of ``ego`` behind ``leader`` (None = free road), clamped to [-b_emergency, a_max]."""
    if leader is None:
        return idm_scalar(ego.speed, params.desired_speed, 1.0, 0.0, False, params)
    return idm_scalar(ego.speed, params.desired_speed, bumper_gap(ego, leader), ego.speed - leader.speed, True, params)


class LaneDecision(enum.IntEnum):
    KEEP = 0
    LEFT = -1
    RIGHT = 1


@dataclass
class LaneNeighbors:
    leader: Optional[object] = None
    follower: Optional[object] = None


@dataclass
class NeighborSet:
    """Leaders/followers around the ego; ``left``/``right`` are None when that move is unavailable."""

    current: LaneNeighbors
    left: Optional[LaneNeighbors] = None
    right: Optional[LaneNeighbors] = None


def default_params_for(base: IdmParams):
    def params_for(vehicle):
        return base.with_speed(getattr(vehicle, "desired_speed", base.desired_speed))

    return params_for


def _incentive(ego, cur: LaneNeighbors, tgt: LaneNeighbors, params_for, mobil: MobilParams):
    """MOBIL incentive for moving into ``tgt``, or None if the move is unsafe."""
    if tgt.leader is not None and bumper_gap(ego, tgt.leader) <= 0:
        return None
    if tgt.follower is not None and bumper_gap(tgt.follower, ego) <= 0:
        return None
    p_ego = params_for(ego)
    ego_old = idm_acceleration(ego, cur.leader, p_ego)
    ego_new = idm_acceleration(ego, tgt.leader, p_ego)
    gain_new_follower = 0.0
    if tgt.follower is not None:
        p_nf = params_for(tgt.follower)
        nf_new = idm_acceleration(tgt.follower, ego, p_nf)
        if nf_new < -mobil.b_safe:
            return None
        gain_new_follower = nf_new - idm_acceleration(tgt.follower, tgt.leader, p_nf)
    gain_old_follower = 0.0
    if cur.follower is not None:
        p_of = params_for(cur.follower)
        gain_old_follower = idm_acceleration(cur.follower, cur.leader, p_of) - idm_acceleration(cur.follower, ego, p_of)
    return (ego_new - ego_old) + mobil.politeness * (gain_new_follower + gain_old_follower)


def mobil_decide(ego, neighbors: NeighborSet, idm: IdmParams, mobil: MobilParams, params_for=None) -> LaneDecision:
    """Pick KEEP / LEFT / RIGHT by MOBIL's safety and incentive criteria.

    ``params_for(vehicle)`` supplies each vehicle's IDM parameters; by default the
    vehicle's ``desired_speed`` replaces ``idm.desired_speed``.
    """
    params_for = params_for or default_params_for(idm)
    best, best_gain = LaneDecision.KEEP, mobil.threshold
    for decision, tgt in ((LaneDecision.LEFT, neighbors.left), (LaneDecision.RIGHT, neighbors.right)):
        if tgt is None:
            continue
        gain = _incentive(ego, neighbors.current, tgt, params_for, mobil)
        if gain is not None and gain > best_gain:
            best, best_gain = decision, gain
    return best
