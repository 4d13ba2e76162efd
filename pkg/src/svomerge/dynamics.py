"""Kinematic bicycle model and the PID layer turning meta-actions into controls."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

from .geometry import FrenetPose, RoadNetwork


class MetaAction(enum.IntEnum):
    LANE_LEFT = 0
    IDLE = 1
    LANE_RIGHT = 2
    ACCELERATE = 3
    DECELERATE = 4


N_ACTIONS = len(MetaAction)


class Kind(str, enum.Enum):
    AV = "AV"
    HV = "HV"


class ControlInput(NamedTuple):
    acceleration: float
    steering: float


@dataclass
class VehicleState:
    id: int
    kind: Kind
    x: float
    y: float
    yaw: float
    speed: float
    frenet: FrenetPose
    accel: float = 0.0
    steering: float = 0.0
    length: float = 5.0
    width: float = 2.0
    is_mission: bool = False
    target_speed: float = 25.0
    target_lane: int = 0
    desired_speed: float = 25.0  # IDM v0 for HVs
    speed_integral: float = 0.0
    prev_speed_error: float = 0.0
    crashed: bool = False
    exited: bool = False
    stopped: bool = False  # held at the ramp terminus

    @property
    def live(self):
        return not (self.crashed or self.exited)

    @property
    def lane(self):
        return self.frenet.lane_index

    @property
    def l(self):
        return self.frenet.l

    @property
    def d(self):
        return self.frenet.d

    def replace(self, **changes) -> "VehicleState":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Limits:
    a_min: float = -5.0
    a_max: float = 3.0
    steer_max: float = 0.3
    v_phys_max: float = 40.0
    v_max: float = 30.0
    wheelbase: float = 2.5

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.a_min, cfg.a_max, cfg.steer_max, cfg.v_phys_max, cfg.v_max, cfg.wheelbase)


def _clip(x, lo, hi):
    return lo if x < lo else hi if x > hi else x


def bicycle_step(state: VehicleState, u: ControlInput, dt: float, limits: Limits = Limits()) -> VehicleState:
    """Advance a rear-axle kinematic bicycle by ``dt`` seconds.

    Heading and position are integrated exactly for the (clamped) steering angle
    held over the step, using the step-average speed. Frenet fields are not
    refreshed here; the caller re-projects onto the road.
    """
    if dt <= 0.0:
        return state
    a = _clip(u.acceleration, limits.a_min, limits.a_max)
    steer = _clip(u.steering, -limits.steer_max, limits.steer_max)
    v0 = state.speed
    v1 = _clip(v0 + a * dt, 0.0, limits.v_phys_max)
    v_avg = 0.5 * (v0 + v1)
    omega = v_avg * math.tan(steer) / limits.wheelbase
    yaw0 = state.yaw
    if abs(omega) > 1e-12:
        yaw1 = yaw0 + omega * dt
        r = v_avg / omega
        x = state.x + r * (math.sin(yaw1) - math.sin(yaw0))
        y = state.y - r * (math.cos(yaw1) - math.cos(yaw0))
    else:
        yaw1 = yaw0
        x = state.x + v_avg * dt * math.cos(yaw0)
        y = state.y + v_avg * dt * math.sin(yaw0)
    a_eff = (v1 - v0) / dt
    return state.replace(x=x, y=y, yaw=yaw1, speed=v1, accel=a_eff, steering=steer)


def apply_meta_action(action, state: VehicleState, road: RoadNetwork, dv: float = 2.0, v_max: float = 30.0) -> VehicleState:
    action = MetaAction(action)
    if action is MetaAction.IDLE:
        return state
    if action is MetaAction.ACCELERATE:
        return state.replace(target_speed=_clip(state.target_speed + dv, 0.0, v_max))
    if action is MetaAction.DECELERATE:
        return state.replace(target_speed=_clip(state.target_speed - dv, 0.0, v_max))
    step = -1 if action is MetaAction.LANE_LEFT else 1
    current = state.target_lane
    target = current + step
    if road.can_change(current, target, state.l):
        return state.replace(target_lane=target)
    return state


@dataclass(frozen=True)
class PidGains:
    kp_speed: float = 1.5
    ki_speed: float = 0.0
    kd_speed: float = 0.0
    kp_lateral: float = 0.8
    kp_heading: float = 3.0
    max_heading_offset: float = 0.5

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.kp_speed, cfg.ki_speed, cfg.kd_speed, cfg.kp_lateral, cfg.kp_heading, cfg.max_heading_offset)


def steering_command(state: VehicleState, road: RoadNetwork, gains: PidGains, limits: Limits) -> float:
    """Cascade: lateral offset -> heading reference -> yaw-rate -> steering angle."""
    l = state.l
    lane = state.target_lane
    if not road.lane_exists(lane, l):
        lane = state.lane
    d_err = road.lane_center(lane, l) - state.d
    lane_heading = road.heading_at(min(l, road.length)) + math.atan(road.lane_slope(lane, l))
    v = max(state.speed, 1.0)
    # heading offset that closes the lateral gap at rate kp_lateral * d_err
    offset = math.asin(_clip(gains.kp_lateral * d_err / v, -1.0, 1.0))
    offset = _clip(offset, -gains.max_heading_offset, gains.max_heading_offset)
    heading_err = math.remainder(lane_heading + offset - state.yaw, 2.0 * math.pi)
    yaw_rate = gains.kp_heading * heading_err
    steer = math.atan(yaw_rate * limits.wheelbase / v)
    return _clip(steer, -limits.steer_max, limits.steer_max)


def pid_track(state: VehicleState, road: RoadNetwork, dt: float, gains: PidGains = PidGains(), limits: Limits = Limits()) -> ControlInput:
    """Controls steering ``state`` toward its ``target_speed`` and ``target_lane``."""
    err = state.target_speed - state.speed
    acc = gains.kp_speed * err
    if gains.ki_speed:
        acc += gains.ki_speed * (state.speed_integral + err * dt)
    if gains.kd_speed and dt > 0:
        acc += gains.kd_speed * (err - state.prev_speed_error) / dt
    acc = _clip(acc, limits.a_min, limits.a_max)
    return ControlInput(acc, steering_command(state, road, gains, limits))


def pid_memory(state: VehicleState, dt: float) -> VehicleState:
    """Advance the speed loop's integral / previous-error memory by one step."""
    err = state.target_speed - state.speed
    return state.replace(speed_integral=state.speed_integral + err * dt, prev_speed_error=err)
