"""Highway-merge stochastic game: spawning, stepping, perception, collisions, mission status."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel, observe
from .config import Config
from .drivers import (
    IdmParams,
    LaneDecision,
    LaneNeighbors,
    MobilParams,
    NeighborSet,
    Obstacle,
    bumper_gap,
    idm_scalar,
    mobil_decide,
)
from .dynamics import (
    ControlInput,
    Kind,
    Limits,
    MetaAction,
    PidGains,
    VehicleState,
    apply_meta_action,
    bicycle_step,
    pid_memory,
    pid_track,
    steering_command,
)
from .geometry import FrenetPose, GeometryError, build_merge_scenario
from .reward import RewardParams, SvoWeights, agent_reward


class EnvError(RuntimeError):
    pass


class MissionStatus(str, enum.Enum):
    PENDING = "Pending"
    MERGED = "Merged"
    FAILED = "Failed"


@dataclass(frozen=True)
class PerceptionSet:
    observer: int
    visible_avs: tuple
    visible_hvs: tuple


@dataclass
class WorldState:
    t: float
    vehicles: list
    road: object
    mission_id: int
    seed: int
    config: Config
    mission_status: MissionStatus = MissionStatus.PENDING
    resolved_at: float | None = None
    step_index: int = 0
    terminal: bool = False
    collisions: list = field(default_factory=list)
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._index = {v.id: i for i, v in enumerate(self.vehicles)}

    def vehicle(self, vid) -> VehicleState:
        return self.vehicles[self._index[vid]]

    @property
    def mission(self):
        return self.vehicle(self.mission_id)

    def agent_ids(self, live_only=True):
        return [v.id for v in self.vehicles if v.kind is Kind.AV and (v.live or not live_only)]

    def with_vehicles(self, vehicles, **changes):
        return dataclasses.replace(self, vehicles=list(vehicles), **changes)


@dataclass
class StepOutcome:
    observations: dict
    rewards: dict
    collisions: list
    mission_status: MissionStatus
    terminal: bool
    crashed_agents: tuple = ()
    finished_agents: tuple = ()


# --------------------------------------------------------------------------
# spawning
# --------------------------------------------------------------------------


def clipped_gaussian(rng, mean, std, clip_sigmas, size=None):
    x = rng.normal(mean, std, size=size)
    return np.clip(x, mean - clip_sigmas * std, mean + clip_sigmas * std)


def _make_vehicle(vid, kind, road, lane, l, speed, sc, **kw):
    d = road.lane_center(lane, l)
    pose = road.frenet_to_world((l, d))
    yaw = pose.heading + math.atan(road.lane_slope(lane, l))
    return VehicleState(
        id=vid,
        kind=kind,
        x=pose.x,
        y=pose.y,
        yaw=yaw,
        speed=speed,
        frenet=FrenetPose(l, d, lane),
        length=sc.vehicle_length,
        width=sc.vehicle_width,
        target_lane=lane,
        **kw,
    )


def _spawn_ok(placements, sc):
    by_lane = {}
    for lane, l in placements:
        by_lane.setdefault(lane, []).append(l)
    for ls in by_lane.values():
        ls.sort()
        for a, b in zip(ls, ls[1:]):
            if b - a < sc.vehicle_length + sc.min_spawn_gap:
                return False
    return True


def reset(config: Config, seed: int, randomness_scale: float | None = None) -> WorldState:
    """Fresh world; positions and speeds from clipped Gaussians scaled by the randomness tier."""
    sc = config.scenario
    try:
        road = build_merge_scenario(sc)
    except GeometryError as exc:
        raise EnvError(str(exc)) from exc
    scale = sc.randomness_scale if randomness_scale is None else randomness_scale
    rng = np.random.default_rng(seed)
    pos_std, spd_std, k = sc.position_std * scale, sc.speed_std * scale, sc.clip_sigmas
    dr = config.drivers
    slots = [(Kind.AV, s) for s in sc.av_slots[: sc.n_avs]] + [(Kind.HV, s) for s in sc.hv_slots[: sc.n_hvs]]
    v_hi = config.dynamics.v_max
    for _ in range(max(sc.spawn_attempts, 1)):
        m_l = float(clipped_gaussian(rng, sc.mission_l, pos_std, k))
        m_v = float(np.clip(clipped_gaussian(rng, sc.mission_speed, spd_std, k), 0.0, v_hi))
        ls = clipped_gaussian(rng, np.array([sc.mission_l + s.offset for _, s in slots]), pos_std, k, size=len(slots))
        vs = clipped_gaussian(rng, np.array([s.speed for _, s in slots]), spd_std, k, size=len(slots))
        vs = np.clip(vs, 0.0, v_hi)
        desired = np.clip(
            rng.normal(dr.desired_speed_mean, dr.desired_speed_std, size=len(slots) + 1),
            dr.desired_speed_min,
            dr.desired_speed_max,
        )
        placements = [(road.ramp_lane, m_l)] + [(s.lane, float(l)) for (_, s), l in zip(slots, ls)]
        in_road = all(0.0 <= l <= road.length for _, l in placements)
        ramp_ok = m_l < road.ramp.merge_end_l - sc.vehicle_length
        if in_road and ramp_ok and _spawn_ok(placements, sc):
            break
    else:
        raise EnvError(f"could not place {len(slots) + 1} vehicles without overlap in {sc.spawn_attempts} attempts")

    vehicles = []
    for vid, ((kind, slot), l, v) in enumerate(zip(slots, ls, vs)):
        v = float(v)
        extra = dict(target_speed=v, desired_speed=v) if kind is Kind.AV else dict(target_speed=v, desired_speed=float(desired[vid]))
        vehicles.append(_make_vehicle(vid, kind, road, slot.lane, float(l), v, sc, **extra))
    mission_kind = Kind.AV if sc.mission_kind == "av" else Kind.HV
    mid = len(vehicles)
    vehicles.append(
        _make_vehicle(
            mid, mission_kind, road, road.ramp_lane, m_l, m_v, sc,
            is_mission=True, target_speed=m_v,
            desired_speed=float(desired[-1]) if mission_kind is Kind.HV else m_v,
        )
    )
    return WorldState(t=0.0, vehicles=vehicles, road=road, mission_id=mid, seed=int(seed), config=config)


# --------------------------------------------------------------------------
# perception and neighbors
# --------------------------------------------------------------------------


def _dist(a, b):
    return math.hypot(a.x - b.x, a.y - b.y)


def perception_set(world: WorldState, observer) -> PerceptionSet:
    """AVs reachable over V2V and the HVs any of them can sense."""
    sc = world.config.scenario
    me = world.vehicle(observer)
    if me.kind is not Kind.AV:
        raise EnvError(f"vehicle {observer} is not an AV")
    avs = [v for v in world.vehicles if v.kind is Kind.AV and v.live]
    if all(v.id != me.id for v in avs):
        avs.append(me)
    if sc.v2v_range is None:
        group = avs
    else:
        group, frontier, seen = [me], [me], {me.id}
        while frontier:
            cur = frontier.pop()
            for v in avs:
                if v.id not in seen and _dist(cur, v) <= sc.v2v_range:
                    seen.add(v.id)
                    group.append(v)
                    frontier.append(v)
    hvs = [
        v.id
        for v in world.vehicles
        if v.kind is Kind.HV and v.live and any(_dist(v, a) <= sc.sensing_radius for a in group)
    ]
    return PerceptionSet(observer, tuple(sorted(v.id for v in group)), tuple(hvs))


def occupies(vehicle, lane, road):
    if not road.lane_exists(lane, vehicle.l):
        return False
    return abs(vehicle.d - road.lane_center(lane, vehicle.l)) < 0.5 * (road.lane_width + vehicle.width) - 0.25


def lane_neighbors(vehicle, lane, vehicles, road, radius=math.inf):
    leader = follower = None
    for other in vehicles:
        if other.id == vehicle.id or not other.live or not occupies(other, lane, road):
            continue
        if abs(other.l - vehicle.l) > radius:
            continue
        if other.l > vehicle.l or (other.l == vehicle.l and other.id > vehicle.id):
            if leader is None or other.l < leader.l:
                leader = other
        elif follower is None or other.l > follower.l:
            follower = other
    if lane == road.ramp_lane:
        end = Obstacle(l=road.ramp.merge_end_l, speed=0.0, length=0.0)
        if leader is None or end.l < leader.l:
            leader = end
    return LaneNeighbors(leader, follower)


def neighbor_set(vehicle, vehicles, road, radius=math.inf) -> NeighborSet:
    lane = vehicle.lane
    cur = lane_neighbors(vehicle, lane, vehicles, road, radius)
    left = lane_neighbors(vehicle, lane - 1, vehicles, road, radius) if road.can_change(lane, lane - 1, vehicle.l) else None
    right = lane_neighbors(vehicle, lane + 1, vehicles, road, radius) if road.can_change(lane, lane + 1, vehicle.l) else None
    return NeighborSet(cur, left, right)


def check_collision(world: WorldState):
    """Pairs of live vehicle ids whose footprints overlap."""
    vs = world.vehicles
    if len(vs) < 2:
        return []
    pairs = _accel.overlapping_pairs(
        [v.x for v in vs], [v.y for v in vs], [v.yaw for v in vs],
        [0.5 * v.length for v in vs], [0.5 * v.width for v in vs], [v.live for v in vs],
    )
    return [(vs[i].id, vs[j].id) for i, j in pairs]


# --------------------------------------------------------------------------
# mission bookkeeping
# --------------------------------------------------------------------------


def fail_line(world):
    sc = world.config.scenario
    return world.road.ramp.merge_end_l - 0.5 * sc.vehicle_length - world.config.drivers.jam_distance - sc.fail_margin


def mission_status(world: WorldState) -> MissionStatus:
    """Latched mission outcome."""
    if world.mission_status is not MissionStatus.PENDING:
        return world.mission_status
    m = world.mission
    road = world.road
    if m.crashed:
        return MissionStatus.FAILED
    if road.is_highway(m.lane) and abs(m.d - road.lane_center(m.lane, m.l)) < world.config.scenario.merge_tolerance:
        return MissionStatus.MERGED
    if m.stopped:
        return MissionStatus.FAILED
    if world.t >= world.config.scenario.t_max - 1e-9:
        return MissionStatus.FAILED
    return MissionStatus.PENDING


# --------------------------------------------------------------------------
# stepping
# --------------------------------------------------------------------------


class _Models:
    """Per-config constants, built once per world config."""

    def __init__(self, cfg: Config):
        self.limits = Limits.from_config(cfg.dynamics)
        self.gains = PidGains.from_config(cfg.dynamics)
        self.idm = IdmParams.from_config(cfg.drivers)
        self.mobil = MobilParams.from_config(cfg.drivers)
        self.weights = SvoWeights.from_config(cfg.reward)
        self.reward = RewardParams.from_config(cfg.reward, cfg.dynamics)

    def params_for(self, v):
        return self.idm.with_speed(v.desired_speed if v.kind is Kind.HV else v.target_speed)


_MODEL_CACHE: dict = {}


def models_for(cfg: Config) -> _Models:
    key = id(cfg)
    hit = _MODEL_CACHE.get(key)
    if hit is None or hit[0] is not cfg:
        if len(_MODEL_CACHE) > 64:
            _MODEL_CACHE.clear()
        hit = (cfg, _Models(cfg))
        _MODEL_CACHE[key] = hit
    return hit[1]


def _hv_decide(v, snapshot, road, models, radius):
    if v.target_lane != v.lane:
        return v  # still executing a lane change
    decision = mobil_decide(v, neighbor_set(v, snapshot, road, radius), models.idm, models.mobil, models.params_for)
    if decision is LaneDecision.KEEP:
        return v
    return v.replace(target_lane=v.lane + int(decision))


def _hv_accel(v, snapshot, road, models, radius):
    p = models.params_for(v)
    lanes = {v.lane, v.target_lane} if road.lane_exists(v.target_lane, v.l) else {v.lane}
    leaders = [lane_neighbors(v, lane, snapshot, road, radius).leader for lane in sorted(lanes)]
    leaders = [x for x in leaders if x is not None]
    if not leaders:
        gap, dv, has = 1.0, 0.0, False
    else:
        lead = min(leaders, key=lambda o: bumper_gap(v, o))
        gap, dv, has = bumper_gap(v, lead), v.speed - lead.speed, True
    return idm_scalar(v.speed, p.desired_speed, gap, dv, has, p)


def _reproject(v, road):
    try:
        fr = road.world_to_frenet((v.x, v.y))
    except GeometryError:
        return v.replace(exited=True)
    out = v.replace(frenet=fr)
    if fr.l >= road.length - 1e-9:
        out = out.replace(exited=True)
    return out


def _physics_substep(vehicles, world, models, dt, radius):
    road = world.road
    snapshot = vehicles
    nxt = []
    stop_l = fail_line(world)
    for v in snapshot:
        if not v.live or v.stopped:
            nxt.append(v)
            continue
        if v.kind is Kind.AV:
            u = pid_track(v, road, dt, models.gains, models.limits)
            v2 = pid_memory(v, dt)
        else:
            acc = _hv_accel(v, snapshot, road, models, radius)
            steer = steering_command(v, road, models.gains, models.limits)
            u = (acc, steer)
            v2 = v
        v2 = _reproject(bicycle_step(v2, ControlInput(*u), dt, models.limits), road)
        if v2.live and v2.lane == road.ramp_lane and v2.l >= stop_l:
            # held at the ramp terminus
            v2 = v2.replace(speed=0.0, accel=0.0, target_speed=0.0, stopped=True)
        nxt.append(v2)
    return nxt


def step(world: WorldState, av_actions: dict):
    """One decision step: meta-actions, HV decisions, physics sub-steps, bookkeeping."""
    if world.terminal:
        raise EnvError("step() called on a terminal world")
    cfg = world.config
    sc = cfg.scenario
    models = models_for(cfg)
    road = world.road
    live_avs = set(world.agent_ids())
    given = set(av_actions)
    if given != live_avs:
        missing, extra = sorted(live_avs - given), sorted(given - live_avs)
        raise EnvError(f"action keys mismatch: missing={missing} extra={extra}")

    vehicles = []
    for v in world.vehicles:
        if v.kind is Kind.AV and v.live and not v.stopped:
            v = apply_meta_action(av_actions[v.id], v, road, cfg.dynamics.dv, cfg.dynamics.v_max)
        vehicles.append(v)
    snapshot = vehicles
    vehicles = [
        _hv_decide(v, snapshot, road, models, sc.sensing_radius) if (v.kind is Kind.HV and v.live and not v.stopped) else v
        for v in snapshot
    ]

    n_sub = max(int(round(sc.physics_hz / sc.policy_hz)), 1)
    dt = 1.0 / sc.physics_hz
    collisions = []
    probe = world.with_vehicles(vehicles)
    for _ in range(n_sub):
        vehicles = _physics_substep(vehicles, probe, models, dt, sc.sensing_radius)
        probe = world.with_vehicles(vehicles)
        hits = check_collision(probe)
        if hits:
            crashed = {i for pair in hits for i in pair}
            vehicles = [v.replace(crashed=True) if v.id in crashed else v for v in vehicles]
            collisions = hits
            break

    t = world.t + 1.0 / sc.policy_hz
    after = world.with_vehicles(vehicles, t=t, step_index=world.step_index + 1, collisions=collisions)
    status = mission_status(after)
    resolved_at = world.resolved_at
    if status is not MissionStatus.PENDING and resolved_at is None:
        resolved_at = t
    after.mission_status = status
    after.resolved_at = resolved_at
    after.terminal = bool(
        collisions
        or t >= sc.t_max - 1e-9
        or (resolved_at is not None and t - resolved_at >= sc.post_mission_horizon - 1e-9)
    )

    rewards = {}
    observations = {}
    for aid in sorted(live_avs):
        perception = perception_set(world, aid)
        rewards[aid] = agent_reward(aid, perception, world, after, models.weights, models.reward)
        # rendered for finished agents too so their last transition has a next state
        observations[aid] = observe.render(after, aid, perception_set(after, aid), cfg.observation)
    crashed_agents = tuple(a for a in sorted(live_avs) if after.vehicle(a).crashed)
    finished = tuple(a for a in sorted(live_avs) if not after.vehicle(a).live)
    outcome = StepOutcome(observations, rewards, collisions, status, after.terminal, crashed_agents, finished)
    return after, outcome


def observe_all(world: WorldState):
    cfg = world.config
    return {aid: observe.render(world, aid, perception_set(world, aid), cfg.observation) for aid in world.agent_ids()}


# --------------------------------------------------------------------------
# multi-agent wrapper used by training and evaluation
# --------------------------------------------------------------------------


class MergeEnv:
    """Stateful wrapper: ``reset(seed) -> obs``, ``step(actions) -> (obs, rewards, terminals, done, info)``.

    ``obs`` maps agent id to one frame; ``terminals[agent]`` is True only for a
    genuine terminal (crash), not for time-outs or leaving the road.
    """

    def __init__(self, config: Config, randomness_scale=None, recorder=None):
        self.config = config
        self.randomness_scale = randomness_scale
        self.recorder = recorder
        self.world = None

    @property
    def agents(self):
        return self.world.agent_ids()

    def reset(self, seed):
        self.world = reset(self.config, seed, self.randomness_scale)
        if self.recorder is not None:
            self.recorder.begin(self.world)
        return observe_all(self.world)

    def step(self, actions):
        before = self.world
        self.world, out = step(self.world, {k: int(v) for k, v in actions.items()})
        if self.recorder is not None:
            self.recorder.record(before, self.world, actions, out)
        rewards = {a: r.total for a, r in out.rewards.items()}
        terminals = {a: a in out.crashed_agents for a in out.rewards}
        info = {
            "breakdown": out.rewards,
            "mission_status": out.mission_status,
            "collisions": out.collisions,
            "finished": out.finished_agents,
            "x_gap": {a: abs(self.world.vehicle(a).l - self.world.road.merge_point_l) for a in out.rewards},
        }
        if out.terminal and self.recorder is not None:
            self.recorder.end(self.world)
        return out.observations, rewards, terminals, out.terminal, info


def default_actions(world, action=MetaAction.IDLE):
    return {a: int(action) for a in world.agent_ids()}
