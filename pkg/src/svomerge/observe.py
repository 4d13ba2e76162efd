"""Ego-centric state representations: VelocityMap planes, occupancy grid, frame stacks."""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np

from . import _accel

log = logging.getLogger(__name__)

AV_PLANE, HV_PLANE, ROAD_PLANE, MISSION_PLANE = range(4)
N_CHANNELS = 4
OCC_FEATURES = ("p", "l", "d", "v_l", "v_d", "sin_yaw", "cos_yaw")


def pixel_value(v_rel, alpha=2.0, beta=1.0 / math.log(40.0), v0=0.5):
    """Clipped-log intensity for a relative longitudinal speed; 1 when ``|v_rel| < v0``."""
    out = _accel.pixel_values(v_rel, alpha, beta, v0)
    return float(out[0]) if np.ndim(v_rel) == 0 else out


def frame_origin(world, observer, cfg):
    """Observer-relative ``(l0, d0)``: rear edge of the frame and its left edge in road d."""
    l0 = -cfg.rear_fraction * cfg.width * cfg.m_per_px_l
    road = world.road
    right_edge = -(road.highway_lane_count / 2.0 + (1.0 if road.ramp is not None else 0.0)) * road.lane_width
    left_edge = road.highway_lane_count / 2.0 * road.lane_width
    d_mid = 0.5 * (left_edge + right_edge)
    d0 = d_mid + 0.5 * cfg.height * cfg.m_per_px_d
    return l0, d0


def longitudinal_speed(vehicle, road):
    rel = vehicle.yaw - road.heading_at(min(max(vehicle.l, 0.0), road.length))
    return vehicle.speed * math.cos(rel), vehicle.speed * math.sin(rel)


def _relative_heading(vehicle, road):
    return vehicle.yaw - road.heading_at(min(max(vehicle.l, 0.0), road.length))


def _paint(plane, vehicles, ego, road, values, l0, d0, cfg):
    if not vehicles:
        return
    cl = np.array([v.l - ego.l for v in vehicles])
    cd = np.array([v.d for v in vehicles])
    hl = np.array([0.5 * v.length for v in vehicles])
    hw = np.array([0.5 * v.width for v in vehicles])
    head = np.array([_relative_heading(v, road) for v in vehicles])
    _accel.rasterize_boxes(plane, cl, cd, hl, hw, head, values, l0, d0, cfg.m_per_px_l, cfg.m_per_px_d)


def road_plane(road, ego_l, l0, d0, cfg):
    ls = ego_l + l0 + (np.arange(cfg.width) + 0.5) * cfg.m_per_px_l
    d_px = d0 - (np.arange(cfg.height) + 0.5) * cfg.m_per_px_d
    plane = np.zeros((cfg.width, cfg.height))
    half = 0.5 * road.lane_width
    for lane in range(road.lane_count):
        centers = road.lane_centers(lane, ls)
        with np.errstate(invalid="ignore"):
            plane[np.abs(d_px[None, :] - centers[:, None]) <= half] = 1.0
    return plane


def render_velocity_map(world, observer, perception, cfg):
    """4 planes ``(AV, HV, road, mission)`` of shape ``(width, height)``, float32 in [0, 1]."""
    ego = world.vehicle(observer)
    road = world.road
    l0, d0 = frame_origin(world, observer, cfg)
    out = np.zeros((N_CHANNELS, cfg.width, cfg.height))
    ego_vl, _ = longitudinal_speed(ego, road)

    def speeds(vs):
        rel = np.array([longitudinal_speed(v, road)[0] - ego_vl for v in vs])
        return _accel.pixel_values(rel, cfg.alpha, cfg.beta, cfg.v0)

    avs = [world.vehicle(i) for i in perception.visible_avs]
    hvs = [world.vehicle(i) for i in perception.visible_hvs]
    if avs:
        _paint(out[AV_PLANE], avs, ego, road, speeds(avs), l0, d0, cfg)
    if hvs:
        _paint(out[HV_PLANE], hvs, ego, road, speeds(hvs), l0, d0, cfg)
    out[ROAD_PLANE] = road_plane(road, ego.l, l0, d0, cfg)
    m = world.vehicle(world.mission_id)
    if m.id in perception.visible_avs or m.id in perception.visible_hvs:
        _paint(out[MISSION_PLANE], [m], ego, road, np.ones(1), l0, d0, cfg)
    return out.astype(np.float32)


def render_occupancy(world, observer, perception, cfg):
    """Grid ``(width, height, 7)``; each occupied cell holds ``[p, l, d, v_l, v_d, sin yaw, cos yaw]``."""
    ego = world.vehicle(observer)
    road = world.road
    l0, d0 = frame_origin(world, observer, cfg)
    grid = np.zeros((cfg.width, cfg.height, len(OCC_FEATURES)))
    owner = {}
    ego_vl, ego_vd = longitudinal_speed(ego, road)
    ids = sorted(set(perception.visible_avs) | set(perception.visible_hvs))
    for vid in ids:
        v = world.vehicle(vid)
        rl, rd = v.l - ego.l, v.d - ego.d
        i = int(math.floor((rl - l0) / cfg.m_per_px_l))
        j = int(math.floor((d0 - v.d) / cfg.m_per_px_d))
        if not (0 <= i < cfg.width and 0 <= j < cfg.height):
            continue
        dist = math.hypot(rl, rd)
        if (i, j) in owner:
            other, other_dist = owner[(i, j)]
            log.debug("occupancy cell (%d, %d) shared by vehicles %d and %d", i, j, other, vid)
            if other_dist <= dist:
                continue
        vl, vd = longitudinal_speed(v, road)
        grid[i, j] = (1.0, rl, rd, vl - ego_vl, vd - ego_vd, math.sin(v.yaw), math.cos(v.yaw))
        owner[(i, j)] = (vid, dist)
    return grid


def render(world, observer, perception, cfg):
    if cfg.kind == "occupancy":
        return render_occupancy(world, observer, perception, cfg).astype(np.float32)
    return render_velocity_map(world, observer, perception, cfg)


def stack_frames(history, n=10):
    """Last ``n`` frames oldest-first as one array; short histories repeat their first frame."""
    if len(history) == 0:
        raise ValueError("cannot stack an empty history")
    frames = list(history[-n:])
    if len(frames) < n:
        frames = [frames[0]] * (n - len(frames)) + frames
    return np.stack(frames)


def write_pgm(path, plane):
    """Binary portable graymap of a [0, 1] plane; longitudinal axis runs left to right."""
    img = np.clip(np.asarray(plane, dtype=np.float64).T, 0.0, 1.0)
    data = np.round(img * 255.0).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + data.tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
