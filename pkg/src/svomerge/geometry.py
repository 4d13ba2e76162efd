"""Road network in Frenet coordinates: piecewise straight/arc reference line plus an on-ramp.

Lateral offset ``d`` is measured from the reference line (the highway centerline),
positive to the left. Highway lanes are indexed 0 (leftmost) .. n-1; the ramp is
lane ``n`` and only exists up to the merge end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class GeometryError(ValueError):
    pass


class WorldPose(NamedTuple):
    x: float
    y: float
    heading: float


class FrenetPose(NamedTuple):
    l: float
    d: float
    lane_index: int


def _wrap(angle):
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class Segment:
    """A straight piece (``curvature == 0``) or circular arc of the reference line."""

    length: float
    curvature: float = 0.0
    x0: float = 0.0
    y0: float = 0.0
    heading0: float = 0.0
    l0: float = 0.0

    def heading(self, s):
        return self.heading0 + self.curvature * s

    def point(self, s):
        k = self.curvature
        if k == 0.0:
            return self.x0 + s * math.cos(self.heading0), self.y0 + s * math.sin(self.heading0)
        th = self.heading0 + k * s
        return (
            self.x0 + (math.sin(th) - math.sin(self.heading0)) / k,
            self.y0 - (math.cos(th) - math.cos(self.heading0)) / k,
        )

    def end_pose(self):
        x, y = self.point(self.length)
        return x, y, self.heading(self.length)

    def project(self, x, y):
        """Local ``(s, d)`` of a world point, ``s`` unclipped."""
        k = self.curvature
        if k == 0.0:
            c, s_ = math.cos(self.heading0), math.sin(self.heading0)
            dx, dy = x - self.x0, y - self.y0
            return dx * c + dy * s_, -dx * s_ + dy * c
        cx = self.x0 - math.sin(self.heading0) / k
        cy = self.y0 + math.cos(self.heading0) / k
        rx, ry = x - cx, y - cy
        dist = math.hypot(rx, ry)
        radius = 1.0 / abs(k)
        if k > 0:
            # left turn: the point lies toward the center, normal = (c - p)/|c - p|
            th = math.atan2(rx, -ry)
            d = radius - dist
        else:
            th = math.atan2(-rx, ry)
            d = dist - radius
        s = _wrap(th - self.heading0) / k
        # pick the branch nearest the segment interval
        period = 2.0 * math.pi / abs(k)
        while s < -0.5 * period + self.length / 2.0:
            s += period
        while s > 0.5 * period + self.length / 2.0:
            s -= period
        return s, d


def chain_segments(pieces, x0=0.0, y0=0.0, heading0=0.0):
    """Build consecutive segments from ``(length, curvature)`` pairs."""
    out = []
    x, y, h, l = x0, y0, heading0, 0.0
    for length, curvature in pieces:
        if length <= 0:
            raise GeometryError("segment length must be positive")
        seg = Segment(length, curvature, x, y, h, l)
        out.append(seg)
        x, y, h = seg.end_pose()
        l += length
    return tuple(out)


@dataclass(frozen=True)
class Ramp:
    merge_start_l: float
    merge_end_l: float
    approach_offset: float = 4.0
    taper_length: float = 100.0


@dataclass(frozen=True)
class RoadNetwork:
    segments: tuple
    lane_width: float = 4.0
    highway_lane_count: int = 2
    ramp: Ramp | None = None
    _ends: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if self.highway_lane_count < 1:
            raise GeometryError("need at least one highway lane")
        if self.lane_width <= 0:
            raise GeometryError("lane width must be positive")
        if not self.segments:
            raise GeometryError("road needs at least one segment")
        if self.ramp is not None and not self.ramp.merge_start_l < self.ramp.merge_end_l:
            raise GeometryError("merge_start_l must be below merge_end_l")
        object.__setattr__(self, "_ends", tuple(s.l0 + s.length for s in self.segments))

    # ---- lanes ---------------------------------------------------------
    @property
    def length(self):
        return self._ends[-1]

    @property
    def lane_count(self):
        return self.highway_lane_count + (1 if self.ramp is not None else 0)

    @property
    def ramp_lane(self):
        return self.highway_lane_count if self.ramp is not None else None

    @property
    def merge_point_l(self):
        return self.ramp.merge_end_l if self.ramp is not None else None

    def is_highway(self, lane):
        return 0 <= lane < self.highway_lane_count

    def _ramp_extra(self, l):
        r = self.ramp
        start = r.merge_start_l - r.taper_length
        if l >= r.merge_start_l:
            return 0.0
        if l <= start or r.taper_length <= 0:
            return r.approach_offset
        u = (l - start) / r.taper_length
        return r.approach_offset * 0.5 * (1.0 + math.cos(math.pi * u))

    def _ramp_extra_slope(self, l):
        r = self.ramp
        start = r.merge_start_l - r.taper_length
        if l >= r.merge_start_l or l <= start or r.taper_length <= 0:
            return 0.0
        u = (l - start) / r.taper_length
        return -r.approach_offset * 0.5 * math.pi * math.sin(math.pi * u) / r.taper_length

    def lane_center(self, lane, l):
        n = self.highway_lane_count
        w = self.lane_width
        if 0 <= lane < n:
            return ((n - 1) / 2.0 - lane) * w
        if lane == n and self.ramp is not None:
            return -((n + 1) / 2.0) * w - self._ramp_extra(l)
        raise GeometryError(f"no lane {lane}")

    def lane_centers(self, lane, ls):
        """Vectorized ``lane_center`` over an array of l; NaN where the lane does not exist."""
        ls = np.asarray(ls, dtype=np.float64)
        n = self.highway_lane_count
        w = self.lane_width
        if 0 <= lane < n:
            out = np.full(ls.shape, ((n - 1) / 2.0 - lane) * w)
            out[(ls < 0.0) | (ls > self.length)] = np.nan
            return out
        if lane == n and self.ramp is not None:
            r = self.ramp
            start = r.merge_start_l - r.taper_length
            if r.taper_length > 0:
                u = np.clip((ls - start) / r.taper_length, 0.0, 1.0)
                extra = r.approach_offset * 0.5 * (1.0 + np.cos(np.pi * u))
            else:
                extra = np.where(ls < r.merge_start_l, r.approach_offset, 0.0)
            extra = np.where(ls >= r.merge_start_l, 0.0, extra)
            out = -((n + 1) / 2.0) * w - extra
            out[(ls < 0.0) | (ls > r.merge_end_l)] = np.nan
            return out
        raise GeometryError(f"no lane {lane}")

    def lane_slope(self, lane, l):
        """d(lane center)/dl."""
        if lane == self.ramp_lane:
            return -self._ramp_extra_slope(l)
        return 0.0

    def lane_exists(self, lane, l):
        if 0 <= lane < self.highway_lane_count:
            return 0.0 <= l <= self.length
        if lane == self.ramp_lane:
            return 0.0 <= l <= self.ramp.merge_end_l
        return False

    def lanes_at(self, l):
        return [i for i in range(self.lane_count) if self.lane_exists(i, l)]

    def lane_index_at(self, l, d):
        best, best_err = 0, math.inf
        for lane in self.lanes_at(min(max(l, 0.0), self.length)):
            err = abs(d - self.lane_center(lane, l))
            if err < best_err:
                best, best_err = lane, err
        return best

    def can_change(self, from_lane, to_lane, l):
        """Lateral move allowed between adjacent lanes at ``l``."""
        if abs(from_lane - to_lane) != 1 or not self.lane_exists(to_lane, l):
            return False
        if to_lane == self.ramp_lane:
            return False
        if from_lane == self.ramp_lane:
            r = self.ramp
            return r.merge_start_l <= l <= r.merge_end_l
        return True

    def lateral_extent(self, l=None):
        """Max |d| of any lane edge (over the whole road when ``l`` is None)."""
        ext = (self.highway_lane_count / 2.0) * self.lane_width
        if self.ramp is not None:
            extra = self.ramp.approach_offset if l is None else self._ramp_extra(l)
            ext = max(ext, ((self.highway_lane_count + 1) / 2.0) * self.lane_width + extra + self.lane_width / 2)
        return ext

    # ---- coordinates ---------------------------------------------------
    def _segment_at(self, l):
        for seg, end in zip(self.segments, self._ends):
            if l <= end:
                return seg
        return self.segments[-1]

    def heading_at(self, l):
        seg = self._segment_at(l)
        return seg.heading(l - seg.l0)

    def frenet_to_world(self, pose) -> WorldPose:
        l, d = pose[0], pose[1]
        tol = 1e-9
        if not (-tol <= l <= self.length + tol):
            raise GeometryError(f"l={l} outside road [0, {self.length}]")
        seg = self._segment_at(l)
        s = l - seg.l0
        x, y = seg.point(s)
        h = seg.heading(s)
        return WorldPose(x - d * math.sin(h), y + d * math.cos(h), h)

    def world_to_frenet(self, world) -> FrenetPose:
        x, y = world[0], world[1]
        band = self.lateral_extent() + self.lane_width
        best = None
        for seg in self.segments:
            s, d = seg.project(x, y)
            if s < -1e-9 or s > seg.length + 1e-9:
                continue
            if seg.curvature != 0.0 and abs(d) >= 1.0 / abs(seg.curvature):
                continue
            if best is None or abs(d) < abs(best[1]):
                best = (seg.l0 + min(max(s, 0.0), seg.length), d)
        if best is None or abs(best[1]) > band:
            raise GeometryError(f"point ({x:.3f}, {y:.3f}) outside the road projection band")
        l, d = best
        return FrenetPose(l, d, self.lane_index_at(l, d))


def straight_road(length, **kwargs) -> RoadNetwork:
    return RoadNetwork(segments=chain_segments([(length, 0.0)]), **kwargs)


def build_merge_scenario(config) -> RoadNetwork:
    """Highway of ``config.lane_count`` lanes with one ramp joining the rightmost lane."""
    if config.lane_count < 1:
        raise GeometryError("lane_count must be >= 1")
    if config.ramp_end - config.ramp_start <= 0 or config.ramp_start <= 0:
        raise GeometryError("ramp length must be positive")
    if config.road_length <= config.ramp_end:
        raise GeometryError("road_length must exceed the ramp end")
    if config.lane_width <= 0:
        raise GeometryError("lane_width must be positive")
    ramp = Ramp(
        merge_start_l=float(config.ramp_start),
        merge_end_l=float(config.ramp_end),
        approach_offset=float(getattr(config, "ramp_approach_offset", 4.0)),
        taper_length=float(getattr(config, "ramp_taper_length", 100.0)),
    )
    return RoadNetwork(
        segments=chain_segments([(float(config.road_length), 0.0)]),
        lane_width=float(config.lane_width),
        highway_lane_count=int(config.lane_count),
        ramp=ramp,
    )
