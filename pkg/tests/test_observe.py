import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svomerge.config import ObservationConfig
from svomerge.dynamics import Kind
from svomerge.env import PerceptionSet
from svomerge.geometry import straight_road
from svomerge.observe import (
    AV_PLANE,
    HV_PLANE,
    MISSION_PLANE,
    ROAD_PLANE,
    pixel_value,
    read_pgm,
    render_occupancy,
    render_velocity_map,
    stack_frames,
    write_pgm,
)

from ._sim import vehicle, world

CFG = ObservationConfig()
STRAIGHT = straight_road(3000.0, highway_lane_count=2)


def test_pixel_value_examples():
    assert pixel_value(0.0) == 1.0
    assert pixel_value(10.0) == pytest.approx(1 - math.log(20) / math.log(40), abs=1e-12)
    assert pixel_value(10.0) == pytest.approx(0.18790182, abs=1e-8)
    assert pixel_value(20.0) == 0.0
    assert pixel_value(-10.0) == pixel_value(10.0)
    assert pixel_value(0.49) == 1.0


@settings(max_examples=300)
@given(st.floats(-60, 60), st.floats(-60, 60))
def test_pixel_value_monotone_and_bounded(a, b):
    za, zb = pixel_value(a), pixel_value(b)
    assert 0.0 <= za <= 1.0
    if abs(a) <= abs(b):
        assert za >= zb
    if abs(a) < 0.5:
        assert za == 1.0


def _solo(road=None, speed=20.0, l=500.0):
    ego = vehicle(0, l=l, d=-2.0, lane=1, speed=speed)
    far_mission = vehicle(9, l=2900.0, d=-2.0, lane=1, speed=0.0, is_mission=True)
    return ego, far_mission


def test_alone_only_ego_in_av_plane():
    ego, m = _solo()
    w = world([ego, m], road=STRAIGHT)
    vm = render_velocity_map(w, 0, PerceptionSet(0, (0,), ()), CFG)
    assert vm.shape == (4, 128, 32) and vm.dtype == np.float32
    assert vm[AV_PLANE].max() == 1.0
    assert not vm[HV_PLANE].any() and not vm[MISSION_PLANE].any()
    # ego sits 30% from the rear edge of the frame
    cols = np.flatnonzero(vm[AV_PLANE].any(axis=1))
    centre = 0.5 * (cols[0] + cols[-1] + 1)
    assert centre == pytest.approx(0.3 * CFG.width, abs=1)
    # ego footprint: 5 m x 2 m at 1 m x 0.5 m pixels
    assert vm[AV_PLANE].sum() == pytest.approx(5 * 4, abs=6)


def test_hv_at_same_speed_is_bright():
    ego, m = _solo()
    hv = vehicle(1, l=530.0, d=2.0, lane=0, speed=20.0, kind=Kind.HV)
    w = world([ego, hv, m], road=STRAIGHT)
    vm = render_velocity_map(w, 0, PerceptionSet(0, (0,), (1,)), CFG)
    px = vm[HV_PLANE][vm[HV_PLANE] > 0]
    assert px.size > 0 and np.all(px == 1.0)


def test_hv_speed_encoded_relative_to_ego():
    ego, m = _solo()
    hv = vehicle(1, l=530.0, d=2.0, lane=0, speed=30.0, kind=Kind.HV)
    w = world([ego, hv, m], road=STRAIGHT)
    vm = render_velocity_map(w, 0, PerceptionSet(0, (0,), (1,)), CFG)
    assert set(np.unique(vm[HV_PLANE])) == {0.0, np.float32(pixel_value(10.0))}


def test_mission_plane_marks_mission_vehicle():
    ego = vehicle(0, l=500.0, d=-2.0, lane=1, speed=20.0)
    m = vehicle(1, l=510.0, d=2.0, lane=0, speed=20.0, kind=Kind.HV, is_mission=True)
    w = world([ego, m], road=STRAIGHT)
    vm = render_velocity_map(w, 0, PerceptionSet(0, (0,), (1,)), CFG)
    assert vm[MISSION_PLANE].any()
    # a human mission vehicle is also drawn in the HV plane
    assert np.array_equal(vm[MISSION_PLANE] > 0, vm[HV_PLANE] > 0)


def test_road_plane_marks_lanes():
    ego, m = _solo()
    vm = render_velocity_map(world([ego, m], road=STRAIGHT), 0, PerceptionSet(0, (0,), ()), CFG)
    road = vm[ROAD_PLANE]
    # two 4 m lanes at 0.5 m/px: 16 drivable rows in every column
    assert np.all(road.sum(axis=1) == 16)


def test_shape_follows_config():
    cfg = ObservationConfig(width=64, height=16, m_per_px_l=2.0, m_per_px_d=1.0)
    ego, m = _solo()
    vm = render_velocity_map(world([ego, m], road=STRAIGHT), 0, PerceptionSet(0, (0,), ()), cfg)
    assert vm.shape == (4, 64, 16)


@settings(max_examples=40, deadline=None)
@given(st.floats(-300, 300), st.lists(st.tuples(st.floats(-40, 80), st.sampled_from([-2.0, 2.0]), st.floats(0, 35)), max_size=5))
def test_translation_consistency(shift, others):
    def build(dl):
        vs = [vehicle(0, l=1000.0 + dl, d=-2.0, lane=1, speed=20.0)]
        for i, (rel, d, sp) in enumerate(others, start=1):
            vs.append(vehicle(i, l=1000.0 + rel + dl, d=d, speed=sp, kind=Kind.HV))
        vs.append(vehicle(99, l=2900.0, d=-2.0, speed=0.0, is_mission=True))
        w = world(vs, road=STRAIGHT)
        return render_velocity_map(w, 0, PerceptionSet(0, (0,), tuple(range(1, len(others) + 1))), CFG)

    np.testing.assert_array_equal(build(0.0), build(shift))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-60, 120), st.floats(-7, 4), st.floats(0, 40), st.floats(-0.5, 0.5)), max_size=6))
def test_all_values_finite_and_in_range(others):
    from svomerge.config import Config
    from svomerge.geometry import build_merge_scenario

    road = build_merge_scenario(Config().scenario)
    vs = [vehicle(0, l=250.0, d=-2.0, lane=1, speed=20.0)]
    for i, (rel, d, sp, yaw) in enumerate(others, start=1):
        vs.append(vehicle(i, l=max(250.0 + rel, 0.0), d=d, speed=sp, yaw=yaw, kind=Kind.HV))
    vs.append(vehicle(99, l=200.0, d=-10.0, lane=2, speed=15.0, kind=Kind.HV, is_mission=True))
    w = world(vs, road=road)
    p = PerceptionSet(0, (0,), tuple(v.id for v in vs[1:]))
    vm = render_velocity_map(w, 0, p, CFG)
    assert np.all(np.isfinite(vm)) and vm.min() >= 0.0 and vm.max() <= 1.0
    occ = render_occupancy(w, 0, p, CFG)
    assert np.all(np.isfinite(occ))
    assert set(np.unique(occ[..., 0])) <= {0.0, 1.0}
    assert not occ[occ[..., 0] == 0].any()
    assert np.all(np.abs(occ[..., 5:]) <= 1.0)


def test_occupancy_ego_only():
    ego = vehicle(0, l=500.0, d=-2.0, lane=1, speed=20.0, yaw=0.0)
    m = vehicle(9, l=2900.0, speed=0.0, is_mission=True)
    occ = render_occupancy(world([ego, m], road=STRAIGHT), 0, PerceptionSet(0, (0,), ()), CFG)
    assert occ.shape == (128, 32, 7)
    cells = np.argwhere(occ[..., 0] == 1.0)
    assert len(cells) == 1
    i, j = cells[0]
    np.testing.assert_allclose(occ[i, j], [1, 0, 0, 0, 0, 0, 1], atol=1e-12)
    mask = np.ones(occ.shape[:2], bool)
    mask[i, j] = False
    assert not occ[mask].any()


def test_occupancy_heading_features():
    ego = vehicle(0, l=500.0, d=-2.0, lane=1, speed=20.0)
    other = vehicle(1, l=520.0, d=2.0, speed=5.0, yaw=math.pi / 2, kind=Kind.HV)
    m = vehicle(9, l=2900.0, speed=0.0, is_mission=True)
    occ = render_occupancy(world([ego, other, m], road=STRAIGHT), 0, PerceptionSet(0, (0,), (1,)), CFG)
    hit = [occ[i, j] for i, j in np.argwhere(occ[..., 0] == 1) if occ[i, j, 1] != 0]
    assert len(hit) == 1
    f = hit[0]
    assert f[1] == pytest.approx(20.0) and f[2] == pytest.approx(4.0)
    assert f[5] == pytest.approx(1.0) and f[6] == pytest.approx(0.0, abs=1e-12)


def test_occupancy_collision_nearer_wins():
    cfg = ObservationConfig(width=16, height=4, m_per_px_l=10.0, m_per_px_d=4.0)
    ego = vehicle(0, l=500.0, d=-2.0, lane=1, speed=20.0)
    near = vehicle(1, l=552.0, d=-2.0, lane=1, speed=10.0, kind=Kind.HV)
    far = vehicle(2, l=558.0, d=-2.0, lane=1, speed=0.0, kind=Kind.HV)
    m = vehicle(9, l=2900.0, speed=0.0, is_mission=True)
    occ = render_occupancy(world([ego, near, far, m], road=STRAIGHT), 0, PerceptionSet(0, (0,), (1, 2)), cfg)
    cells = occ[occ[..., 0] == 1]
    assert len(cells) == 2
    assert sorted(cells[:, 1]) == pytest.approx([0.0, 52.0])


def test_stack_frames_examples():
    frames = [np.full((1, 2, 2), i, dtype=np.float32) for i in range(25)]
    out = stack_frames(frames[:10])
    assert [f[0, 0, 0] for f in out] == list(range(10))
    out = stack_frames(frames[:3])
    assert [f[0, 0, 0] for f in out] == [0] * 8 + [1, 2]
    out = stack_frames(frames)
    assert out.shape == (10, 1, 2, 2) and [f[0, 0, 0] for f in out] == list(range(15, 25))
    with pytest.raises(ValueError):
        stack_frames([])


def test_pgm_round_trip(tmp_path):
    plane = np.linspace(0, 1, 128 * 32).reshape(128, 32)
    write_pgm(tmp_path / "p.pgm", plane)
    img = read_pgm(tmp_path / "p.pgm")
    assert img.shape == (32, 128)
    np.testing.assert_array_equal(img, np.round(plane.T * 255).astype(np.uint8))
