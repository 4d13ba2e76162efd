import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svomerge.dynamics import Kind
from svomerge.env import MissionStatus, PerceptionSet
from svomerge.reward import (
    RewardParams,
    SvoWeights,
    agent_reward,
    cooperative_reward,
    egoistic_reward,
    mission_reward,
    sympathetic_reward,
    total_reward,
)

from ._sim import vehicle, world

RP = RewardParams()
FAR = 1000.0


def pair(before, after, mission=None):
    """Before/after worlds sharing ids; ``mission`` is an extra far-away AV mission vehicle by default."""
    mission = mission or vehicle(99, l=FAR, speed=0.0, is_mission=True)
    return world(before + [mission]), world(after + [mission])


def test_egoistic_examples():
    v = vehicle(0, speed=30.0)
    b, a = pair([v], [v])
    assert egoistic_reward(0, b, a, RP) == 1.0
    v = vehicle(0, speed=0.0)
    b, a = pair([v], [v])
    assert egoistic_reward(0, b, a, RP) == 0.0
    v = vehicle(0, speed=30.0)
    b, a = pair([v], [v.replace(crashed=True)])
    assert egoistic_reward(0, b, a, RP) == pytest.approx(-4.0)


def test_crash_penalty_charged_once():
    v = vehicle(0, speed=30.0, crashed=True)
    b, a = pair([v], [v])
    assert egoistic_reward(0, b, a, RP) == 1.0


def test_acceleration_change_cost():
    b, a = pair([vehicle(0, speed=0.0, accel=-2.0)], [vehicle(0, speed=0.0, accel=2.0)])
    assert egoistic_reward(0, b, a, RP) == pytest.approx(-0.1 * 4.0 / 8.0)


def _allies(speeds, crashed=()):
    vs_b = [vehicle(0, speed=0.0)] + [vehicle(i + 1, l=20.0 * (i + 1), speed=s) for i, s in enumerate(speeds)]
    vs_a = [v.replace(crashed=v.id in crashed) for v in vs_b]
    return pair(vs_b, vs_a)


def test_cooperative_examples():
    b, a = _allies([])
    assert cooperative_reward(0, PerceptionSet(0, (0,), ()), b, a, RP) == 0.0
    b, a = _allies([12.0, 24.0])
    assert cooperative_reward(0, PerceptionSet(0, (0, 1, 2), ()), b, a, RP) == pytest.approx(0.6)
    b, a = _allies([30.0, 30.0], crashed={1})
    assert cooperative_reward(0, PerceptionSet(0, (0, 1, 2), ()), b, a, RP) == pytest.approx(-1.5)


def test_cooperative_sum_variant():
    b, a = _allies([12.0, 24.0])
    p = RewardParams(aggregate="sum")
    assert cooperative_reward(0, PerceptionSet(0, (0, 1, 2), ()), b, a, p) == pytest.approx(1.2)


def test_sympathy_no_targets():
    b, a = pair([vehicle(0)], [vehicle(0)])
    assert sympathetic_reward(0, PerceptionSet(0, (0,), ()), b, a, SvoWeights(1, 0, 1), RP) == 0.0


def test_sympathy_one_hv():
    me = vehicle(0, l=100.0)
    hv = vehicle(1, l=110.0, speed=24.0, kind=Kind.HV)
    b, a = pair([me, hv], [me, hv])
    r = sympathetic_reward(0, PerceptionSet(0, (0,), (1,)), b, a, SvoWeights(1, 0, 1), RP)
    assert r == pytest.approx(0.08)


def test_sympathy_merging_mission_hv():
    me = vehicle(0, l=100.0)
    m = vehicle(1, l=110.0, speed=24.0, kind=Kind.HV, is_mission=True)
    b = world([me, m], mission_status=MissionStatus.PENDING)
    a = world([me, m], mission_status=MissionStatus.MERGED)
    r = sympathetic_reward(0, PerceptionSet(0, (0,), (1,)), b, a, SvoWeights(1, 0, 1), RP)
    assert r == pytest.approx(1.08)
    # the step after: latched, no second emission
    r2 = sympathetic_reward(0, PerceptionSet(0, (0,), (1,)), a, a, SvoWeights(1, 0, 1), RP)
    assert r2 == pytest.approx(0.08)


def test_mission_reward_cases():
    m = vehicle(1, is_mission=True)
    other = vehicle(2)
    P, M, F = MissionStatus.PENDING, MissionStatus.MERGED, MissionStatus.FAILED
    assert mission_reward(m, (P, M)) == 1
    assert mission_reward(other, (P, M)) == 0
    assert mission_reward(m, (M, M)) == 0
    assert mission_reward(m, (P, F)) == 0
    assert mission_reward(m, (P, P)) == 0


def test_total_reward_examples():
    assert total_reward(0.5, 0.2, 0.3, SvoWeights(1, 1, 1)).total == pytest.approx(1.0)
    assert total_reward(0.37, 0.9, -2.0, SvoWeights(1, 0, 0)).total == 0.37
    assert total_reward(0.4, 0.2, 0.0, SvoWeights(1, 1, 0)).total == total_reward(0.4, 0.2, 0.0, SvoWeights(1, 1, 1)).total


def test_weights_validation_and_presets():
    with pytest.raises(ValueError):
        SvoWeights(0, 0, 0)
    with pytest.raises(ValueError):
        SvoWeights(-1, 0, 0)
    with pytest.raises(ValueError):
        SvoWeights(1, 0, 0, eta=0.0)
    assert SvoWeights.preset("E").triple == (1, 0, 0)
    assert SvoWeights.preset("C").triple == (1, 1, 0)
    assert SvoWeights.preset("S").triple == (1, 0, 1)
    assert SvoWeights.preset("SC").triple == (1, 1, 1)
    with pytest.raises(ValueError):
        SvoWeights.preset("XX")


lam = st.floats(0.0, 5.0)
comp = st.floats(-10.0, 10.0)


@settings(max_examples=300)
@given(comp, comp, comp, lam, lam, lam, st.floats(0.0, 5.0))
def test_linear_in_each_weight(re, rc, rs, le, lc, ls, bump):
    if le == lc == ls == 0:
        le = 1.0
    base = total_reward(re, rc, rs, SvoWeights(le, lc, ls)).total
    assert total_reward(re, rc, rs, SvoWeights(le + bump, lc, ls)).total == pytest.approx(base + bump * re, abs=1e-9)
    assert total_reward(re, rc, rs, SvoWeights(le, lc + bump, ls)).total == pytest.approx(base + bump * rc, abs=1e-9)
    assert total_reward(re, rc, rs, SvoWeights(le, lc, ls + bump)).total == pytest.approx(base + bump * rs, abs=1e-9)


veh = st.tuples(st.floats(0, 500), st.floats(-8, 4), st.floats(0, 40), st.floats(-5, 3), st.floats(-5, 3), st.booleans(), st.sampled_from([Kind.AV, Kind.HV]))


def _random_worlds(specs, mission_kind):
    before, after = [], []
    for i, (l, d, v, a0, a1, crash, kind) in enumerate(specs):
        kind = Kind.AV if i == 0 else kind
        before.append(vehicle(i, l=l, d=d, speed=v, accel=a0, kind=kind))
        after.append(vehicle(i, l=l, d=d, speed=v, accel=a1, kind=kind, crashed=crash))
    m = vehicle(len(specs), l=200.0, d=-6.0, speed=20.0, kind=mission_kind, is_mission=True)
    return world(before + [m], mission_status=MissionStatus.PENDING), world(after + [m], mission_status=MissionStatus.MERGED)


@settings(max_examples=200, deadline=None)
@given(st.lists(veh, min_size=1, max_size=6), st.sampled_from([Kind.AV, Kind.HV]), lam, lam, lam)
def test_rewards_bounded(specs, mission_kind, le, lc, ls):
    if le == lc == ls == 0:
        le = 1.0
    w = SvoWeights(le, lc, ls)
    b, a = _random_worlds(specs, mission_kind)
    ids = [v.id for v in b.vehicles]
    avs = tuple(i for i in ids if b.vehicle(i).kind is Kind.AV and not b.vehicle(i).is_mission)
    hvs = tuple(i for i in ids if b.vehicle(i).kind is Kind.HV)
    r = agent_reward(0, PerceptionSet(0, avs, hvs), b, a, w, RP)
    bound = le * RP.egoistic_bound + lc * RP.egoistic_bound + ls * (1 + 1 / (w.eta * RP.d_floor**w.psi))
    assert math.isfinite(r.total) and abs(r.total) <= bound + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(veh, min_size=1, max_size=6))
def test_egoistic_preset_equals_baseline(specs):
    b, a = _random_worlds(specs, Kind.HV)
    ids = tuple(v.id for v in b.vehicles)
    p = PerceptionSet(0, tuple(i for i in ids if b.vehicle(i).kind is Kind.AV), tuple(i for i in ids if b.vehicle(i).kind is Kind.HV))
    assert agent_reward(0, p, b, a, SvoWeights.preset("E"), RP).total == egoistic_reward(0, b, a, RP)


@settings(max_examples=200)
@given(st.floats(0.0, 40.0), st.floats(0.0, 200.0), st.floats(0.0, 50.0))
def test_sympathy_non_increasing_in_distance(speed, dist, extra):
    def r(d):
        me = vehicle(0, l=100.0)
        hv = vehicle(1, l=100.0 + d, speed=speed, kind=Kind.HV)
        b, a = pair([me, hv], [me, hv])
        return sympathetic_reward(0, PerceptionSet(0, (0,), (1,)), b, a, SvoWeights(1, 0, 1), RP)

    assert r(dist + extra) <= r(dist) + 1e-15
