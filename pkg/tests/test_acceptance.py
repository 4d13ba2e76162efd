"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the per-criterion lines are
printed in the terminal summary. Criteria 6 and 7 need the desk-scale
checkpoints from ``artifacts/train_desk.sh``.
"""

import contextlib
import csv
import math
import re
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from svomerge import _accel
from svomerge import config as config_mod
from svomerge.cli import main as cli_main
from svomerge.config import ObservationConfig
from svomerge.drivers import IdmParams, idm_acceleration
from svomerge.dynamics import ControlInput, Kind, Limits, bicycle_step
from svomerge.env import MissionStatus, PerceptionSet
from svomerge.env import reset as env_reset
from svomerge.env import step as env_step
from svomerge.evalharness import SWEEP_COLUMNS, ExperimentSetup, run_experiment
from svomerge.geometry import straight_road
from svomerge.learn import ReplayBuffer, Transition
from svomerge.observe import pixel_value, render_occupancy
from svomerge.reward import RewardParams, SvoWeights, mission_reward, sympathetic_term, total_reward

from ._nets import TINY, constant_reward_q, fd_relative_error, n_params, overfit_steps
from ._sim import small_config, vehicle, world
from .conftest import SMOKE

ROOT = Path(__file__).resolve().parent.parent
ARTIFACTS = ROOT / "artifacts"
REPORT: list = []


@contextlib.contextmanager
def criterion(n, title, budget_s=None, cpu=False):
    """Record PASS/FAIL for criterion ``n``; ``budget_s`` bounds the (CPU or wall) runtime."""
    clock = time.process_time if cpu else time.perf_counter
    t0 = clock()
    notes: list = []
    try:
        yield notes
        took = clock() - t0
        if budget_s is not None:
            assert took < budget_s, f"runtime {took:.1f}s over the {budget_s}s budget"
    except BaseException as exc:
        took = clock() - t0
        REPORT.append(f"criterion {n} FAIL  {title} ({took:.1f}s): {str(exc).splitlines()[0][:300] if str(exc) else type(exc).__name__}")
        raise
    REPORT.append(f"criterion {n} PASS  {title} ({took:.1f}s){': ' + '; '.join(notes) if notes else ''}")


# ---- 1. encoders -------------------------------------------------------------------


def test_criterion_1_encoders():
    with criterion(1, "encoder properties", budget_s=5.0) as notes:
        rng = np.random.default_rng(0)
        v = rng.uniform(-60, 60, 10_000)
        v[:500] = rng.uniform(-0.5, 0.5, 500)
        z = pixel_value(v)
        assert np.all((z >= 0.0) & (z <= 1.0)), "pixel value outside [0, 1]"
        assert np.all(z[np.abs(v) < 0.5] == 1.0), "pixel value below 1 under the speed threshold"
        order = np.argsort(np.abs(v), kind="stable")
        assert np.all(np.diff(z[order]) <= 0.0), "pixel value increases with |relative speed|"
        notes.append(f"10000 speeds on the {_accel.backend()} backend")

        cfg = ObservationConfig()
        road = straight_road(3000.0, highway_lane_count=2)
        ego = vehicle(0, l=500.0, d=-2.0, lane=1, speed=20.0)
        others = [vehicle(i, l=500.0 + dl, d=2.0 if i % 2 else -2.0, lane=i % 2, speed=15.0, kind=Kind.HV)
                  for i, dl in enumerate((-30.0, -12.0, 25.0, 60.0), start=1)]
        mission = vehicle(9, l=2900.0, speed=0.0, is_mission=True)
        occ = render_occupancy(world([ego, *others, mission], road=road), 0,
                               PerceptionSet(0, (0,), tuple(o.id for o in others)), cfg)
        occupied = occ[..., 0] == 1.0
        assert occupied.sum() == 5, f"expected 5 occupied cells, got {occupied.sum()}"
        assert not occ[~occupied].any(), "empty cells carry non-zero features"
        notes.append(f"{(~occupied).sum()} empty occupancy cells all zero")


# ---- 2. reward -----------------------------------------------------------------------


def _random_rollout(cfg, seed):
    rng = np.random.default_rng(seed)
    w = env_reset(cfg, seed)
    worlds, outcomes = [w], []
    while not w.terminal:
        w, out = env_step(w, {a: int(rng.integers(5)) for a in w.agent_ids()})
        worlds.append(w)
        outcomes.append(out)
    return worlds, outcomes


def test_criterion_2_reward():
    with criterion(2, "reward properties", budget_s=30.0) as notes:
        cfg = small_config(n_avs=2, n_hvs=2)
        cfg.reward.preset = "E"
        rng = np.random.default_rng(1)
        merged = steps = 0
        for seed in range(100):
            worlds, outcomes = _random_rollout(cfg, seed)
            emitted = sum(mission_reward(b.mission, (b.mission_status, a.mission_status)) for b, a in zip(worlds, worlds[1:]))
            ok = worlds[-1].mission_status is MissionStatus.MERGED
            merged += ok
            assert emitted == int(ok), f"seed {seed}: mission reward emitted {emitted} times"
            for out in outcomes:
                for r_e, r_c, r_s, total in out.rewards.values():
                    steps += 1
                    assert total == r_e, "E preset total differs from the egoistic term"
                    w1, w2 = rng.uniform(0, 2, 3) + 1e-3, rng.uniform(0, 2, 3) + 1e-3
                    a, b = rng.uniform(0.1, 2, 2)
                    mix = total_reward(r_e, r_c, r_s, SvoWeights(*(a * w1 + b * w2))).total
                    parts = a * total_reward(r_e, r_c, r_s, SvoWeights(*w1)).total + b * total_reward(r_e, r_c, r_s, SvoWeights(*w2)).total
                    assert mix == pytest.approx(parts, rel=1e-9, abs=1e-9), "total reward not linear in the weights"
        assert merged > 0, "no random episode merged; the once-per-merge check is vacuous"
        notes.append(f"{merged}/100 random episodes merged with the mission reward emitted once each")
        notes.append(f"linearity and egoistic reduction on {steps} agent-steps")

        params, w = RewardParams(), SvoWeights(1.0, 1.0, 1.0)
        for u in (0.0, 0.3, 1.0):
            s_d = [sympathetic_term(u, d, 0, w, params) for d in np.linspace(0.0, 300.0, 601)]
            assert np.all(np.diff(s_d) <= 0.0), "sympathy term grows with distance"


# ---- 3. dynamics and drivers ----------------------------------------------------------


def test_criterion_3_dynamics_drivers():
    with criterion(3, "dynamics and driver checks", budget_s=60.0) as notes:
        lim = Limits()
        worst = 0.0
        for steer in (0.02, 0.1, 0.3):
            for speed in (5.0, 15.0, 30.0):
                v = vehicle(speed=speed)
                dt, n = 1.0 / 15, 150
                for _ in range(n):
                    v = bicycle_step(v, ControlInput(0.0, steer), dt, lim)
                radius = lim.wheelbase / math.tan(steer)
                arc = speed * dt * n
                theta = arc / radius
                ex, ey = radius * math.sin(theta), radius * (1 - math.cos(theta))
                worst = max(worst, math.hypot(v.x - ex, v.y - ey) / arc)
        assert worst < 0.01, f"arc error {worst:.2e}"
        notes.append(f"arc error {worst:.1e}")

        p = IdmParams()
        residual = 0.0
        for v in np.linspace(0.5, p.desired_speed - 0.5, 60):
            ego = vehicle(0, l=0.0, speed=v, kind=Kind.HV)
            lead = vehicle(1, l=p.equilibrium_gap(v) + ego.length, speed=v, kind=Kind.HV)
            residual = max(residual, abs(idm_acceleration(ego, lead, p)))
        assert residual < 1e-9, f"equilibrium residual {residual:.1e}"
        notes.append(f"IDM residual {residual:.1e}")

        # perturbed platoon behind a leader that brakes and recovers
        rng = np.random.default_rng(3)
        n, dt, length = 100, 1.0 / 15, 5.0
        speed = rng.uniform(15.0, 25.0, n)
        gaps = np.array([p.equilibrium_gap(s) for s in speed]) * rng.uniform(0.8, 1.5, n)
        pos = -np.cumsum(gaps + length)
        v0 = np.clip(rng.normal(25.0, 2.0, n), 20.0, 30.0)
        min_gap = np.inf
        for k in range(10_000):
            g = np.empty(n)
            g[1:] = pos[:-1] - pos[1:] - length
            g[0] = 1.0
            dv = np.zeros(n)
            dv[1:] = speed[1:] - speed[:-1]
            acc = _accel.idm_accelerations(speed, v0, g, dv, np.arange(n) > 0, p.a_max, p.b_comf, p.time_headway,
                                           p.jam_distance, p.exponent, p.b_emergency)
            acc[0] = 2.0 * math.sin(2 * math.pi * k * dt / 60.0)
            new = np.clip(speed + acc * dt, 0.0, None)
            pos = pos + 0.5 * (speed + new) * dt
            speed = new
            min_gap = min(min_gap, float(np.min(pos[:-1] - pos[1:] - length)))
            assert min_gap > 0.0, f"collision at step {k}"
        notes.append(f"100-vehicle platoon, min gap {min_gap:.2f} m over 10000 steps")


# ---- 4. learning mechanics -------------------------------------------------------------


def test_criterion_4_learning():
    with criterion(4, "learning mechanics", budget_s=600.0, cpu=True) as notes:
        from svomerge.learn import build_network

        assert n_params(build_network(TINY)) >= 100
        err = max(fd_relative_error(seed) for seed in range(3))
        assert err < 1e-4, f"finite-difference relative error {err:.1e}"
        notes.append(f"FD rel err {err:.1e} over {n_params(build_network(TINY))} params x 3 seeds")

        steps = overfit_steps()
        assert steps is not None, "single-batch TD loss stayed above 1e-3 for 5000 steps"
        notes.append(f"overfit in {steps} steps")

        q = constant_reward_q()
        assert np.all(np.abs(q - 20.0) <= 1.0), f"Q fixed point {q}"
        notes.append(f"Q in [{q.min():.2f}, {q.max():.2f}]")

        buf = ReplayBuffer(3, (1, 4, 4), 2)
        fid = buf.add_frame(np.zeros((1, 4, 4), np.float32))
        for r in (-math.log(2.0), math.log(2.0), math.log(5.0)):
            buf.push(Transition((fid, fid), 0, 0.0, (fid, fid), False, r, 1e9))
        expect = buf.probabilities()
        counts = np.bincount(buf.sample_indices(30_000, np.random.default_rng(4)), minlength=3)
        pval = stats.chisquare(counts, expect * 30_000).pvalue
        assert pval > 0.01, f"chi-square p = {pval:.3g}"
        notes.append(f"chi-square p {pval:.2f}")


# ---- 5. determinism -------------------------------------------------------------------


def _run_cli(argv):
    code = cli_main([str(a) for a in argv])
    assert code == 0, f"svomerge {' '.join(map(str, argv))} exited {code}"


def test_criterion_5_determinism(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SVOMERGE_OUTPUT_ROOT", str(tmp_path))
    with criterion(5, "byte-identical logs and metrics") as notes:
        for tag in ("a", "b"):
            _run_cli(["train", "--config", SMOKE, "--iterations", 100, "--output", tmp_path / f"train_{tag}"])
            _run_cli(["eval", "--checkpoint", tmp_path / f"train_{tag}" / "checkpoint.pt", "--episodes", 3,
                      "--workers", 1, "--output", tmp_path / f"eval_{tag}"])
        a, b = tmp_path / "train_a" / "metrics.csv", tmp_path / "train_b" / "metrics.csv"
        assert len(a.read_text().splitlines()) == 101
        assert a.read_bytes() == b.read_bytes(), "training metrics differ"
        logs_a = sorted((tmp_path / "eval_a" / "logs").iterdir())
        logs_b = sorted((tmp_path / "eval_b" / "logs").iterdir())
        assert [p.name for p in logs_a] == [p.name for p in logs_b]
        for x, y in zip(logs_a, logs_b):
            assert x.read_bytes() == y.read_bytes(), f"{x.name} differs"
        notes.append(f"100-iteration metrics and {len(logs_a)} episode logs identical")
    capsys.readouterr()


# ---- 6, 7. desk-scale trend and generalization ------------------------------------------


def _desk_checkpoint(preset):
    path = ARTIFACTS / f"reduced_{preset}" / "checkpoint.pt"
    assert path.is_file(), f"{path} missing; run artifacts/train_desk.sh first"
    return path


def _train_cpu_seconds():
    log = ARTIFACTS / "train_desk.log"
    if not log.is_file():
        return {}
    return {m[1]: float(m[2]) for m in re.finditer(r"preset=(\w+) rc=0 cpu_s=(\d+)", log.read_text())}


def _desk_eval(preset, randomness, episodes=200):
    cfg = config_mod.load(ROOT / "configs" / f"reduced_{preset.lower()}.yaml")
    setup = ExperimentSetup(svo_preset=preset, randomness_scale=randomness, episodes=episodes,
                            checkpoint=_desk_checkpoint(preset.lower()), base_seed=cfg.evaluation.seed)
    out = ARTIFACTS / "eval" / setup.id
    if (out / "summary.csv").exists():
        (out / "summary.csv").unlink()
    metrics, _ = run_experiment(setup, cfg, out_dir=out, write_logs=False)
    return metrics


def test_criterion_6_trend():
    with criterion(6, "SC beats E at desk scale") as notes:
        from svomerge.learn import load_checkpoint

        cpu = _train_cpu_seconds()
        for p in ("e", "sc"):
            blob = load_checkpoint(_desk_checkpoint(p))
            cfg = config_mod.load(ROOT / "configs" / f"reduced_{p}.yaml")
            assert blob["config_hash"] == cfg.content_hash(), f"reduced_{p} checkpoint was trained on another config"
            assert blob["state"]["iteration"] == cfg.training.iterations, f"reduced_{p} training incomplete"
            assert p in cpu, f"no training time recorded for {p} in train_desk.log"
            assert cpu[p] <= 7200, f"{p} training took {cpu[p]:.0f} CPU s"
        e = _desk_eval("E", 1.0)
        sc = _desk_eval("SC", 1.0)
        summary = (f"E success {e.merge_success_rate:.1f}% crash {e.crash_rate:.1f}%, "
                   f"SC success {sc.merge_success_rate:.1f}% crash {sc.crash_rate:.1f}% over 200 episodes")
        notes.append(summary)
        assert sc.merge_success_rate >= e.merge_success_rate + 15.0, f"success gap under 15 pp ({summary})"
        assert sc.crash_rate <= e.crash_rate, f"SC crashes more often ({summary})"


def test_criterion_7_generalization():
    with criterion(7, "SC at randomness 4") as notes:
        m = _desk_eval("SC", 4.0)
        row = m.as_row()
        assert m.episodes == 200 and all(np.isfinite(list(row.values())))
        notes.append(", ".join(f"{k}={v:.1f}" for k, v in row.items()))


# ---- 8. sweep --------------------------------------------------------------------------


def test_criterion_8_sweep(tmp_path, capsys):
    with criterion(8, "three-point sympathy sweep CSV") as notes:
        out = tmp_path / "sweep"
        _run_cli(["sweep", "--config", SMOKE, "--lambda-e", 1, "--lambda-c", 1, "--lambda-s", "0,0.5,1",
                  "--train", "--episodes", 3, "--output", out])
        with open(out / "sweep.csv", newline="") as fh:
            reader = csv.DictReader(fh)
            assert tuple(reader.fieldnames) == SWEEP_COLUMNS
            rows = list(reader)
        assert [float(r["lambda_s"]) for r in rows] == [0.0, 0.5, 1.0]
        for r in rows:
            assert r["error"] == "", r["error"]
            for k in ("C", "MF", "success"):
                assert 0.0 <= float(r[k]) <= 100.0
            assert math.isfinite(float(r["DT"])) and int(r["episodes"]) == 3
        notes.append(f"{len(rows)} rows, columns {','.join(SWEEP_COLUMNS[:4])},...")
    capsys.readouterr()
