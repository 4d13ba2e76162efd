"""EpisodeLog: JSON-lines trace, one record per decision step.

Records: a ``header`` (schema version, config hash, seed, full config), a
``step`` record per decision (``step == 0`` is the initial state), and an
``end`` record. Vehicle entries carry every field needed to rebuild the world.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from . import config as config_mod
from .dynamics import Kind, VehicleState
from .geometry import FrenetPose, build_merge_scenario

SCHEMA_VERSION = 1


class LogError(ValueError):
    pass


def vehicle_record(v: VehicleState, action=None) -> dict:
    return {
        "id": v.id,
        "kind": v.kind.value,
        "mission": v.is_mission,
        "l": v.frenet.l,
        "d": v.frenet.d,
        "lane": v.frenet.lane_index,
        "v": v.speed,
        "a": v.accel,
        "yaw": v.yaw,
        "x": v.x,
        "y": v.y,
        "steer": v.steering,
        "action": action,
        "length": v.length,
        "width": v.width,
        "target_speed": v.target_speed,
        "target_lane": v.target_lane,
        "desired_speed": v.desired_speed,
        "speed_integral": v.speed_integral,
        "prev_speed_error": v.prev_speed_error,
        "crashed": v.crashed,
        "exited": v.exited,
        "stopped": v.stopped,
    }


def vehicle_from_record(r: dict) -> VehicleState:
    return VehicleState(
        id=r["id"],
        kind=Kind(r["kind"]),
        x=r["x"],
        y=r["y"],
        yaw=r["yaw"],
        speed=r["v"],
        frenet=FrenetPose(r["l"], r["d"], r["lane"]),
        accel=r["a"],
        steering=r["steer"],
        length=r["length"],
        width=r["width"],
        is_mission=r["mission"],
        target_speed=r["target_speed"],
        target_lane=r["target_lane"],
        desired_speed=r["desired_speed"],
        speed_integral=r["speed_integral"],
        prev_speed_error=r["prev_speed_error"],
        crashed=r["crashed"],
        exited=r["exited"],
        stopped=r["stopped"],
    )


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


class EpisodeRecorder:
    """Collects records for one episode; ``lines`` is the serialized log."""

    def __init__(self, path=None, randomness_scale=None):
        self.path = Path(path) if path is not None else None
        self.randomness_scale = randomness_scale
        self.lines: list[str] = []

    def begin(self, world):
        cfg = world.config
        self.lines = []
        self.lines.append(
            _dumps(
                {
                    "record": "header",
                    "schema_version": SCHEMA_VERSION,
                    "config_hash": cfg.content_hash(),
                    "seed": world.seed,
                    "randomness_scale": self.randomness_scale
                    if self.randomness_scale is not None
                    else cfg.scenario.randomness_scale,
                    "mission_id": world.mission_id,
                    "desired_speeds": {str(v.id): v.desired_speed for v in world.vehicles if v.kind is Kind.HV},
                    "config": cfg.to_dict(),
                }
            )
        )
        self.lines.append(self._step_record(world, {}, None))

    def _step_record(self, world, actions, outcome):
        rewards = {}
        if outcome is not None:
            rewards = {str(a): dict(zip(("ego", "coop", "symp", "total"), r)) for a, r in outcome.rewards.items()}
        return _dumps(
            {
                "record": "step",
                "step": world.step_index,
                "t": world.t,
                "vehicles": [vehicle_record(v, actions.get(v.id)) for v in world.vehicles],
                "rewards": rewards,
                "mission_status": world.mission_status.value,
                "resolved_at": world.resolved_at,
                "terminal": world.terminal,
                "collisions": [list(p) for p in world.collisions],
            }
        )

    def record(self, before, after, actions, outcome):
        self.lines.append(self._step_record(after, {int(k): int(v) for k, v in actions.items()}, outcome))

    def end(self, world):
        crashed = any(v.crashed for v in world.vehicles)
        self.lines.append(
            _dumps(
                {
                    "record": "end",
                    "steps": world.step_index,
                    "mission_status": world.mission_status.value,
                    "crashed": crashed,
                }
            )
        )
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("\n".join(self.lines) + "\n")

    def text(self):
        return "\n".join(self.lines) + "\n"


@dataclass
class EpisodeLog:
    header: dict
    steps: list
    end: dict | None
    source: str = "<memory>"

    @property
    def config(self):
        return config_mod.from_dict(self.header["config"])

    @property
    def crashed(self):
        return any(s["collisions"] for s in self.steps)

    @property
    def mission_status(self):
        return self.steps[-1]["mission_status"]


_STEP_KEYS = ("step", "t", "vehicles", "rewards", "mission_status", "collisions")
_VEHICLE_KEYS = ("id", "kind", "l", "d", "lane", "v", "a", "yaw", "crashed")


def parse_lines(lines, source="<memory>") -> EpisodeLog:
    header, steps, end = None, [], None
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{source}: record {n}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogError(f"{where}: malformed JSON ({exc.msg})") from None
        if not isinstance(rec, dict) or "record" not in rec:
            raise LogError(f"{where}: missing record type")
        kind = rec["record"]
        if end is not None:
            raise LogError(f"{where}: record after end")
        if kind == "header":
            if header is not None or steps:
                raise LogError(f"{where}: unexpected header")
            if rec.get("schema_version") != SCHEMA_VERSION:
                raise LogError(f"{where}: schema version {rec.get('schema_version')} != {SCHEMA_VERSION}")
            header = rec
        elif kind == "step":
            if header is None:
                raise LogError(f"{where}: step before header")
            missing = [k for k in _STEP_KEYS if k not in rec]
            if missing:
                raise LogError(f"{where}: step missing {missing}")
            if rec["step"] != len(steps):
                raise LogError(f"{where}: expected step {len(steps)}, got {rec['step']}")
            for v in rec["vehicles"]:
                bad = [k for k in _VEHICLE_KEYS if k not in v]
                if bad:
                    raise LogError(f"{where}: vehicle entry missing {bad}")
            steps.append(rec)
        elif kind == "end":
            end = rec
        else:
            raise LogError(f"{where}: unknown record type {kind!r}")
    if header is None:
        raise LogError(f"{source}: no header record")
    if not steps:
        raise LogError(f"{source}: no step records")
    if end is None:
        raise LogError(f"{source}: record {len(steps) + 2}: truncated log (no end record)")
    return EpisodeLog(header, steps, end, source)


def read_log(path) -> EpisodeLog:
    path = Path(path)
    return parse_lines(path.read_text().splitlines(), str(path))


def world_from_record(log: EpisodeLog, step_rec: dict, cfg=None):
    """Rebuild the WorldState captured in one step record."""
    from .env import MissionStatus, WorldState

    cfg = cfg or log.config
    vehicles = [vehicle_from_record(r) for r in step_rec["vehicles"]]
    return WorldState(
        t=step_rec["t"],
        vehicles=vehicles,
        road=build_merge_scenario(cfg.scenario),
        mission_id=log.header["mission_id"],
        seed=log.header["seed"],
        config=cfg,
        mission_status=MissionStatus(step_rec["mission_status"]),
        resolved_at=step_rec.get("resolved_at"),
        step_index=step_rec["step"],
        terminal=step_rec.get("terminal", False),
        collisions=[tuple(p) for p in step_rec["collisions"]],
    )


def vehicle_fields():
    return [f.name for f in dataclasses.fields(VehicleState)]
