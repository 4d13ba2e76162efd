"""Greedy evaluation of trained policies, metric aggregation, and the SVO sweep."""

from __future__ import annotations

import csv
import logging
import multiprocessing as mp
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import config as config_mod
from .config import PRESETS, ConfigError
from .env import MergeEnv
from .episode_log import EpisodeLog, EpisodeRecorder, parse_lines
from .learn.checkpoint import CheckpointError, load_checkpoint, network_from_checkpoint
from .learn.network import ArchDescriptor
from .learn.trainer import History
from .reward import SvoWeights

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = (
    "setup_id",
    "mission_kind",
    "preset",
    "lambda_e",
    "lambda_c",
    "lambda_s",
    "randomness",
    "episodes",
    "C",
    "MF",
    "success",
    "DT",
    "config_hash",
)
TRAJECTORY_COLUMNS = ("episode", "t", "l", "d", "v")


class EvalError(RuntimeError):
    pass


@dataclass
class ExperimentSetup:
    mission_kind: str = "hv"
    svo_preset: str | SvoWeights = "SC"
    randomness_scale: float = 1.0
    episodes: int = 100
    seeds: tuple | None = None
    checkpoint: str | Path | None = None
    setup_id: str | None = None
    base_seed: int = 10_000

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episode count must be >= 1")
        if self.mission_kind not in ("hv", "av"):
            raise ValueError("mission_kind must be 'hv' or 'av'")
        if isinstance(self.svo_preset, str) and self.svo_preset not in PRESETS:
            raise ValueError(f"unknown preset {self.svo_preset!r}; valid: {', '.join(PRESETS)}")
        if self.seeds is None:
            self.seeds = tuple(self.base_seed + i for i in range(self.episodes))
        self.seeds = tuple(int(s) for s in self.seeds)
        if len(self.seeds) != self.episodes:
            raise ValueError("need exactly one seed per episode")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")

    @property
    def weights(self) -> SvoWeights:
        if isinstance(self.svo_preset, SvoWeights):
            return self.svo_preset
        return SvoWeights.preset(self.svo_preset)

    @property
    def preset_name(self):
        return self.svo_preset if isinstance(self.svo_preset, str) else "custom"

    @property
    def id(self):
        return self.setup_id or f"{self.mission_kind}-{self.preset_name}-r{self.randomness_scale:g}"


@dataclass
class EpisodeResult:
    crashed: bool
    mission_status: str
    distance: float
    steps: int


@dataclass
class Metrics:
    crash_rate: float
    merge_fail_rate: float
    merge_success_rate: float
    distance_traveled: float
    episodes: int
    per_episode: list = field(default_factory=list)

    @property
    def unresolved_rate(self):
        """Share of episodes that ended in a crash before the merge resolved."""
        return 100.0 - self.merge_success_rate - self.merge_fail_rate

    def as_row(self):
        return {
            "C": self.crash_rate,
            "MF": self.merge_fail_rate,
            "success": self.merge_success_rate,
            "DT": self.distance_traveled,
        }


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------


def episode_result(ep: EpisodeLog) -> EpisodeResult:
    """Distance is Frenet l travelled per vehicle; a crashed vehicle counts up to its crash step."""
    first = {v["id"]: v["l"] for v in ep.steps[0]["vehicles"]}
    last = {}
    for step in ep.steps:
        for v in step["vehicles"]:
            if v["id"] not in last or not last[v["id"]]["crashed"]:
                last[v["id"]] = v
    dists = [last[i]["l"] - first[i] for i in first]
    return EpisodeResult(
        crashed=ep.crashed,
        mission_status=ep.mission_status,
        distance=float(np.mean(dists)) if dists else 0.0,
        steps=len(ep.steps) - 1,
    )


def aggregate(logs) -> Metrics:
    """Metrics over a list of EpisodeLogs; rates are percentages of the episode count."""
    logs = list(logs)
    if not logs:
        raise EvalError("no episodes to aggregate")
    results = []
    for ep in logs:
        if not isinstance(ep, EpisodeLog):
            raise EvalError(f"not an EpisodeLog: {type(ep).__name__}")
        try:
            results.append(episode_result(ep))
        except (KeyError, IndexError, TypeError) as exc:
            raise EvalError(f"{ep.source}: malformed record ({exc})") from None
    n = len(results)
    return Metrics(
        crash_rate=100.0 * sum(r.crashed for r in results) / n,
        merge_fail_rate=100.0 * sum(r.mission_status == "Failed" for r in results) / n,
        merge_success_rate=100.0 * sum(r.mission_status == "Merged" for r in results) / n,
        distance_traveled=float(np.mean([r.distance for r in results])),
        episodes=n,
        per_episode=results,
    )


def mission_trajectory(ep: EpisodeLog, episode: int):
    mid = ep.header["mission_id"]
    rows = []
    for step in ep.steps:
        for v in step["vehicles"]:
            if v["id"] == mid:
                rows.append((episode, step["t"], v["l"], v["d"], v["v"]))
    return rows


# --------------------------------------------------------------------------
# rollouts
# --------------------------------------------------------------------------


def greedy_episode(cfg, net, seed, randomness_scale) -> str:
    """Play one episode with every agent acting greedily on the shared network; returns the log text."""
    rec = EpisodeRecorder(randomness_scale=randomness_scale)
    env = MergeEnv(cfg, randomness_scale=randomness_scale, recorder=rec)
    obs = env.reset(seed)
    n = net.desc.frames
    hist = {a: History(n) for a in obs}
    for a, f in obs.items():
        hist[a].push(f)
    done = False
    while not done:
        agents = env.agents
        if agents:
            x = torch.as_tensor(np.stack([hist[a].stack() for a in agents]))
            with torch.no_grad():
                q = net(x).numpy()
            actions = {a: int(np.argmax(q[i])) for i, a in enumerate(agents)}
        else:
            actions = {}
        obs, _, _, done, _ = env.step(actions)
        for a, f in obs.items():
            hist[a].push(f)
    return rec.text()


_WORKER_CACHE: dict = {}


def _worker(args):
    cfg_dict, blob_path, seed, scale = args
    torch.set_num_threads(1)
    if blob_path not in _WORKER_CACHE:
        _WORKER_CACHE.clear()
        _WORKER_CACHE[blob_path] = (config_mod.from_dict(cfg_dict), network_from_checkpoint(load_checkpoint(blob_path)))
    cfg, net = _WORKER_CACHE[blob_path]
    return greedy_episode(cfg, net, seed, scale)


def eval_config(cfg, setup: ExperimentSetup):
    """``cfg`` with the setup's mission kind and reward weights bound in (rewards are logged, not scored)."""
    w = setup.weights
    data = cfg.to_dict()
    data["scenario"]["mission_kind"] = setup.mission_kind
    data["reward"].update(preset=None, lambda_e=w.lambda_e, lambda_c=w.lambda_c, lambda_s=w.lambda_s)
    data["evaluation"]["randomness"] = setup.randomness_scale
    data["evaluation"]["episodes"] = setup.episodes
    return config_mod.from_dict(data)


def check_checkpoint(blob, cfg, setup: ExperimentSetup):
    expect = ArchDescriptor.from_config(cfg.training.architecture)
    got = ArchDescriptor.from_config(blob["arch"])
    if got != expect:
        raise EvalError(f"checkpoint architecture does not match the config: {got} vs {expect}")
    svo = blob.get("svo")
    if svo is not None and tuple(float(x) for x in svo) != setup.weights.triple:
        raise EvalError(
            f"checkpoint was trained with SVO weights {tuple(svo)} but the setup asks for {setup.weights.triple}; "
            "presets bind at training time"
        )


def run_experiment(setup: ExperimentSetup, cfg=None, out_dir=None, workers=1, write_logs=True):
    """Greedy rollouts for every seed; returns ``(Metrics, logs)``."""
    if setup.checkpoint is None:
        raise EvalError("setup has no checkpoint")
    blob = load_checkpoint(setup.checkpoint)
    if cfg is None:
        cfg = config_mod.from_dict(blob["config"])
    cfg = eval_config(cfg, setup)
    check_checkpoint(blob, cfg, setup)
    net = network_from_checkpoint(blob)
    if workers > 1:
        jobs = [(cfg.to_dict(), str(setup.checkpoint), s, setup.randomness_scale) for s in setup.seeds]
        ctx = mp.get_context("spawn")
        with ctx.Pool(workers) as pool:
            texts = pool.map(_worker, jobs, chunksize=max(len(jobs) // (4 * workers), 1))
    else:
        torch.set_num_threads(max(cfg.training.torch_threads, 1))
        texts = [greedy_episode(cfg, net, s, setup.randomness_scale) for s in setup.seeds]
    logs = [parse_lines(t.splitlines(), f"episode {i}") for i, t in enumerate(texts)]
    metrics = aggregate(logs)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if write_logs:
            log_dir = out / "logs"
            log_dir.mkdir(exist_ok=True)
            for i, (seed, text) in enumerate(zip(setup.seeds, texts)):
                (log_dir / f"episode_{i:05d}_seed{seed}.jsonl").write_text(text)
        append_summary(out / "summary.csv", [summary_row(setup, metrics, cfg.content_hash())])
        if cfg.evaluation.export_trajectories:
            rows = [r for i, ep in enumerate(logs) for r in mission_trajectory(ep, i)]
            write_csv(out / "mission_trajectories.csv", TRAJECTORY_COLUMNS, rows)
    return metrics, logs


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------


def summary_row(setup: ExperimentSetup, m: Metrics, config_hash: str) -> dict:
    w = setup.weights
    return {
        "setup_id": setup.id,
        "mission_kind": setup.mission_kind,
        "preset": setup.preset_name,
        "lambda_e": w.lambda_e,
        "lambda_c": w.lambda_c,
        "lambda_s": w.lambda_s,
        "randomness": setup.randomness_scale,
        "episodes": m.episodes,
        "C": round(m.crash_rate, 4),
        "MF": round(m.merge_fail_rate, 4),
        "success": round(m.merge_success_rate, 4),
        "DT": round(m.distance_traveled, 4),
        "config_hash": config_hash,
    }


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        w.writerows(rows)


def append_summary(path, rows, columns=SUMMARY_COLUMNS):
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        if new:
            w.writeheader()
        for r in rows:
            w.writerow(r)


# --------------------------------------------------------------------------
# SVO sweep
# --------------------------------------------------------------------------

SWEEP_COLUMNS = SUMMARY_COLUMNS + ("checkpoint", "error")


def sweep_point_id(w: SvoWeights):
    return f"E{w.lambda_e:g}_C{w.lambda_c:g}_S{w.lambda_s:g}"


def svo_sweep(lambda_grid, base_setup: ExperimentSetup, cfg, checkpoints, out_csv=None, train_dir=None, workers=1):
    """Evaluate one checkpoint per grid point; a failing point records its error and the sweep continues.

    ``checkpoints`` maps ``(λE, λC, λS)`` to a path, or is a callable returning one.
    With ``train_dir`` set, missing checkpoints are trained first.
    """
    grid = [tuple(float(x) for x in g) for g in lambda_grid]
    if not grid:
        raise ValueError("sweep grid is empty")
    rows = []
    for triple in grid:
        w = SvoWeights(*triple, eta=cfg.reward.eta, psi=cfg.reward.psi)
        setup = ExperimentSetup(
            mission_kind=base_setup.mission_kind,
            svo_preset=w,
            randomness_scale=base_setup.randomness_scale,
            episodes=base_setup.episodes,
            seeds=base_setup.seeds,
            setup_id=sweep_point_id(w),
        )
        ckpt = checkpoints(triple) if callable(checkpoints) else (checkpoints or {}).get(triple)
        row = {k: "" for k in SWEEP_COLUMNS}
        row.update(
            setup_id=setup.id, mission_kind=setup.mission_kind, preset="custom",
            lambda_e=w.lambda_e, lambda_c=w.lambda_c, lambda_s=w.lambda_s,
            randomness=setup.randomness_scale, episodes=setup.episodes,
        )
        try:
            if (ckpt is None or not Path(ckpt).exists()) and train_dir is not None:
                ckpt = train_point(cfg, triple, Path(train_dir) / setup.id)
            if ckpt is None or not Path(ckpt).exists():
                raise FileNotFoundError(f"no checkpoint for {triple}")
            setup.checkpoint = ckpt
            metrics, _ = run_experiment(setup, cfg, workers=workers)
            row.update(summary_row(setup, metrics, eval_config(cfg, setup).content_hash()))
            row["preset"] = "custom"
            row["checkpoint"] = str(ckpt)
        except (OSError, EvalError, CheckpointError, ConfigError, ValueError) as exc:
            log.warning("sweep point %s failed: %s", triple, exc)
            row["error"] = str(exc).replace("\n", " ")
        rows.append(row)
    if out_csv is not None:
        append_summary(out_csv, rows, SWEEP_COLUMNS)
    return rows


def train_point(cfg, triple, out_dir):
    from .learn.trainer import Trainer

    data = cfg.to_dict()
    data["reward"].update(preset=None, lambda_e=triple[0], lambda_c=triple[1], lambda_s=triple[2])
    point_cfg = config_mod.from_dict(data)
    return Trainer(point_cfg, out_dir).run()


__all__ = [
    "EvalError",
    "ExperimentSetup",
    "Metrics",
    "aggregate",
    "run_experiment",
    "svo_sweep",
]
