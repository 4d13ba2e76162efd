"""Command-line entry points: train, eval, sweep, replay.

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 numerical failure.
Errors print a single ``error: <kind>: <reason>`` line on stderr.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import os
import sys
from pathlib import Path

from . import config as config_mod
from .config import PRESETS, ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("svomerge")


def output_root():
    return Path(os.environ.get("SVOMERGE_OUTPUT_ROOT", "runs"))


def worker_count(flag, cfg):
    if flag is not None:
        return int(flag)
    env = os.environ.get("SVOMERGE_WORKERS")
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            raise ConfigError(f"SVOMERGE_WORKERS={env!r}: expected an integer") from None
    return cfg.evaluation.workers


def fresh_dir(prefix: str) -> Path:
    """New timestamped directory under the output root; never reuses an existing one."""
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    base = output_root() / f"{prefix}-{stamp}"
    path, i = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{i}")
        i += 1
    path.mkdir(parents=True)
    return path


def _load_config(args, base=None):
    overrides = list(args.set or [])
    if args.config is None and base is not None:
        data = dict(base)
        for item in overrides:
            key, value = config_mod.parse_override(item)
            config_mod._set_path(data, key, value)
        return config_mod.from_dict(data)
    return config_mod.load(args.config, overrides)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_train(args):
    from .learn.trainer import Trainer

    cfg = _load_config(args)
    if args.seed is not None:
        cfg = config_mod.with_updates(cfg, seed=args.seed)
    if args.resume:
        if args.output is None:
            raise ConfigError("--resume needs --output pointing at the run directory")
        out = Path(args.output)
    else:
        out = Path(args.output) if args.output else fresh_dir("train")
        if (out / Trainer.CHECKPOINT).exists():
            raise ConfigError(f"{out} already holds a run; use --resume or a new --output")
    trainer = Trainer(cfg, out, resume=args.resume)
    path = trainer.run(args.iterations)
    print(f"checkpoint={path} iterations={trainer.state.iteration} config_hash={cfg.content_hash()}")
    return EXIT_OK


def _preset(args, blob):
    preset = args.preset or blob.get("preset")
    if preset is None:
        raise ConfigError("checkpoint records no preset; pass --preset")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; valid presets: {', '.join(PRESETS)}")
    return preset


def cmd_eval(args):
    from .evalharness import ExperimentSetup, run_experiment
    from .learn.checkpoint import load_checkpoint

    blob = load_checkpoint(args.checkpoint)
    cfg = _load_config(args, base=blob.get("config"))
    preset = _preset(args, blob)
    episodes = args.episodes or cfg.evaluation.episodes
    randomness = args.randomness if args.randomness is not None else cfg.evaluation.randomness
    base_seed = args.seed if args.seed is not None else cfg.evaluation.seed
    setup = ExperimentSetup(
        mission_kind=args.mission or cfg.scenario.mission_kind,
        svo_preset=preset,
        randomness_scale=randomness,
        episodes=episodes,
        checkpoint=args.checkpoint,
        base_seed=base_seed,
    )
    out = Path(args.output) if args.output else fresh_dir(f"eval-{setup.id}")
    out.mkdir(parents=True, exist_ok=True)
    metrics, _ = run_experiment(setup, cfg, out_dir=out, workers=worker_count(args.workers, cfg), write_logs=not args.no_logs)
    print(
        f"setup={setup.id} episodes={metrics.episodes} C={metrics.crash_rate:.2f} MF={metrics.merge_fail_rate:.2f} "
        f"success={metrics.merge_success_rate:.2f} DT={metrics.distance_traveled:.2f} out={out}"
    )
    return EXIT_OK


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_sweep(args):
    from .evalharness import ExperimentSetup, svo_sweep, sweep_point_id
    from .reward import SvoWeights

    cfg = _load_config(args)
    grid = [(e, c, s) for e in _floats(args.lambda_e) for c in _floats(args.lambda_c) for s in _floats(args.lambda_s)]
    if not grid:
        raise ConfigError("sweep grid is empty")
    out = Path(args.output) if args.output else fresh_dir("sweep")
    out.mkdir(parents=True, exist_ok=True)
    ckpt_root = Path(args.checkpoints) if args.checkpoints else out / "points"

    def checkpoint_for(triple):
        return ckpt_root / sweep_point_id(SvoWeights(*triple)) / "checkpoint.pt"

    base = ExperimentSetup(
        mission_kind=args.mission or cfg.scenario.mission_kind,
        svo_preset="E",
        randomness_scale=args.randomness if args.randomness is not None else 1.0,
        episodes=args.episodes or cfg.evaluation.episodes,
        base_seed=args.seed if args.seed is not None else cfg.evaluation.seed,
    )
    rows = svo_sweep(
        grid, base, cfg, checkpoint_for, out_csv=out / "sweep.csv",
        train_dir=ckpt_root if args.train else None, workers=worker_count(args.workers, cfg),
    )
    for r in rows:
        status = f"error={r['error']}" if r["error"] else f"C={r['C']} MF={r['MF']} success={r['success']} DT={r['DT']}"
        print(f"point={r['setup_id']} {status}")
    print(f"sweep_csv={out / 'sweep.csv'}")
    return EXIT_OK


def cmd_replay(args):
    from . import observe
    from .env import perception_set
    from .episode_log import read_log, world_from_record

    ep = read_log(args.log)
    cfg = ep.config
    dump = Path(args.dump_frames) if args.dump_frames else None
    if dump is not None:
        dump.mkdir(parents=True, exist_ok=True)
    h = ep.header
    print(f"# log={ep.source} seed={h['seed']} config_hash={h['config_hash']} mission_id={h['mission_id']}")
    for rec in ep.steps:
        parts = [f"step={rec['step']}", f"t={rec['t']:g}", f"mission={rec['mission_status']}"]
        for v in rec["vehicles"]:
            act = "" if v.get("action") is None else f" a={v['action']}"
            flag = " crashed" if v["crashed"] else ""
            parts.append(f"[{v['id']}:{v['kind']} lane={v['lane']} l={v['l']:.2f} d={v['d']:.2f} v={v['v']:.2f}{act}{flag}]")
        print(" ".join(parts))
        if dump is not None and cfg.observation.kind == "velocity_map":
            world = world_from_record(ep, rec, cfg)
            for aid in world.agent_ids(live_only=False):
                if args.agent is not None and aid != args.agent:
                    continue
                planes = observe.render(world, aid, perception_set(world, aid), cfg.observation)
                for name, plane in zip(("av", "hv", "road", "mission"), planes):
                    observe.write_pgm(dump / f"step{rec['step']:04d}_agent{aid}_{name}.pgm", plane)
    print(f"# end steps={ep.end['steps']} mission={ep.end['mission_status']} crashed={ep.end['crashed']}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser and error mapping
# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="svomerge", description="Socially-aware autonomous merging: train, evaluate, sweep, replay.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        sp.add_argument("--output", help="output directory (default: timestamped under $SVOMERGE_OUTPUT_ROOT)")
        sp.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="semi-sequential DQN training")
    common(t)
    t.add_argument("--resume", action="store_true", help="continue from OUTPUT/checkpoint.pt")
    t.add_argument("--iterations", type=int, help="stop after this many iterations (default: config)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int)
    e.add_argument("--preset", help=f"one of {', '.join(PRESETS)} (default: the checkpoint's)")
    e.add_argument("--mission", choices=("hv", "av"))
    e.add_argument("--randomness", type=float)
    e.add_argument("--workers", type=int)
    e.add_argument("--no-logs", action="store_true", help="skip per-episode log files")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="SVO sweep over reward weights")
    common(s)
    s.add_argument("--lambda-e", default="1")
    s.add_argument("--lambda-c", default="1")
    s.add_argument("--lambda-s", default="0,0.5,1")
    s.add_argument("--checkpoints", help="directory with one <point>/checkpoint.pt per grid point")
    s.add_argument("--train", action="store_true", help="train missing grid points first")
    s.add_argument("--episodes", type=int)
    s.add_argument("--mission", choices=("hv", "av"))
    s.add_argument("--randomness", type=float)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("replay", help="print a logged episode and optionally dump VelocityMap frames")
    r.add_argument("log")
    r.add_argument("--dump-frames", metavar="DIR")
    r.add_argument("--agent", type=int, help="only dump frames for this agent")
    r.set_defaults(func=cmd_replay)
    return p


def _fail(kind, code, exc):
    msg = " ".join(str(exc).split()) or exc.__class__.__name__
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    from .episode_log import LogError
    from .evalharness import EvalError
    from .learn.checkpoint import CheckpointError
    from .learn.trainer import TrainError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except (TrainError, EvalError) as exc:
        return _fail("config", EXIT_CONFIG, exc)
    except FloatingPointError as exc:
        return _fail("numeric", EXIT_NUMERIC, exc)
    except (OSError, LogError, CheckpointError) as exc:
        return _fail("io", EXIT_IO, exc)


if __name__ == "__main__":
    sys.exit(main())
