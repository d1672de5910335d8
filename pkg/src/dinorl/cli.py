"""Command-line entry point: ``dinorl train|eval|compare|render-rollout``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .agents import AgentKind, greedy
from .config import load_config
from .env import Action, EnvConfig
from .errors import ConfigError, DinoError
from .harness import (MetricsLog, Trainer, checkpoint_load, checkpoint_save, compare_runs, epoch_averages,
                      epochs_csv, episode_seeds, evaluate_greedy, play_episode, render_summary, render_table,
                      summarize)
from .nn import MAGIC, load_weights, save_weights
from .raster import write_pgm

log = logging.getLogger("dinorl")

METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "checkpoint.ckpt"
WEIGHTS_FILE = "weights.bin"
SUMMARY_FILE = "summary.csv"
EPOCHS_FILE = "epochs.csv"


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {text!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dinorl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an agent and write metrics, checkpoint and summary")
    p.add_argument("--agent", required=True, choices=[k.value for k in AgentKind])
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--timesteps", type=_positive_int, required=True)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--config", type=Path, help="key=value file overriding training/environment defaults")
    p.add_argument("--checkpoint-every", type=_positive_int, default=None)
    p.add_argument("--resume", type=Path, help="continue from a checkpoint file")

    p = sub.add_parser("eval", help="greedy evaluation of saved weights")
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--episodes", type=_positive_int, default=10)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("compare", help="Table-1 style summary over several run directories")
    p.add_argument("run_dirs", nargs="+", type=Path)
    p.add_argument("--out", type=Path)

    p = sub.add_parser("render-rollout", help="write one PGM frame per tick under the greedy policy")
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--ticks", type=_positive_int, default=200)
    p.add_argument("--out", "--out-dir", dest="out", required=True, type=Path)
    return parser


def _load_net(path: Path):
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        return load_weights(path), EnvConfig()
    ckpt = checkpoint_load(path)
    return ckpt.online, ckpt.env_config


def cmd_train(args) -> int:
    if args.resume is not None:
        trainer = Trainer(None, 0, resume=checkpoint_load(args.resume))
    else:
        cfg, env_cfg = load_config(args.config) if args.config else (None, None)
        trainer = Trainer(args.agent, args.seed, cfg, env_cfg)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    target = trainer.t + args.timesteps if args.resume is not None else args.timesteps
    ckpt_path = out / CHECKPOINT_FILE
    interrupted = False
    try:
        trainer.run(target, metrics_path=out / METRICS_FILE, checkpoint_path=ckpt_path,
                    checkpoint_every=args.checkpoint_every or 0)
    except KeyboardInterrupt:
        interrupted = True
        log.warning("interrupted at t=%d; writing final checkpoint", trainer.t)
    checkpoint_save(ckpt_path, trainer.checkpoint())
    save_weights(trainer.agent.online, out / WEIGHTS_FILE)
    name = out.name or str(out)
    (out / SUMMARY_FILE).write_text(render_summary([summarize(trainer.log, name)]), encoding="utf-8")
    (out / EPOCHS_FILE).write_text(epochs_csv(epoch_averages(trainer.log.scores)), encoding="utf-8")
    sys.stdout.write(render_table([summarize(trainer.log, name)]))
    return 1 if interrupted else 0


def cmd_eval(args) -> int:
    net, env_cfg = _load_net(args.weights)
    scores = evaluate_greedy(net, args.seed, args.episodes, env_cfg)
    text = "".join(f"{s}\n" for s in scores)
    if args.out is not None:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_compare(args) -> int:
    logs, names = [], []
    for run_dir in args.run_dirs:
        with open(run_dir / METRICS_FILE, encoding="utf-8") as fh:
            logs.append(MetricsLog.from_csv(fh.read()))
        names.append(run_dir.name or str(run_dir))
    rows = compare_runs(logs, names)
    if args.out is not None:
        args.out.write_text(render_summary(rows), encoding="utf-8")
    sys.stdout.write(render_table(rows))
    return 0


def cmd_render_rollout(args) -> int:
    net, env_cfg = _load_net(args.weights)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    written = 0

    def on_frame(frame):
        nonlocal written
        if written < args.ticks:
            write_pgm(frame, out / f"frame_{written:06d}.pgm")
            written += 1

    def policy(obs, _tick):
        return Action(greedy(net.forward(obs[None])[0]))

    # a death before `ticks` frames continues with the next game of the seed stream
    games = iter(episode_seeds(args.seed, args.ticks))
    while written < args.ticks:
        play_episode(policy, next(games), env_cfg, max_ticks=args.ticks - written, on_frame=on_frame)
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "compare": cmd_compare,
            "render-rollout": cmd_render_rollout}


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DinoError as exc:
        print(f"dinorl: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    except OSError as exc:
        print(f"dinorl: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
