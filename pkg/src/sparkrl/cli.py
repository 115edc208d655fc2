"""Operator entry point: train, evaluate, bench, record, replay.

Configuration has three layers with fixed precedence — command-line flag
beats config-file key beats built-in default — and commands that produce an
output directory dump the fully resolved configuration there as
`config.resolved`, one `key = value` line per key, so a run is always
reproducible from its artifacts.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
import time

from . import nao, protocol, sexpr, tasks, wire
from .envcore import Env, EnvConfig

# flag dest -> (config key, type tag). Every flag has a config-file twin.
_KEYS = {
    "task": ("task.name", "str"),
    "server": ("server.kind", "str"),
    "host": ("server.host", "str"),
    "base_port": ("server.base_port", "int"),
    "server_binary": ("server.binary", "str"),
    "joints": ("env.joints", "str"),
    "action_mode": ("env.action_mode", "str"),
    "max_episode_steps": ("env.max_episode_steps", "int"),
    "n_wait": ("env.n_wait", "int"),
    "obs_clip": ("env.obs_clip", "float"),
    "ball_start": ("env.ball_start_pos", "vec3"),
    "beam_pose": ("env.beam_pose", "vec3"),
    "target_angle_gain": ("env.target_angle_gain", "float"),
    "team": ("env.team", "str"),
    "unum": ("env.unum", "int"),
    "scene": ("env.scene", "str"),
    "seed": ("train.seed", "int"),
    "num_envs": ("train.num_envs", "int"),
    "total_steps": ("train.total_steps", "int"),
    "gamma": ("train.gamma", "float"),
    "gae_lambda": ("train.gae_lambda", "float"),
    "n_steps": ("train.n_steps", "int"),
    "epochs": ("train.epochs", "int"),
    "clip_range": ("train.clip_range", "float"),
    "learning_rate": ("train.learning_rate", "float"),
    "entropy_coef": ("train.entropy_coef", "float"),
    "value_coef": ("train.value_coef", "float"),
    "minibatch_size": ("train.minibatch_size", "int"),
    "max_grad_norm": ("train.max_grad_norm", "float"),
    "checkpoint_every": ("train.checkpoint_every", "int"),
}


def _defaults() -> dict[str, str]:
    env = EnvConfig()
    from .trainer import TrainerConfig  # deferred: keeps torch out of light commands

    tc = TrainerConfig()
    return {
        "task.name": "simple_kick",
        "server.kind": env.server_kind,
        "server.host": env.host,
        "server.base_port": str(env.agent_port),
        "server.binary": "",
        "env.joints": "all",
        "env.action_mode": env.action_mode,
        "env.max_episode_steps": str(env.max_episode_steps),
        "env.n_wait": "",  # empty: use the task's default
        "env.obs_clip": repr(env.obs_clip),
        "env.ball_start_pos": ",".join(repr(v) for v in env.ball_start_pos),
        "env.beam_pose": ",".join(repr(v) for v in env.beam_pose),
        "env.target_angle_gain": repr(env.target_angle_gain),
        "env.team": env.team,
        "env.unum": str(env.unum),
        "env.scene": env.scene,
        "train.seed": str(tc.seed),
        "train.num_envs": str(tc.num_envs),
        "train.total_steps": str(tc.total_timesteps),
        "train.gamma": repr(tc.gamma),
        "train.gae_lambda": repr(tc.gae_lambda),
        "train.n_steps": str(tc.n_steps),
        "train.epochs": str(tc.epochs),
        "train.clip_range": repr(tc.clip_range),
        "train.learning_rate": repr(tc.learning_rate),
        "train.entropy_coef": repr(tc.entropy_coef),
        "train.value_coef": repr(tc.value_coef),
        "train.minibatch_size": str(tc.minibatch_size),
        "train.max_grad_norm": repr(tc.max_grad_norm),
        "train.checkpoint_every": str(tc.checkpoint_every),
    }


class UsageError(Exception):
    pass


def load_config_file(path: str, known: set[str]) -> dict[str, str]:
    """Parse `key = value` lines; # starts a comment; unknown keys are usage
    errors except task.* option passthroughs."""
    values: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}") from e
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        key, eq, value = text.partition("=")
        if not eq:
            raise UsageError(f"{path}:{lineno}: expected `key = value`, got {line.strip()!r}")
        key = key.strip()
        if key not in known and not key.startswith("task."):
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def resolve_config(args: argparse.Namespace) -> dict[str, str]:
    """defaults <- config file <- flags, in increasing precedence."""
    resolved = _defaults()
    config_path = getattr(args, "config", None)
    if config_path:
        resolved.update(load_config_file(config_path, set(resolved)))
    for dest, (key, _) in _KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            resolved[key] = str(value)
    for item in getattr(args, "task_opt", None) or []:
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"--task-opt needs key=value, got {item!r}")
        resolved[f"task.{key.strip()}"] = value.strip()
    return resolved


def _vec3(text: str, key: str) -> tuple[float, float, float]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 3:
        raise UsageError(f"{key} needs three comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def build_env_config(resolved: dict[str, str]) -> EnvConfig:
    try:
        controllable = nao.resolve_joint_set(resolved["env.joints"])
        n_wait = resolved["env.n_wait"]
        return EnvConfig(
            controllable=controllable,
            action_mode=resolved["env.action_mode"],
            max_episode_steps=int(resolved["env.max_episode_steps"]),
            n_wait=int(n_wait) if n_wait != "" else None,
            ball_start_pos=_vec3(resolved["env.ball_start_pos"], "env.ball_start_pos"),
            beam_pose=_vec3(resolved["env.beam_pose"], "env.beam_pose"),
            obs_clip=float(resolved["env.obs_clip"]),
            target_angle_gain=float(resolved["env.target_angle_gain"]),
            server_kind=resolved["server.kind"],
            host=resolved["server.host"],
            agent_port=int(resolved["server.base_port"]),
            server_binary=resolved["server.binary"] or None,
            seed=int(resolved["train.seed"]),
            team=resolved["env.team"],
            unum=int(resolved["env.unum"]),
            scene=resolved["env.scene"],
        )
    except (ValueError, KeyError) as e:
        raise UsageError(str(e)) from e


def build_trainer_config(resolved: dict[str, str]):
    from .trainer import TrainerConfig

    try:
        return TrainerConfig(
            total_timesteps=int(resolved["train.total_steps"]),
            num_envs=int(resolved["train.num_envs"]),
            gamma=float(resolved["train.gamma"]),
            gae_lambda=float(resolved["train.gae_lambda"]),
            n_steps=int(resolved["train.n_steps"]),
            epochs=int(resolved["train.epochs"]),
            clip_range=float(resolved["train.clip_range"]),
            learning_rate=float(resolved["train.learning_rate"]),
            entropy_coef=float(resolved["train.entropy_coef"]),
            value_coef=float(resolved["train.value_coef"]),
            minibatch_size=int(resolved["train.minibatch_size"]),
            max_grad_norm=float(resolved["train.max_grad_norm"]),
            seed=int(resolved["train.seed"]),
            checkpoint_every=int(resolved["train.checkpoint_every"]),
        )
    except ValueError as e:
        raise UsageError(str(e)) from e


def task_options(resolved: dict[str, str]) -> dict:
    options = {}
    for key, value in resolved.items():
        if key.startswith("task.") and key != "task.name":
            try:
                options[key[5:]] = json.loads(value)
            except ValueError:
                options[key[5:]] = value
    return options


def _check_task(resolved: dict[str, str]) -> str:
    name = resolved["task.name"]
    if name not in tasks.list_tasks():
        raise UsageError(
            f"unknown task {name!r}; registered tasks: {', '.join(tasks.list_tasks())}")
    return name


def dump_resolved(resolved: dict[str, str], out_dir: str) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.resolved")
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(resolved):
            fh.write(f"{key} = {resolved[key]}\n")


# -- subcommands -------------------------------------------------------------


def cmd_train(args) -> int:
    resolved = resolve_config(args)
    task_name = _check_task(resolved)
    env_config = build_env_config(resolved)
    trainer_config = build_trainer_config(resolved)
    dump_resolved(resolved, args.out)
    from . import trainer

    summary = trainer.train(task_name, trainer_config, env_config, args.out,
                            task_options=task_options(resolved),
                            log=lambda msg: print(msg, file=sys.stderr))
    print(f"trained {summary['timesteps']} steps over {summary['updates']} updates; "
          f"final mean episode reward {summary['mean_ep_reward']:.4f}")
    print(f"checkpoint: {summary['checkpoint']}")
    print(f"metrics: {summary['metrics']}")
    return 0


def cmd_evaluate(args) -> int:
    resolved = resolve_config(args)
    task_name = _check_task(resolved)
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    env_config = build_env_config(resolved)
    from . import trainer

    mean, std, rewards = trainer.evaluate(args.ckpt, task_name, args.episodes,
                                          env_config, task_options(resolved))
    print(f"episodes: {len(rewards)}")
    print(f"mean_ep_reward: {mean:.6f} +/- {std:.6f}")
    return 0


def _write_bench_svg(path: str, rows) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ns = [r[0] for r in rows]
    rates = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ns, rates, marker="o")
    ax.set_xlabel("parallel environments")
    ax.set_ylabel("env steps / second")
    ax.set_title("throughput vs worker count")
    ax.grid(True, alpha=0.4)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_bench(args) -> int:
    import os

    resolved = resolve_config(args)
    task_name = _check_task(resolved)
    try:
        n_list = [int(p) for p in args.envs.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"--envs needs a comma-separated list of counts, got {args.envs!r}")
    if not n_list or any(n < 1 for n in n_list):
        raise UsageError("--envs counts must all be >= 1")
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    env_config = build_env_config(resolved)
    dump_resolved(resolved, args.out)
    from .vecenv import throughput_bench

    rows = throughput_bench(n_list, args.steps, task_name, env_config)
    csv_path = os.path.join(args.out, "bench.csv")
    with open(csv_path, "w", encoding="ascii") as fh:
        fh.write("n,steps_per_sec,wall_s\n")
        for n, rate, wall in rows:
            fh.write(f"{n},{rate:.2f},{wall:.4f}\n")
    svg_path = os.path.join(args.out, "bench.svg")
    _write_bench_svg(svg_path, rows)
    for n, rate, wall in rows:
        print(f"n={n}: {rate:.1f} steps/s ({wall:.2f}s)")
    print(f"wrote {csv_path} and {svg_path}")
    return 0


class TraceWriter:
    """Writes newline-delimited TraceRecords; times are strictly increasing
    per direction even when the wall clock stalls."""

    def __init__(self, fh):
        self.fh = fh
        self._last: dict[str, float] = {}
        self.records = 0

    def __call__(self, direction: str, payload: bytes) -> None:
        now = time.monotonic()
        floor = self._last.get(direction, -1.0)
        if now <= floor:
            now = floor + 1e-9
        self._last[direction] = now
        record = {
            "direction": direction,
            "time": now,
            "payload": base64.b64encode(payload).decode("ascii"),
        }
        self.fh.write(json.dumps(record) + "\n")
        self.records += 1


def _scripted_action(step: int, act_dim: int):
    """Deterministic gentle joint sweep, so recorded traces show movement."""
    import math as m

    return [0.3 * m.sin(2 * m.pi * step / 25 + k * m.pi / 7) for k in range(act_dim)]


def cmd_record(args) -> int:
    resolved = resolve_config(args)
    task_name = _check_task(resolved)
    if args.cycles < 1:
        raise UsageError("--cycles must be >= 1")
    env_config = build_env_config(resolved)
    with open(args.out, "w", encoding="ascii") as fh:
        writer = TraceWriter(fh)
        task = tasks.make_task(task_name, **task_options(resolved))
        with Env(task, env_config, recorder=writer) as env:
            obs = env.reset()
            done_steps = 0
            while done_steps < args.cycles:
                result = env.step(_scripted_action(done_steps, env.act_dim))
                done_steps += 1
                if result.terminated or result.truncated:
                    if done_steps < args.cycles:
                        env.reset()
    print(f"recorded {writer.records} records over {args.cycles} steps to {args.out}")
    return 0


def cmd_replay(args) -> int:
    try:
        with open(args.trace, encoding="ascii") as fh:
            lines = fh.readlines()
    except OSError as e:
        print(f"cannot read trace: {e}", file=sys.stderr)
        return 1
    snapshot = None
    cycles = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            payload = base64.b64decode(record["payload"], validate=True)
            if record["direction"] == "from_server":
                snapshot = protocol.decode_snapshot(payload, snapshot)
                cycles += 1
                ball = snapshot.ball_world
                ball_text = ("({:.3f}, {:.3f}, {:.3f})".format(*ball)
                             if ball is not None else "unknown")
                print(f"cycle {cycles}: t={snapshot.sim_time:.2f} "
                      f"joints={len(snapshot.joint_angles)} ball={ball_text}")
            else:
                sexpr.parse(payload)
        except (ValueError, KeyError, TypeError, sexpr.SExprError,
                protocol.ProtocolError) as e:
            print(f"{args.trace}:{lineno}: {e}", file=sys.stderr)
            return 1
    print(f"replayed {cycles} cycles, 0 decode errors")
    return 0


# -- parser ------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="config file (key = value lines)")
    parser.add_argument("--task", help="task name (see `train --help` for registered names)")
    parser.add_argument("--task-opt", action="append", metavar="KEY=VALUE",
                        help="task constructor option; repeatable")
    parser.add_argument("--server", dest="server", choices=sorted(wire.SERVER_KINDS),
                        help="server kind (default mock)")
    parser.add_argument("--host", help="server host")
    parser.add_argument("--base-port", dest="base_port", type=int,
                        help="agent port of env 0; env i uses base+i, monitor +1000")
    parser.add_argument("--server-binary", dest="server_binary",
                        help=f"real server binary (or ${wire.SERVER_BIN_ENV})")
    parser.add_argument("--joints", help="joint set: all, legs, kick4, or joint names")
    parser.add_argument("--action-mode", dest="action_mode",
                        choices=["velocity", "target_angle", "target_angle_with_speed"])
    parser.add_argument("--max-episode-steps", dest="max_episode_steps", type=int)
    parser.add_argument("--n-wait", dest="n_wait", type=int,
                        help="override the task's wait-phase length")
    parser.add_argument("--obs-clip", dest="obs_clip", type=float)
    parser.add_argument("--ball-start", dest="ball_start", metavar="X,Y,Z")
    parser.add_argument("--beam-pose", dest="beam_pose", metavar="X,Y,ROT")
    parser.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparkrl",
        description="Robot-soccer kick training against a real or mock simulation server.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run PPO training")
    _add_common(p_train)
    p_train.add_argument("--num-envs", dest="num_envs", type=int)
    p_train.add_argument("--total-steps", dest="total_steps", type=int)
    for flag in ("gamma", "gae-lambda", "n-steps", "epochs", "clip-range",
                 "learning-rate", "entropy-coef", "value-coef", "minibatch-size",
                 "max-grad-norm"):
        dest = flag.replace("-", "_")
        kind = int if dest in ("n_steps", "epochs", "minibatch_size") else float
        p_train.add_argument(f"--{flag}", dest=dest, type=kind)
    p_train.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p_train.add_argument("--out", default="run", help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint (mean action)")
    _add_common(p_eval)
    p_eval.add_argument("--ckpt", required=True, help="checkpoint file")
    p_eval.add_argument("--episodes", type=int, default=10)
    p_eval.set_defaults(func=cmd_evaluate)

    p_bench = sub.add_parser("bench", help="measure env-steps/second vs worker count")
    _add_common(p_bench)
    p_bench.add_argument("--envs", default="1,2,4,8", help="comma-separated worker counts")
    p_bench.add_argument("--steps", type=int, default=2000, help="env-steps per count")
    p_bench.add_argument("--out", default="bench", help="output directory")
    p_bench.set_defaults(func=cmd_bench)

    p_record = sub.add_parser("record", help="record agent wire traffic to a trace file")
    _add_common(p_record)
    p_record.add_argument("--cycles", type=int, default=100, help="env steps to record")
    p_record.add_argument("--out", default="trace.jsonl", help="trace file")
    p_record.set_defaults(func=cmd_record)

    p_replay = sub.add_parser("replay", help="re-decode a trace file and summarise it")
    p_replay.add_argument("--trace", required=True, help="trace file to replay")
    p_replay.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as e:  # runtime failure: report, don't traceback-bomb
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
