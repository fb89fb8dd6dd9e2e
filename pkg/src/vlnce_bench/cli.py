"""Command-line entry point: eval, collect, train, serve, and parse.

Every subcommand is seeded and reproducible: identical flags and seed give
byte-identical output files (no timestamps are written). The fallback seed
comes from the VLNCE_BENCH_SEED environment variable when --seed is absent.

Exit codes: 0 success, 1 configuration/usage error, 2 transport failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import __version__
from .actions import ActionKind, NoValidActionError, parse_action
from .encoder import make_encoder_params
from .expert import (
    collect_dagger,
    collect_oracle,
    generate_episode,
    load_dataset,
    mix_datasets,
    save_dataset,
)
from .policy import (
    featurize_samples,
    load_checkpoint,
    make_policy_params,
    save_checkpoint,
    train,
)
from .protocol import RemoteAgent, episode_session_factory, serve_agent, write_transcript
from .rng import derive_seed
from .runner import (
    EvalConfig,
    OracleAgent,
    RandomAgent,
    ToyAgent,
    compute_metrics,
    run_episode,
)
from .world import GridWorld, WorldError, load_world_file

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_TRANSPORT = 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG) -> None:
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # usage problems are configuration errors: exit 1, not argparse's 2
    def error(self, message: str) -> None:  # type: ignore[override]
        raise CliError(f"{self.prog}: {message}")


def _default_seed() -> int:
    env = os.environ.get("VLNCE_BENCH_SEED")
    if env:
        try:
            return int(env)
        except ValueError as e:
            raise CliError(f"VLNCE_BENCH_SEED must be an integer, got {env!r}") from e
    return 0


def _load_worlds(paths: list[str]) -> list[GridWorld]:
    worlds = []
    for p in paths:
        if not os.path.exists(p):
            raise CliError(f"world file not found: {p}")
        try:
            worlds.append(load_world_file(p))
        except WorldError as e:
            raise CliError(f"invalid world file {p}: {e}") from e
    return worlds


def _parse_bind(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise CliError(f"bind address must be host:port, got {text!r}")
    return (host or "127.0.0.1", int(port))


def _agent_factory(args, seed: int):
    """Returns (build(world) -> Agent, is_remote)."""
    spec = args.agent
    if spec == "oracle":
        return (lambda world: OracleAgent(world)), False
    if spec == "random":
        return (lambda world: RandomAgent(seed)), False
    if spec == "toy" or spec.startswith("toy:"):
        if spec.startswith("toy:"):
            path = spec[len("toy:"):]
            if not os.path.exists(path):
                raise CliError(f"checkpoint not found: {path}")
            policy_params, m = load_checkpoint(path)
            enc = make_encoder_params(policy_params.seed, policy_params.c, m)
        else:
            policy_params = make_policy_params(seed, args.c)
            enc = make_encoder_params(seed, args.c, args.m)
        return (
            lambda world: ToyAgent(policy_params, enc, args.n_hist, args.n_cur)
        ), False
    if spec.startswith("remote:"):
        address = _parse_bind(spec[len("remote:"):])
        transcript = getattr(args, "_transcript_entries", None)
        return (
            lambda world: RemoteAgent(
                address,
                timeout=args.timeout,
                n_hist=args.n_hist,
                n_cur=args.n_cur,
                c=args.c,
                transcript=transcript,
            )
        ), True
    raise CliError(f"unknown agent spec {spec!r} (oracle|random|toy[:ckpt]|remote:host:port)")


def _generated_episodes(worlds: list[GridWorld], count: int, seed: int):
    """The shared episode schedule: world round-robin, per-index seeds."""
    out = []
    for i in range(count):
        world = worlds[i % len(worlds)]
        out.append((i, world, generate_episode(world, derive_seed(seed, "ep", i))))
    return out


# -- eval ------------------------------------------------------------------------


def _cmd_eval(args) -> int:
    seed = args.seed
    worlds = _load_worlds(args.worlds)
    if args.episodes < 1:
        raise CliError("--episodes must be >= 1")
    if args.transcript is not None:
        args._transcript_entries = []
    build_agent, is_remote = _agent_factory(args, seed)
    success_radius = args.success_radius
    if success_radius is None and args.real_world:
        success_radius = 1.5

    schedule = _generated_episodes(worlds, args.episodes, seed)
    feature_seed = derive_seed(seed, "features")

    def run_one(item):
        i, world, episode = item
        config = EvalConfig(
            feature_seed=feature_seed,
            c=args.c,
            success_radius=success_radius,
            max_steps=args.max_steps,
            distance=args.distance,
        )
        return run_episode(world, episode, build_agent(world), config)

    if args.jobs > 1 and not args.transcript:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_one, schedule))
    else:
        results = [run_one(item) for item in schedule]

    summary = compute_metrics(results)
    print(f"{'TL (m)':>10} {'NE (m)':>10} {'OS (%)':>10} {'SR (%)':>10} {'SPL (%)':>10}")
    print(
        f"{summary.tl:>10.2f} {summary.ne:>10.2f} {summary.os:>10.1f} "
        f"{summary.sr:>10.1f} {summary.spl:>10.1f}"
    )
    print(f"episodes: {summary.n}   agent: {args.agent}   seed: {seed}")

    if args.out:
        doc = {
            "summary": {
                "tl": summary.tl,
                "ne": summary.ne,
                "os": summary.os,
                "sr": summary.sr,
                "spl": summary.spl,
                "n": summary.n,
            },
            "config": {
                "agent": args.agent,
                "episodes": args.episodes,
                "seed": seed,
                "success_radius": success_radius,
                "distance": args.distance,
                "worlds": args.worlds,
            },
            "episodes": [
                {
                    "episode_id": r.episode_id,
                    "success": r.success,
                    "oracle_success": r.oracle_success,
                    "spl_term": r.spl_term,
                    "tl": r.tl,
                    "ne": r.ne,
                    "steps": r.steps,
                    "invalid_answers": r.invalid_answers,
                    "stop_called": r.stop_called,
                    "error": r.error,
                    **(
                        {"poses": [[p.x, p.y, p.heading] for p in r.poses]}
                        if args.dump_trajectories
                        else {}
                    ),
                }
                for r in results
            ],
        }
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=1)
            f.write("\n")
        print(f"results written to {args.out}")

    if args.transcript is not None:
        write_transcript(args.transcript, args._transcript_entries)
        print(f"transcript written to {args.transcript}")

    if any(r.error for r in results):
        print("transport failures occurred", file=sys.stderr)
        return EXIT_TRANSPORT
    return EXIT_OK


# -- collect ---------------------------------------------------------------------


def _cmd_collect(args) -> int:
    seed = args.seed
    if args.mix:
        if len(args.mix) != 2:
            raise CliError("--mix takes exactly two dataset paths")
        worlds = _load_worlds(args.worlds) if args.worlds else []
        for p in args.mix:
            if not os.path.exists(p):
                raise CliError(f"dataset not found: {p}")
        oracle = load_dataset(args.mix[0], worlds, args.c)
        dagger = load_dataset(args.mix[1], worlds, args.c)
        mixed = mix_datasets(oracle, dagger, seed)
        save_dataset(args.out, mixed, inline_features=args.inline_features)
        kept_o = sum(1 for s in mixed if s.source == "oracle")
        kept_d = sum(1 for s in mixed if s.source == "dagger")
        ratio = f"{kept_o / kept_d:.3f}" if kept_d else "all-oracle"
        print(f"mixed {len(oracle)}+{len(dagger)} -> kept {kept_o} oracle + {kept_d} dagger "
              f"(ratio {ratio}, target {16 / 9:.3f})")
        print(f"dataset written to {args.out}")
        return EXIT_OK

    if not args.worlds:
        raise CliError("--worlds is required")
    worlds = _load_worlds(args.worlds)
    if args.episodes < 1:
        raise CliError("--episodes must be >= 1")
    if args.mode == "oracle":
        samples = collect_oracle(worlds, args.episodes, seed, c=args.c)
    else:
        build_agent, _ = _agent_factory(args, seed)
        samples = collect_dagger(
            _ScheduledAgent(build_agent, worlds), worlds, args.episodes, seed, c=args.c
        )
    save_dataset(args.out, samples, inline_features=args.inline_features)
    n_o = sum(1 for s in samples if s.source == "oracle")
    n_d = sum(1 for s in samples if s.source == "dagger")
    print(f"collected {len(samples)} samples ({n_o} oracle, {n_d} dagger) "
          f"over {args.episodes} episodes")
    print(f"dataset written to {args.out}")
    return EXIT_OK


class _ScheduledAgent:
    """Rebuilds the wrapped agent per episode, following the collection
    world round-robin (reset order is index-aligned with the schedule)."""

    def __init__(self, build_agent, worlds) -> None:
        self._build = build_agent
        self._worlds = worlds
        self._count = 0
        self._agent = None

    def reset(self, episode) -> None:
        self._agent = self._build(self._worlds[self._count % len(self._worlds)])
        self._count += 1
        self._agent.reset(episode)

    def act(self, frame) -> str:
        assert self._agent is not None
        return self._agent.act(frame)


# -- train -----------------------------------------------------------------------


def _cmd_train(args) -> int:
    seed = args.seed
    if args.epochs < 1:
        raise CliError("--epochs must be >= 1")
    if args.lr <= 0:
        raise CliError("--lr must be > 0")
    if not os.path.exists(args.data):
        raise CliError(f"dataset not found: {args.data}")
    worlds = _load_worlds(args.worlds) if args.worlds else []
    samples = load_dataset(args.data, worlds, args.c)
    if not samples:
        raise CliError(f"dataset {args.data} is empty")
    enc = make_encoder_params(seed, args.c, args.m)
    features = featurize_samples(samples, enc, args.n_hist, args.n_cur)
    params = make_policy_params(seed, args.c)
    trained, trace = train(params, features, args.lr, args.epochs)
    save_checkpoint(args.out, trained, args.m)
    trace_path = args.trace or (args.out + ".trace.json")
    with open(trace_path, "w", encoding="utf-8") as f:
        json.dump({"loss_trace": trace}, f, indent=0)
        f.write("\n")
    print(f"trained on {len(samples)} samples for {args.epochs} epochs "
          f"(loss {trace[0]:.4f} -> {trace[-1]:.4f})")
    print(f"checkpoint written to {args.out}")
    print(f"loss trace written to {trace_path}")
    return EXIT_OK


# -- serve -----------------------------------------------------------------------


def _cmd_serve(args) -> int:
    seed = args.seed
    worlds = _load_worlds(args.worlds)
    if args.episodes < 1:
        raise CliError("--episodes must be >= 1")
    bind = _parse_bind(args.bind)
    build_agent, is_remote = _agent_factory(args, seed)
    if is_remote:
        raise CliError("serving a remote agent spec makes no sense")
    episodes = {
        ep.id: (world, ep) for _, world, ep in _generated_episodes(worlds, args.episodes, seed)
    }
    factory = episode_session_factory(worlds, episodes, build_agent)
    try:
        server = serve_agent(factory, bind)
    except OSError as e:
        print(f"cannot bind {args.bind}: {e}", file=sys.stderr)
        return EXIT_TRANSPORT
    print(f"serving agent {args.agent!r} on {server.address[0]}:{server.address[1]} "
          f"({len(episodes)} episodes indexed); Ctrl-C to stop", flush=True)
    try:
        import time

        while True:
            time.sleep(0.2)
    except KeyboardInterrupt:
        print("shutting down")
    finally:
        server.close()
    return EXIT_OK


# -- parse -----------------------------------------------------------------------


def _cmd_parse(args) -> int:
    try:
        action = parse_action(args.text)
    except NoValidActionError:
        print(json.dumps({"type": "no_valid_action"}))
        return EXIT_OK
    if action.kind is ActionKind.STOP:
        record = {"type": "stop", "argument": None, "unit": None}
    elif action.kind is ActionKind.FORWARD:
        record = {"type": "forward", "argument": action.value, "unit": "m"}
    else:
        name = "turn_left" if action.kind is ActionKind.TURN_LEFT else "turn_right"
        record = {"type": name, "argument": action.value, "unit": "degrees"}
    print(json.dumps(record))
    return EXIT_OK


# -- wiring ----------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, with_agent: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None, help="run seed (env VLNCE_BENCH_SEED fallback)")
    p.add_argument("--c", type=int, default=32, help="feature/token dimension")
    p.add_argument("--m", type=int, default=8, help="encoder query count")
    p.add_argument("--n-hist", type=int, default=4, help="agnostic tokens per history frame")
    p.add_argument("--n-cur", type=int, default=64, help="agnostic tokens for the current frame")
    if with_agent:
        p.add_argument("--agent", default="oracle",
                       help="oracle | random | toy[:checkpoint] | remote:host:port")
        p.add_argument("--timeout", type=float, default=30.0, help="remote request timeout (s)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vlnce-bench", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_eval = sub.add_parser("eval", help="run episodes and print the metric table")
    p_eval.add_argument("--worlds", nargs="+", required=True, help="world JSON files")
    p_eval.add_argument("--episodes", type=int, default=10)
    _add_common(p_eval)
    p_eval.add_argument("--success-radius", type=float, default=None)
    p_eval.add_argument("--real-world", action="store_true",
                        help="judge with the 1.5 m real-world radius")
    p_eval.add_argument("--max-steps", type=int, default=None)
    p_eval.add_argument("--distance", choices=("geodesic", "euclidean"), default="geodesic")
    p_eval.add_argument("--jobs", type=int, default=1)
    p_eval.add_argument("--out", default=None, help="write results JSON here")
    p_eval.add_argument("--dump-trajectories", action="store_true")
    p_eval.add_argument("--transcript", default=None,
                        help="record the remote-agent wire transcript to this file")
    p_eval.set_defaults(fn=_cmd_eval)

    p_collect = sub.add_parser("collect", help="collect expert / learner-relabel datasets")
    p_collect.add_argument("--worlds", nargs="+", default=None)
    p_collect.add_argument("--episodes", type=int, default=10)
    _add_common(p_collect)
    p_collect.add_argument("--mode", choices=("oracle", "dagger"), default="oracle")
    p_collect.add_argument("--mix", nargs=2, metavar=("ORACLE", "DAGGER"), default=None,
                           help="mix two dataset files at the 16:9 ratio instead of collecting")
    p_collect.add_argument("--inline-features", action="store_true")
    p_collect.add_argument("--out", required=True)
    p_collect.set_defaults(fn=_cmd_collect)

    p_train = sub.add_parser("train", help="train the toy policy head on a dataset")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--worlds", nargs="+", default=None,
                         help="world files referenced by the dataset")
    _add_common(p_train, with_agent=False)
    p_train.add_argument("--lr", type=float, default=0.1)
    p_train.add_argument("--epochs", type=int, default=200)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--trace", default=None, help="loss trace path (default OUT.trace.json)")
    p_train.set_defaults(fn=_cmd_train)

    p_serve = sub.add_parser("serve", help="expose a built-in agent over the wire protocol")
    p_serve.add_argument("--worlds", nargs="+", required=True)
    p_serve.add_argument("--episodes", type=int, default=10)
    _add_common(p_serve)
    p_serve.add_argument("--bind", default="127.0.0.1:0")
    p_serve.set_defaults(fn=_cmd_serve)

    p_parse = sub.add_parser("parse", help="parse one answer sentence")
    p_parse.add_argument("text")
    p_parse.set_defaults(fn=_cmd_parse)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "seed", None) is None:
            args.seed = _default_seed()
        return args.fn(args)
    except CliError as e:
        print(str(e), file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
