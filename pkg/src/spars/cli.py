"""Command-line entry point: run, gen, swf2json, sweep, serve-env."""

from __future__ import annotations

import argparse
import concurrent.futures
import logging
import os
import subprocess
import sys
from pathlib import Path

from . import engine, metrics, report, rlenv
from .config import ConfigError, RunConfig, load_config, resolved_doc
from .engine import PolicyFault, StalledSimulation
from .platform import PlatformError, parse_platform
from .protocol import LineChannel, tcp_accept_channel, tcp_listen
from .units import format_seconds, nj_to_joules
from .workload import GenSpec, WorkloadError, convert_swf, generate_workload, parse_workload, serialize_workload

log = logging.getLogger(__name__)

TRACE = 5
logging.addLevelName(TRACE, "TRACE")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_POLICY_FAULT = 3
EXIT_IO = 4


def setup_logging(cfg: RunConfig) -> None:
    level_name = os.environ.get("SPARS_LOG", cfg.log_level).upper()
    level = TRACE if level_name == "TRACE" else getattr(logging, level_name, logging.INFO)
    root = logging.getLogger()
    root.setLevel(level)
    for handler in list(root.handlers):
        root.removeHandler(handler)
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    # stdout stays clean: the env protocol runs there in stdio mode
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(fmt)
    root.addHandler(console)
    log_file = cfg.log_file or str(Path(cfg.output) / "simulation.log")
    Path(log_file).parent.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(log_file, mode="w")
    file_handler.setFormatter(fmt)
    root.addHandler(file_handler)


def _load_inputs(cfg: RunConfig):
    platform = parse_platform(Path(cfg.platform).read_bytes())
    workload = parse_workload(Path(cfg.workload).read_bytes())
    return platform, workload


def _config_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "output", None) is not None:
        overrides["output"] = args.output
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "algorithm", None) is not None:
        overrides["algorithm"] = args.algorithm
    if getattr(args, "timeout", None) is not None:
        overrides["timeout_s"] = args.timeout
    return overrides


def _write_env_outputs(cfg: RunConfig, env: rlenv.HpcEnv) -> None:
    state = env.state
    traces = metrics.split_active_intervals(state.finalized_segments(), state.completed)
    summary = metrics.build_summary(state.completed, traces, state.platform, state.start_time_us, state.clock)
    report.write_run_outputs(
        cfg.output,
        state.completed,
        traces,
        state.platform,
        summary,
        algorithm=cfg.algorithm,
        seed=cfg.seed,
        echo_doc=resolved_doc(cfg),
        px_per_hour=cfg.report.px_per_hour,
        lane_height=cfg.report.lane_height,
    )


def cmd_run(args) -> int:
    cfg = load_config(args.config, _config_overrides(args))
    Path(cfg.output).mkdir(parents=True, exist_ok=True)
    setup_logging(cfg)
    if not cfg.rl.enabled:
        engine.run_simulation(cfg)
        return EXIT_OK

    platform, workload = _load_inputs(cfg)
    env = rlenv.HpcEnv(cfg, platform, workload)
    if cfg.rl.transport == "tcp":
        # wait for an external agent to attach
        host, _, port = cfg.rl.bind.rpartition(":")
        server, bound = tcp_listen(host or "127.0.0.1", int(port or 0))
        print(f"listening on {host or '127.0.0.1'}:{bound}", file=sys.stderr, flush=True)
        try:
            rlenv.serve(env, tcp_accept_channel(server), cfg.rl.epochs)
        finally:
            server.close()
    else:
        if not cfg.rl.agent_cmd:
            raise ConfigError("rl.agent_cmd: required to run with rl.enabled over stdio (or use `spars serve-env`)")
        log.info("spawning agent: %s", " ".join(cfg.rl.agent_cmd))
        proc = subprocess.Popen(cfg.rl.agent_cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        try:
            channel = LineChannel(proc.stdout, proc.stdin)
            rlenv.serve(env, channel, cfg.rl.epochs)
        finally:
            try:
                proc.stdin.close()
            except OSError:
                pass
            proc.wait(timeout=30)
    _write_env_outputs(cfg, env)
    return EXIT_OK


def cmd_serve_env(args) -> int:
    cfg = load_config(args.config, _config_overrides(args))
    Path(cfg.output).mkdir(parents=True, exist_ok=True)
    setup_logging(cfg)
    platform, workload = _load_inputs(cfg)
    env = rlenv.HpcEnv(cfg, platform, workload)
    episodes = cfg.rl.epochs if args.episodes is None else args.episodes
    if cfg.rl.transport == "tcp" or args.tcp:
        bind = args.tcp or cfg.rl.bind
        host, _, port = bind.rpartition(":")
        server, bound = tcp_listen(host or "127.0.0.1", int(port or 0))
        print(f"listening on {host or '127.0.0.1'}:{bound}", file=sys.stderr, flush=True)
        try:
            rlenv.serve(env, tcp_accept_channel(server), episodes)
        finally:
            server.close()
    else:
        channel = LineChannel(sys.stdin.buffer, sys.stdout.buffer)
        rlenv.serve(env, channel, episodes)
    if env.state is not None and env.done:
        _write_env_outputs(cfg, env)
    return EXIT_OK


def cmd_gen(args) -> int:
    spec = GenSpec(
        num_jobs=args.num_jobs,
        arrival_rate=args.arrival_rate,
        mean_runtime=args.mean_runtime,
        runtime_cv=args.cv,
        min_res=args.min_res,
        max_res=args.max_res,
        reqtime_factor=args.reqtime_factor,
        seed=args.seed,
    )
    workload = generate_workload(spec)
    if args.nb_res is not None:
        if args.nb_res < args.max_res:
            raise WorkloadError(f"--nb-res {args.nb_res} smaller than --max-res {args.max_res}")
        workload.nb_res = args.nb_res
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    Path(args.output).write_bytes(serialize_workload(workload))
    print(f"wrote {len(workload.jobs)} jobs to {args.output}")
    return EXIT_OK


def cmd_swf2json(args) -> int:
    data = Path(args.trace).read_bytes()
    result = convert_swf(data, nb_res=args.nb_res)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    Path(args.output).write_bytes(serialize_workload(result.workload))
    print(
        f"wrote {len(result.workload.jobs)} jobs to {args.output} "
        f"(dropped {result.dropped}, skipped {result.skipped})"
    )
    return EXIT_OK


def parse_timeouts(expr: str) -> list[int]:
    """Accept '300..3600:300' (inclusive range) or '300,600,900' (seconds)."""
    expr = expr.strip()
    if ".." in expr:
        span, _, step = expr.partition(":")
        start_s, _, end_s = span.partition("..")
        if not step:
            raise ConfigError(f"--timeouts range needs a step: {expr!r}")
        start, end, step = int(start_s), int(end_s), int(step)
        if step <= 0 or end < start:
            raise ConfigError(f"--timeouts range is empty: {expr!r}")
        return list(range(start, end + 1, step))
    return [int(token) for token in expr.split(",") if token.strip()]


COMPARISON_CSV_HEADER = (
    "algorithm,timeout_s,seed,total_energy_j,wasted_energy_j,"
    "mean_waiting_s,max_waiting_s,utilization,makespan_s,jobs,terminated"
)


def comparison_row(algorithm: str, timeout_s: int, seed: int, summary) -> str:
    return ",".join(
        [
            algorithm,
            str(timeout_s),
            str(seed),
            f"{nj_to_joules(summary.total_energy_nj):.9f}",
            f"{nj_to_joules(summary.wasted_energy_nj):.9f}",
            f"{summary.mean_waiting_us / 10**6:.6f}",
            format_seconds(summary.max_waiting_us),
            f"{summary.utilization:.9f}",
            format_seconds(summary.makespan_us),
            str(summary.job_count),
            str(summary.terminated_count),
        ]
    )


def _sweep_one(payload):
    cfg_doc, algorithm, timeout_s = payload
    from .config import build_config

    cfg = build_config(cfg_doc, {"algorithm": algorithm, "timeout_s": timeout_s})
    cfg.output = str(Path(cfg.output) / f"{algorithm}_t{timeout_s}")
    bundle = engine.run_simulation(cfg)
    return algorithm, timeout_s, cfg.seed, bundle.summary


def cmd_sweep(args) -> int:
    overrides = _config_overrides(args)
    overrides.pop("algorithm", None)  # sweep's --algorithm is the grid, not an override
    cfg = load_config(args.config, overrides)
    setup_logging(cfg)
    timeouts = parse_timeouts(args.timeouts)
    algorithms = args.algorithm or [cfg.algorithm]
    cfg_doc = resolved_doc(cfg)
    jobs = [(cfg_doc, algorithm, timeout_s) for algorithm in sorted(set(algorithms)) for timeout_s in timeouts]
    log.info("sweep: %d runs (%d algorithms x %d timeouts)", len(jobs), len(set(algorithms)), len(timeouts))

    results = []
    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(job) for job in jobs]

    results.sort(key=lambda r: (r[0], r[1]))
    lines = [COMPARISON_CSV_HEADER]
    lines.extend(comparison_row(alg, timeout_s, seed, summary) for alg, timeout_s, seed, summary in results)
    out = Path(cfg.output) / "comparison.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    report.atomic_write(out, ("\n".join(lines) + "\n").encode())
    print(f"wrote {out} ({len(results)} rows)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spars", description="Power-aware HPC scheduling simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_algorithm=True):
        p.add_argument("-c", "--config", required=True, help="YAML or JSON run configuration")
        p.add_argument("--output", help="override paths.output")
        p.add_argument("--seed", type=int, help="override seed")
        if with_algorithm:
            p.add_argument("--algorithm", help="override run.algorithm")
        p.add_argument("--timeout", type=float, help="override run.timeout (seconds)")

    p_run = sub.add_parser("run", help="execute one simulation")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_serve = sub.add_parser("serve-env", help="serve the RL environment protocol")
    add_common(p_serve)
    p_serve.add_argument("--episodes", type=int, help="episodes to serve (default: rl.epochs; 0 = until disconnect)")
    p_serve.add_argument("--tcp", metavar="HOST:PORT", help="listen on TCP instead of stdio")
    p_serve.set_defaults(func=cmd_serve_env)

    p_gen = sub.add_parser("gen", help="generate a synthetic workload.json")
    p_gen.add_argument("-o", "--output", required=True)
    p_gen.add_argument("--num-jobs", type=int, required=True)
    p_gen.add_argument("--arrival-rate", type=float, required=True, help="jobs per second")
    p_gen.add_argument("--mean-runtime", type=float, required=True, help="seconds")
    p_gen.add_argument("--cv", type=float, default=0.0, help="runtime coefficient of variation")
    p_gen.add_argument("--min-res", type=int, default=1)
    p_gen.add_argument("--max-res", type=int, default=1)
    p_gen.add_argument("--reqtime-factor", type=float, default=1.5)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--nb-res", type=int, help="override nb_res (default: max-res)")
    p_gen.set_defaults(func=cmd_gen)

    p_swf = sub.add_parser("swf2json", help="convert a Standard Workload Format trace")
    p_swf.add_argument("trace")
    p_swf.add_argument("-o", "--output", required=True)
    p_swf.add_argument("--nb-res", type=int, required=True)
    p_swf.set_defaults(func=cmd_swf2json)

    p_sweep = sub.add_parser("sweep", help="run a timeout x algorithm grid and compare")
    add_common(p_sweep, with_algorithm=False)
    p_sweep.add_argument("--timeouts", required=True, help="'start..end:step' or comma list, in seconds")
    p_sweep.add_argument(
        "--algorithm",
        action="append",
        dest="algorithm",
        help="algorithm(s) to sweep (repeatable; default: config's)",
    )
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, WorkloadError, PlatformError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PolicyFault, StalledSimulation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_POLICY_FAULT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
