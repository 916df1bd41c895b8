"""Run configuration: schema, defaults, validation, and the resolved echo.

Config files may be YAML or JSON (YAML is a superset here; JSON always
works). Unknown keys are ignored for forward compatibility. Every run writes
the fully-resolved configuration next to its outputs so that re-running from
the echo reproduces the run byte for byte.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import sched
from .units import seconds_to_us, us_to_seconds

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


RL_TYPES = ("discrete", "continuous")
TRANSPORTS = ("stdio", "tcp")

DEFAULT_IDLE_TIMEOUT_S = 300
DEFAULT_DT_S = 1800
DEFAULT_STALL_GUARD_S = 24 * 3600


@dataclass
class RlConfig:
    enabled: bool = False
    learn: bool = False
    type: str = "discrete"
    dt_us: int | None = DEFAULT_DT_S * 10**6
    epochs: int = 1
    transport: str = "stdio"
    agent_cmd: list[str] | None = None  # spawned when `run` drives an agent
    bind: str = "127.0.0.1:0"  # tcp transport listen address
    stall_guard_us: int | None = DEFAULT_STALL_GUARD_S * 10**6  # None disables
    feature_extractor: str = "default"
    action_translator: str = "target_count"
    reward: str = "default"


@dataclass
class ReportConfig:
    px_per_hour: float = 20.0
    lane_height: int = 14


@dataclass
class RunConfig:
    workload: str
    platform: str
    output: str = "results"
    algorithm: str = "easy_psus"
    overrun_policy: str = "continue"
    timeout_us: int | None = None
    start_time_us: int = 0
    start_time_raw: object = 0  # as written in the file ("now" stays visible in logs)
    idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_S * 10**6
    boot_lookahead: bool = True
    rl: RlConfig = field(default_factory=RlConfig)
    log_level: str = "INFO"
    log_file: str | None = None  # default: <output>/simulation.log
    seed: int = 0
    report: ReportConfig = field(default_factory=ReportConfig)

    def policy_config(self) -> sched.PolicyConfig:
        cfg = sched.parse_algorithm(self.algorithm, idle_timeout_us=self.idle_timeout_us)
        return sched.PolicyConfig(
            algorithm=cfg.algorithm,
            psm=cfg.psm,
            idle_timeout_us=self.idle_timeout_us,
            boot_lookahead=self.boot_lookahead,
        )


def _expect_mapping(doc, key):
    value = doc.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"{key}: must be a mapping")
    return value


def _seconds_or_none(value, field_name) -> int | None:
    if value is None:
        return None
    try:
        us = seconds_to_us(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{field_name}: not a number: {value!r}") from None
    return us


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Load, default-fill, and validate a run configuration file.

    ``overrides`` maps a small set of CLI-exposed fields (output, seed,
    algorithm, timeout_s) over the file's values.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = yaml.safe_load(text)  # YAML parses JSON too
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return build_config(doc, overrides or {}, base_dir=path.parent)


def build_config(doc: dict, overrides: dict | None = None, base_dir: Path | None = None) -> RunConfig:
    overrides = overrides or {}
    paths = _expect_mapping(doc, "paths")
    run = _expect_mapping(doc, "run")
    psm = _expect_mapping(doc, "psm")
    rl_doc = _expect_mapping(doc, "rl")
    logging_doc = _expect_mapping(doc, "logging")
    report_doc = _expect_mapping(doc, "report")

    def resolve_path(value, relative_to_cwd=False):
        p = Path(value)
        if not p.is_absolute() and base_dir is not None and not relative_to_cwd:
            p = base_dir / p
        return str(p.resolve())

    workload = paths.get("workload")
    platform = paths.get("platform")
    if not workload:
        raise ConfigError("paths.workload: required")
    if not platform:
        raise ConfigError("paths.platform: required")
    if overrides.get("output") is not None:
        output = resolve_path(overrides["output"], relative_to_cwd=True)
    else:
        output = resolve_path(paths.get("output") or "results")

    algorithm = overrides.get("algorithm") or run.get("algorithm", "easy_psus")
    try:
        policy = sched.parse_algorithm(algorithm)
    except ValueError as exc:
        raise ConfigError(f"run.algorithm: {exc}") from None
    canonical_algorithm = f"{policy.algorithm}_{policy.psm}"

    overrun = run.get("overrun_policy", "continue")
    if overrun not in ("terminate", "continue"):
        raise ConfigError(f"run.overrun_policy: must be 'terminate' or 'continue', got {overrun!r}")

    if "timeout_s" in overrides:
        timeout_us = _seconds_or_none(overrides["timeout_s"], "timeout override")
    else:
        timeout_us = _seconds_or_none(run.get("timeout"), "run.timeout")
    if timeout_us is not None and timeout_us <= 0:
        raise ConfigError("run.timeout: must be > 0 seconds or null")

    start_raw = run.get("start_time", 0)
    if start_raw == "now":
        start_time_us = seconds_to_us(int(time.time()))
    else:
        start_time_us = _seconds_or_none(start_raw, "run.start_time")
        if start_time_us is None:
            start_time_us = 0
        if start_time_us < 0:
            raise ConfigError("run.start_time: must be >= 0")

    idle_timeout_us = _seconds_or_none(psm.get("idle_timeout", DEFAULT_IDLE_TIMEOUT_S), "psm.idle_timeout")
    if idle_timeout_us is None or idle_timeout_us <= 0:
        raise ConfigError("psm.idle_timeout: must be > 0 seconds")
    boot_lookahead = bool(psm.get("boot_lookahead", True))

    rl_type = rl_doc.get("type", "discrete")
    if rl_type not in RL_TYPES:
        raise ConfigError(f"rl.type: must be one of {RL_TYPES}, got {rl_type!r}")
    if "rl" in doc and rl_type == "discrete" and "dt" not in rl_doc:
        raise ConfigError("rl.dt: required when rl.type == 'discrete'")
    dt_us = _seconds_or_none(rl_doc.get("dt", DEFAULT_DT_S), "rl.dt")
    if rl_type == "discrete" and (dt_us is None or dt_us <= 0):
        raise ConfigError("rl.dt: required when rl.type == 'discrete' and must be > 0")
    transport = rl_doc.get("transport", "stdio")
    if transport not in TRANSPORTS:
        raise ConfigError(f"rl.transport: must be one of {TRANSPORTS}, got {transport!r}")
    agent_cmd = rl_doc.get("agent_cmd")
    if agent_cmd is not None and not (isinstance(agent_cmd, list) and all(isinstance(x, str) for x in agent_cmd)):
        raise ConfigError("rl.agent_cmd: must be a list of strings")
    stall_guard_us = _seconds_or_none(rl_doc.get("stall_guard", DEFAULT_STALL_GUARD_S), "rl.stall_guard")
    rl = RlConfig(
        enabled=bool(rl_doc.get("enabled", False)),
        learn=bool(rl_doc.get("learn", False)),
        type=rl_type,
        dt_us=dt_us,
        epochs=int(rl_doc.get("epochs", 1)),
        transport=transport,
        agent_cmd=agent_cmd,
        bind=str(rl_doc.get("bind", "127.0.0.1:0")),
        stall_guard_us=stall_guard_us,
        feature_extractor=str(rl_doc.get("feature_extractor", "default")),
        action_translator=str(rl_doc.get("action_translator", "target_count")),
        reward=str(rl_doc.get("reward", "default")),
    )

    seed = overrides.get("seed")
    if seed is None:
        seed = doc.get("seed", 0)
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f"seed: must be an integer, got {seed!r}") from None

    report = ReportConfig(
        px_per_hour=float(report_doc.get("px_per_hour", 20.0)),
        lane_height=int(report_doc.get("lane_height", 14)),
    )

    return RunConfig(
        workload=resolve_path(workload),
        platform=resolve_path(platform),
        output=output,
        algorithm=canonical_algorithm,
        overrun_policy=overrun,
        timeout_us=timeout_us,
        start_time_us=start_time_us,
        start_time_raw=start_raw,
        idle_timeout_us=idle_timeout_us,
        boot_lookahead=boot_lookahead,
        rl=rl,
        log_level=str(logging_doc.get("level", "INFO")),
        log_file=logging_doc.get("file"),
        seed=seed,
        report=report,
    )


def resolved_doc(cfg: RunConfig) -> dict:
    """The fully-resolved config as a plain document (the reproducibility echo)."""
    return {
        "paths": {"workload": cfg.workload, "platform": cfg.platform, "output": cfg.output},
        "run": {
            "algorithm": cfg.algorithm,
            "overrun_policy": cfg.overrun_policy,
            "timeout": None if cfg.timeout_us is None else us_to_seconds(cfg.timeout_us),
            "start_time": us_to_seconds(cfg.start_time_us),
        },
        "psm": {
            "idle_timeout": us_to_seconds(cfg.idle_timeout_us),
            "boot_lookahead": cfg.boot_lookahead,
        },
        "rl": {
            "enabled": cfg.rl.enabled,
            "learn": cfg.rl.learn,
            "type": cfg.rl.type,
            "dt": None if cfg.rl.dt_us is None else us_to_seconds(cfg.rl.dt_us),
            "epochs": cfg.rl.epochs,
            "transport": cfg.rl.transport,
            "agent_cmd": cfg.rl.agent_cmd,
            "bind": cfg.rl.bind,
            "stall_guard": None if cfg.rl.stall_guard_us is None else us_to_seconds(cfg.rl.stall_guard_us),
            "feature_extractor": cfg.rl.feature_extractor,
            "action_translator": cfg.rl.action_translator,
            "reward": cfg.rl.reward,
        },
        "logging": {"level": cfg.log_level, "file": cfg.log_file},
        "report": {"px_per_hour": cfg.report.px_per_hour, "lane_height": cfg.report.lane_height},
        "seed": cfg.seed,
    }


def write_echo(cfg: RunConfig, path: Path) -> None:
    path.write_text(json.dumps(resolved_doc(cfg), indent=2, sort_keys=True) + "\n")
