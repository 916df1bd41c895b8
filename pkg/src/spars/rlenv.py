"""Node power management as a stepwise learning environment.

The environment owns one simulation. Each step the agent picks how many
nodes should be powered on (or a per-node on/off vector with the alternate
translator); the translator turns that into switch-on/switch-off commands,
the engine advances (one fixed window of ``dt`` simulated seconds in
discrete mode, exactly one event batch in continuous mode) with the job
scheduler still running every batch, and the reward charges the agent for
wasted energy and queued waiting accrued over the advanced window.

Feature extractors, action translators, and rewards are registries keyed by
name so alternative observation spaces or objectives can be swapped from
config without touching the simulator core.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

from . import engine, metrics, report
from .engine import EngineConfig, SimState, proceed, start_simulator
from .platform import ACTIVE, SLEEPING, SWITCHING_ON, Platform
from .sched import Decision, SwitchOff, SwitchOn, build_policy
from .workload import Workload

log = logging.getLogger(__name__)

OBS_DIM = 6


class EnvironmentClosed(RuntimeError):
    """step() after the episode finished."""


class InvalidAction(ValueError):
    """Malformed or out-of-range agent action; the step is rejected."""


@dataclass(frozen=True)
class Observation:
    features: tuple[float, ...]
    timestamp_us: int


@dataclass(frozen=True)
class PowerAction:
    mode: str  # "discrete" | "continuous"
    value: object  # int target, float in [0,1], or 0/1 list for per_node


@dataclass(frozen=True)
class StepResult:
    observation: Observation
    reward: float
    done: bool


@dataclass(frozen=True)
class WindowMetrics:
    waste_nj: int  # idle + switching energy accrued over the window
    wait_jobus: int  # integral of queue length over the window
    dt_us: int
    num_nodes: int
    max_active_power_mw: int


# -- feature extractors ------------------------------------------------

FEATURE_EXTRACTORS: dict[str, callable] = {}
ACTION_TRANSLATORS: dict[str, callable] = {}
REWARDS: dict[str, callable] = {}


def register_feature_extractor(name):
    def inner(fn):
        FEATURE_EXTRACTORS[name] = fn
        return fn

    return inner


def register_action_translator(name):
    def inner(fn):
        ACTION_TRANSLATORS[name] = fn
        return fn

    return inner


def register_reward(name):
    def inner(fn):
        REWARDS[name] = fn
        return fn

    return inner


@register_feature_extractor("default")
def fraction_features(state: SimState) -> tuple[float, ...]:
    """[frac_computing, frac_idle, frac_sleeping, frac_switching, queue_len, queue_res].

    The first four partition the node set (they sum to exactly 1 in rational
    arithmetic before the final float conversion); the queue features are
    clipped to [0, 1] against the node count.
    """
    n = state.platform.num_nodes
    computing = idle = sleeping = switching = 0
    for node in state.platform.nodes:
        if node.running_job is not None:
            computing += 1
        elif node.current_state == ACTIVE:
            idle += 1
        elif node.current_state == SLEEPING:
            sleeping += 1
        else:
            switching += 1
    queue_len = len(state.queue)
    queue_res = sum(state.jobs[j].res for j in state.queue)
    fracs = (
        Fraction(computing, n),
        Fraction(idle, n),
        Fraction(sleeping, n),
        Fraction(switching, n),
        min(Fraction(1), Fraction(queue_len, n)),
        min(Fraction(1), Fraction(queue_res, n)),
    )
    assert sum(fracs[:4]) == 1
    return tuple(float(f) for f in fracs)


def get_observation(state: SimState, extractor: str = "default") -> Observation:
    features = FEATURE_EXTRACTORS[extractor](state)
    return Observation(features=features, timestamp_us=state.clock)


# -- action translators ------------------------------------------------


def _powered_on_count(state: SimState) -> int:
    return sum(1 for n in state.platform.nodes if n.current_state in (ACTIVE, SWITCHING_ON))


def _switch_on_candidates(state: SimState) -> list[int]:
    """Sleeping nodes, lowest id first."""
    return [n.id for n in state.platform.nodes if n.current_state == SLEEPING]


def _switch_off_candidates(state: SimState) -> list:
    """Idle, unreserved nodes, longest idle first; computing/reserved untouchable."""
    nodes = [n for n in state.platform.nodes if n.is_idle and n.reserved_for is None]
    nodes.sort(key=lambda n: (n.idle_since, n.id))
    return nodes


@register_action_translator("target_count")
def translate_target_count(state: SimState, action: PowerAction) -> list[Decision]:
    """Drive the powered-on node count (active + switching_on) toward a target.

    Shortfalls are truncated silently: there may be fewer sleeping nodes to
    boot, or fewer idle unreserved nodes than the requested power-down.
    """
    n = state.platform.num_nodes
    value = action.value
    if action.mode == "discrete":
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidAction(f"discrete action must be an integer, got {value!r}")
        if not 0 <= value <= n:
            raise InvalidAction(f"target {value} outside [0, {n}]")
        target = value
    else:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidAction(f"continuous action must be a number, got {value!r}")
        if not 0.0 <= float(value) <= 1.0:
            raise InvalidAction(f"continuous action {value} outside [0, 1]")
        target = round(float(value) * n)

    now = state.clock
    delta = target - _powered_on_count(state)
    if delta > 0:
        return [SwitchOn(nid, issued_at=now) for nid in _switch_on_candidates(state)[:delta]]
    if delta < 0:
        return [SwitchOff(node.id, issued_at=now) for node in _switch_off_candidates(state)[: -delta]]
    return []


@register_action_translator("per_node")
def translate_per_node(state: SimState, action: PowerAction) -> list[Decision]:
    """Binary on/off wish per node; illegal wishes are dropped, never forced."""
    n = state.platform.num_nodes
    value = action.value
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise InvalidAction(f"per_node action must be a list of {n} binary values")
    if any(v not in (0, 1) for v in value):
        raise InvalidAction("per_node action entries must be 0 or 1")
    now = state.clock
    decisions: list[Decision] = []
    for node, wish in zip(state.platform.nodes, value):
        if wish == 1 and node.current_state == SLEEPING:
            decisions.append(SwitchOn(node.id, issued_at=now))
        elif wish == 0 and node.is_idle and node.reserved_for is None:
            decisions.append(SwitchOff(node.id, issued_at=now))
    return decisions


# -- rewards -----------------------------------------------------------


@register_reward("default")
def compute_reward(window: WindowMetrics, w_e: float = 1.0, w_t: float = 1.0) -> float:
    """Negative normalized waste plus normalized queued waiting; 0 is perfect.

    Both terms are dimensionless: waste is scaled by the energy the whole
    machine would burn at max active power over the window, waiting by
    node-count x window length. A window of zero length scores 0.
    """
    if window.dt_us == 0:
        return 0.0
    energy_term = window.waste_nj / (window.num_nodes * window.max_active_power_mw * window.dt_us)
    wait_term = window.wait_jobus / (window.num_nodes * window.dt_us)
    return -(w_e * energy_term + w_t * wait_term)


@register_reward("waste_only")
def reward_waste_only(window: WindowMetrics) -> float:
    return compute_reward(window, w_e=1.0, w_t=0.0)


@register_reward("wait_only")
def reward_wait_only(window: WindowMetrics) -> float:
    return compute_reward(window, w_e=0.0, w_t=1.0)


# -- the environment ---------------------------------------------------


class HpcEnv:
    """One simulation exposed as observation -> action -> reward steps.

    The base scheduler keeps starting jobs every batch; the agent only
    controls node power. Requires a ``*_psas_ipm`` algorithm (any other PSM
    variant would fight the agent over the switches).
    """

    def __init__(self, run_config, platform: Platform, workload: Workload):
        policy_cfg = run_config.policy_config()
        if policy_cfg.psm != "psas_ipm":
            raise ValueError(
                f"the RL environment requires a *_psas_ipm algorithm, got {run_config.algorithm!r}"
            )
        self.cfg = run_config
        self.platform = platform
        self.workload = workload
        self.mode = run_config.rl.type
        self.dt_us = run_config.rl.dt_us
        self.stall_guard_us = run_config.rl.stall_guard_us
        self._policy_cfg = policy_cfg
        self._extractor = run_config.rl.feature_extractor
        self._translator = ACTION_TRANSLATORS[run_config.rl.action_translator]
        self._reward_fn = REWARDS[run_config.rl.reward]
        self.episode = 0
        self.state: SimState | None = None
        self.done = True

    # lifecycle ---------------------------------------------------------

    def reset(self) -> Observation:
        self.episode += 1
        self.state = start_simulator(
            EngineConfig(
                start_time_us=self.cfg.start_time_us,
                timeout_us=self.cfg.timeout_us,
                overrun_policy=self.cfg.overrun_policy,
                seed=self.cfg.seed,
            ),
            self.platform,
            self.workload,
        )
        self._policy = build_policy(self._policy_cfg)
        self.done = not self.state.is_alive()
        return self.observe()

    def observe(self) -> Observation:
        return get_observation(self.state, self._extractor)

    def is_running(self) -> bool:
        return self.state is not None and not self.done

    # stall guard --------------------------------------------------------

    def _head_wait_us(self) -> int | None:
        if not self.state.queue:
            return None
        head = self.state.jobs[self.state.queue[0]]
        return self.state.clock - (self.state.start_time_us + head.subtime_us)

    def _guard_engaged(self) -> bool:
        if self.stall_guard_us is None:
            return False
        waited = self._head_wait_us()
        return waited is not None and waited >= self.stall_guard_us

    def _apply_stall_guard(self) -> None:
        """Force the minimum switch-on set for a pathologically starved head job."""
        if not self._guard_engaged():
            return
        state = self.state
        head = state.jobs[state.queue[0]]
        deficit = head.res - _powered_on_count(state)
        if deficit <= 0:
            return
        boots = [SwitchOn(nid, issued_at=state.clock) for nid in _switch_on_candidates(state)[:deficit]]
        if boots:
            log.warning(
                "stall guard: head job %s waited %.0f s, forcing %d switch-on(s)",
                head.job_id,
                (self._head_wait_us() or 0) / 1e6,
                len(boots),
            )
            engine.apply_decisions(state, boots, from_policy=False)

    # stepping ------------------------------------------------------------

    def step(self, value) -> StepResult:
        if self.state is None or self.done:
            raise EnvironmentClosed("step() called after the episode finished")
        state = self.state
        action = PowerAction(mode=self.mode, value=value)
        decisions = self._translator(state, action)
        if self._guard_engaged():
            # a starved head job outranks the agent: keep nodes on
            decisions = [d for d in decisions if not isinstance(d, SwitchOff)]
        engine.apply_decisions(state, decisions, from_policy=False)
        self._apply_stall_guard()

        waste0 = state.waste_nj
        wait0 = state.waiting_integral_jobus
        t0 = state.clock

        if self.mode == "discrete":
            target = t0 + self.dt_us
            state.schedule_wakeup(target)
            while state.is_alive():
                if not state.pending or state.pending[0][0] > target:
                    break
                proceed(state, self._policy)
                self._apply_stall_guard()
            alive = state.is_alive()
        else:
            if state.is_alive() and not state.pending:
                self._recover_from_stall()
            _, alive = proceed(state, self._policy)
            self._apply_stall_guard()

        self.done = not alive
        window = WindowMetrics(
            waste_nj=state.waste_nj - waste0,
            wait_jobus=state.waiting_integral_jobus - wait0,
            dt_us=state.clock - t0,
            num_nodes=state.platform.num_nodes,
            max_active_power_mw=state.platform.max_active_power_mw(),
        )
        return StepResult(observation=self.observe(), reward=self._reward_fn(window), done=self.done)

    def _recover_from_stall(self) -> None:
        """Continuous mode: jobs wait but nothing is scheduled; jump to the guard."""
        state = self.state
        if self.stall_guard_us is None:
            raise engine.StalledSimulation(
                f"{len(state.queue)} job(s) waiting at t={state.clock} with no pending events "
                "and the stall guard disabled"
            )
        head = state.jobs[state.queue[0]]
        deadline = max(state.clock, state.start_time_us + head.subtime_us + self.stall_guard_us)
        state.schedule_wakeup(deadline)

    # end-of-episode reporting -------------------------------------------

    def episode_summary(self) -> metrics.Summary:
        state = self.state
        traces = metrics.split_active_intervals(state.finalized_segments(), state.completed)
        return metrics.build_summary(state.completed, traces, state.platform, state.start_time_us, state.clock)


# -- protocol server ----------------------------------------------------


def obs_message(observation: Observation, reward: float | None, done: bool, episode: int) -> dict:
    return {
        "type": "obs",
        "t": observation.timestamp_us / 10**6,
        "features": list(observation.features),
        "reward": reward,
        "done": done,
        "episode": episode,
    }


def serve(env: HpcEnv, channel, episodes: int | None = 1) -> int:
    """Serve episodes over a LineChannel until done or the agent disconnects.

    ``episodes`` of 0 or None serves until the agent hangs up. Malformed
    messages get an error reply and the same observation again; they never
    advance the simulation. Returns the number of completed episodes.
    """
    completed = 0
    while not episodes or completed < episodes:
        observation = env.reset()
        current = obs_message(observation, None, env.done, env.episode)
        channel.send(current)
        while not env.done:
            try:
                message = channel.recv()
            except Exception as exc:  # garbage line: reject, resend
                channel.send_error(f"bad message: {exc}")
                channel.send(current)
                continue
            if message is None:
                log.info("agent disconnected after %d episode(s)", completed)
                return completed
            if message.get("type") == "error":
                log.warning("agent error: %s", message.get("msg"))
                channel.send(current)
                continue
            if message.get("type") != "action" or "value" not in message:
                channel.send_error("expected {\"type\":\"action\",\"value\":...}")
                channel.send(current)
                continue
            try:
                result = env.step(message["value"])
            except InvalidAction as exc:
                channel.send_error(str(exc))
                channel.send(current)
                continue
            current = obs_message(result.observation, result.reward, result.done, env.episode)
            channel.send(current)
        summary = env.episode_summary()
        doc = report.summary_doc(summary, algorithm=env.cfg.algorithm, seed=env.cfg.seed)
        doc["type"] = "episode_summary"
        doc["episode"] = env.episode
        channel.send(doc)
        completed += 1
    return completed
