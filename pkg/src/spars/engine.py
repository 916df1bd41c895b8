"""Discrete-event kernel: event queue, atomic same-time batching, job lifecycle.

Everything that happens at one simulated instant is delivered to the policy
as one EventBatch; the policy is invoked exactly once per batch, after all
effects of that instant have been applied. Within a batch, effects run in a
fixed kind order (finishes before overruns before transition completions
before arrivals before ticks) so resources freed at time t are visible to
jobs arriving at t.

All times are integer microseconds; there is no floating point anywhere on
the hot path, which is what makes same-time detection and energy accounting
exact.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable

from . import platform as plat
from .platform import ACTIVE, SLEEPING, Platform, TransitionRejected
from .sched import Decision, Reserve, StartJob, SwitchOff, SwitchOn
from .workload import Job, Workload

log = logging.getLogger(__name__)


class PolicyFault(RuntimeError):
    """A policy returned a decision that violates its preconditions.

    Policies must be honest: the engine aborts the run rather than papering
    over an illegal decision.
    """

    def __init__(self, decision: Decision, reason: str):
        super().__init__(f"policy fault: {reason} (decision: {decision!r})")
        self.decision = decision
        self.reason = reason


class StalledSimulation(RuntimeError):
    """Jobs are waiting but no event can ever wake the simulation again."""


class EventKind(IntEnum):
    # numeric value doubles as the within-batch effect priority
    JOB_FINISH = 0
    JOB_OVERRUN = 1
    TRANSITION_COMPLETE = 2
    JOB_ARRIVAL = 3
    DECISION_TICK = 4
    SIMULATION_END = 5


@dataclass(slots=True)
class Event:
    time: int
    kind: EventKind
    seq: int
    job_id: str | None = None
    node_id: int | None = None
    token: int | None = None
    ticket: plat.TransitionTicket | None = None
    recurring: bool = False  # cadence ticks reschedule themselves; injected ones don't


@dataclass(slots=True)
class EventBatch:
    time: int
    events: list[Event]


@dataclass(slots=True)
class RunningJob:
    job: Job
    nodes: list[int]
    start: int
    finish_event_time: int
    scaled_runtime: int
    token: int


@dataclass(frozen=True, slots=True)
class JobRecord:
    job_id: str
    subtime_us: int  # absolute (start_time + workload subtime)
    start_us: int
    finish_us: int
    nodes: tuple[int, ...]  # internal node ids, ascending
    res: int
    outcome: str  # "completed" | "terminated_overrun"

    @property
    def waiting_us(self) -> int:
        return self.start_us - self.subtime_us


@dataclass(frozen=True)
class Reservation:
    job_id: str
    node_ids: tuple[int, ...]
    est_start: int


@dataclass(frozen=True)
class EngineConfig:
    start_time_us: int = 0
    timeout_us: int | None = None  # decision cadence; None = purely event-driven
    overrun_policy: str = "continue"  # "terminate" | "continue"
    seed: int = 0


OVERRUN_POLICIES = ("terminate", "continue")

TERMINATED_OVERRUN = "terminated_overrun"
COMPLETED = "completed"


class SimState:
    """Full mutable state of one simulation instance.

    Never shared between threads while running; independent instances are
    fully isolated and may run in parallel processes.
    """

    def __init__(self, config: EngineConfig, platform: Platform, workload: Workload):
        self.config = config
        self.clock = config.start_time_us
        self.start_time_us = config.start_time_us
        self.platform = platform.instantiate(config.start_time_us)
        self.workload = workload
        self.jobs: dict[str, Job] = {job.job_id: job for job in workload.jobs}
        self.queue: list[str] = []
        self.running: dict[str, RunningJob] = {}
        self.completed: list[JobRecord] = []
        self.reservations: list[Reservation] = []
        self.rng_seed = config.seed

        self.pending: list[tuple[int, int, int, Event]] = []
        self._seq = 0
        self._token = 0
        self._nontick_pending = 0
        self.policy_invocations = 0
        self.batch_times: list[int] = []  # one entry per policy invocation

        # closed platform-state trace segments per node: (state, begin, end)
        self.segments: list[list[tuple[str, int, int]]] = [[] for _ in self.platform.nodes]

        # O(1) live accounting for the RL reward window
        self.waiting_integral_jobus = 0  # sum over time of |queue|
        self.waste_nj = 0  # idle + switching energy accrued so far
        self._idle_power_mw = sum(
            n.state_power_mw(ACTIVE) for n in self.platform.nodes if n.is_idle
        )
        self._switching_power_mw = sum(
            n.power_mw for n in self.platform.nodes if n.current_state in plat.TRANSIENT_STATES
        )

    # -- event plumbing -------------------------------------------------

    def _push(self, time: int, kind: EventKind, **payload) -> Event:
        assert time >= self.clock, "event scheduled in the past"
        self._seq += 1
        event = Event(time=time, kind=kind, seq=self._seq, **payload)
        heapq.heappush(self.pending, (time, int(kind), self._seq, event))
        if kind != EventKind.DECISION_TICK:
            self._nontick_pending += 1
        return event

    def is_alive(self) -> bool:
        """True while anything other than bare decision ticks can still happen."""
        return bool(self._nontick_pending or self.queue or self.running)

    def schedule_wakeup(self, time_us: int) -> None:
        """One-shot decision point at `time_us` (RL step windows, stall recovery)."""
        self._push(max(time_us, self.clock), EventKind.DECISION_TICK)

    def _event_valid(self, event: Event) -> bool:
        if event.kind in (EventKind.JOB_FINISH, EventKind.JOB_OVERRUN):
            entry = self.running.get(event.job_id)
            return entry is not None and entry.token == event.token
        return True

    # -- counters and traces --------------------------------------------

    def _advance_clock(self, new_time: int) -> None:
        dt = new_time - self.clock
        if dt:
            self.waiting_integral_jobus += len(self.queue) * dt
            self.waste_nj += (self._idle_power_mw + self._switching_power_mw) * dt
            self.clock = new_time

    def _close_segment(self, node_id: int, state_name: str, begin: int) -> None:
        if self.clock > begin:
            self.segments[node_id].append((state_name, begin, self.clock))

    def finalized_segments(self) -> list[list[tuple[str, int, int]]]:
        """Closed segments plus the still-open tail of each node, up to now."""
        out = []
        for node in self.platform.nodes:
            rows = list(self.segments[node.id])
            if self.clock > node.state_since:
                rows.append((node.current_state, node.state_since, self.clock))
            out.append(rows)
        return out

    # -- node state changes (all platform mutations route through here) --

    def begin_transition(self, node_id: int, target: str) -> plat.TransitionTicket:
        node = self.platform.nodes[node_id]
        old_state, old_since = node.current_state, node.state_since
        was_idle = node.is_idle
        ticket = plat.request_transition(self.platform, node_id, target, self.clock)
        self._close_segment(node_id, old_state, old_since)
        if was_idle:
            self._idle_power_mw -= node.state_power_mw(ACTIVE)
        self._switching_power_mw += node.power_mw
        self._push(ticket.completes_at, EventKind.TRANSITION_COMPLETE, node_id=node_id, ticket=ticket)
        return ticket

    def _apply_transition_complete(self, event: Event) -> None:
        node = self.platform.nodes[event.node_id]
        ticket = event.ticket
        self._switching_power_mw -= node.power_mw
        self._close_segment(node.id, node.current_state, node.state_since)
        plat.complete_transition(self.platform, ticket, self.clock)
        if node.current_state == ACTIVE:
            self._idle_power_mw += node.state_power_mw(ACTIVE)

    def _start_job(self, job: Job, node_ids: list[int]) -> None:
        speed = min(plat.effective_speed(self.platform.nodes[nid]) for nid in node_ids)
        scaled_runtime = math.ceil(job.runtime_us / speed)
        self._token += 1
        finish_at = self.clock + scaled_runtime
        for nid in node_ids:
            node = self.platform.nodes[nid]
            node.running_job = job.job_id
            self._idle_power_mw -= node.state_power_mw(ACTIVE)
        self.queue.remove(job.job_id)
        self.running[job.job_id] = RunningJob(
            job=job,
            nodes=sorted(node_ids),
            start=self.clock,
            finish_event_time=finish_at,
            scaled_runtime=scaled_runtime,
            token=self._token,
        )
        self._push(finish_at, EventKind.JOB_FINISH, job_id=job.job_id, token=self._token)
        if self.config.overrun_policy == "terminate" and job.reqtime_us < scaled_runtime:
            self._push(
                self.clock + job.reqtime_us,
                EventKind.JOB_OVERRUN,
                job_id=job.job_id,
                token=self._token,
            )

    def _finish_job(self, job_id: str, outcome: str) -> None:
        entry = self.running.pop(job_id)
        for nid in entry.nodes:
            node = self.platform.nodes[nid]
            node.running_job = None
            node.idle_since = self.clock
            self._idle_power_mw += node.state_power_mw(ACTIVE)
        self.completed.append(
            JobRecord(
                job_id=job_id,
                subtime_us=self.start_time_us + entry.job.subtime_us,
                start_us=entry.start,
                finish_us=self.clock,
                nodes=tuple(entry.nodes),
                res=entry.job.res,
                outcome=outcome,
            )
        )


Policy = Callable[[SimState, EventBatch], "list[Decision]"]


def start_simulator(config: EngineConfig, platform: Platform, workload: Workload) -> SimState:
    """Seed a fresh simulation: one arrival per job plus the first tick."""
    if config.overrun_policy not in OVERRUN_POLICIES:
        raise ValueError(f"unknown overrun_policy {config.overrun_policy!r}")
    widest = max(workload.jobs, key=lambda j: j.res, default=None)
    if widest is not None and widest.res > platform.num_nodes:
        raise ValueError(
            f"job {widest.job_id} requests {widest.res} nodes but the platform has {platform.num_nodes}"
        )
    state = SimState(config, platform, workload)
    for job in workload.jobs:
        state._push(config.start_time_us + job.subtime_us, EventKind.JOB_ARRIVAL, job_id=job.job_id)
    if config.timeout_us:
        state._push(config.start_time_us + config.timeout_us, EventKind.DECISION_TICK, recurring=True)
    return state


def _apply_effects(state: SimState, batch: EventBatch) -> None:
    for event in batch.events:
        if event.kind == EventKind.JOB_FINISH:
            state._finish_job(event.job_id, COMPLETED)
        elif event.kind == EventKind.JOB_OVERRUN:
            state._finish_job(event.job_id, TERMINATED_OVERRUN)
        elif event.kind == EventKind.TRANSITION_COMPLETE:
            state._apply_transition_complete(event)
        elif event.kind == EventKind.JOB_ARRIVAL:
            state.queue.append(event.job_id)
        elif event.kind == EventKind.DECISION_TICK:
            if event.recurring and state.config.timeout_us and state.is_alive():
                state._push(batch.time + state.config.timeout_us, EventKind.DECISION_TICK, recurring=True)


def apply_decisions(state: SimState, decisions: list[Decision], *, from_policy: bool = True) -> None:
    """Apply a decision list atomically at the current clock.

    Reservations are wiped and rebuilt first (scheduling is stateless across
    invocations), then starts, then power transitions. Any precondition
    violation raises PolicyFault naming the offending decision.
    """
    reserves = [d for d in decisions if isinstance(d, Reserve)]
    starts = [d for d in decisions if isinstance(d, StartJob)]
    ons = [d for d in decisions if isinstance(d, SwitchOn)]
    offs = [d for d in decisions if isinstance(d, SwitchOff)]
    leftovers = len(decisions) - len(reserves) - len(starts) - len(ons) - len(offs)
    if leftovers:
        bad = next(d for d in decisions if not isinstance(d, (Reserve, StartJob, SwitchOn, SwitchOff)))
        raise PolicyFault(bad, "unknown decision type")

    if from_policy:
        for node in state.platform.nodes:
            node.reserved_for = None
        state.reservations = []
        for dec in reserves:
            job = state.jobs.get(dec.job_id)
            if job is None or dec.job_id not in state.queue:
                raise PolicyFault(dec, f"reservation for job {dec.job_id} which is not queued")
            if len(set(dec.node_ids)) != len(dec.node_ids):
                raise PolicyFault(dec, "reservation with duplicate nodes")
            if dec.est_start < state.clock:
                raise PolicyFault(dec, "reservation in the past")
            for nid in dec.node_ids:
                node = state.platform.nodes[nid]
                if node.reserved_for is not None:
                    raise PolicyFault(dec, f"node {node.external_id} is already reserved for {node.reserved_for}")
                node.reserved_for = dec.job_id
            state.reservations.append(
                Reservation(job_id=dec.job_id, node_ids=tuple(sorted(dec.node_ids)), est_start=dec.est_start)
            )
    elif reserves or starts:
        raise PolicyFault((reserves + starts)[0], "external power decisions may only switch nodes on or off")

    for dec in starts:
        job = state.jobs.get(dec.job_id)
        if job is None or dec.job_id not in state.queue:
            raise PolicyFault(dec, f"job {dec.job_id} is not queued")
        if len(set(dec.node_ids)) != len(dec.node_ids):
            raise PolicyFault(dec, "duplicate nodes in allocation")
        if len(dec.node_ids) != job.res:
            raise PolicyFault(dec, f"job {dec.job_id} needs {job.res} nodes, got {len(dec.node_ids)}")
        for nid in dec.node_ids:
            if not 0 <= nid < state.platform.num_nodes:
                raise PolicyFault(dec, f"unknown node {nid}")
            node = state.platform.nodes[nid]
            if not node.is_idle:
                raise PolicyFault(
                    dec,
                    f"node {node.external_id} is not active-idle (state={node.current_state}, job={node.running_job})",
                )
        state._start_job(job, list(dec.node_ids))

    for dec in ons:
        node = state.platform.nodes[dec.node_id]
        if node.current_state != SLEEPING:
            raise PolicyFault(dec, f"switch-on of node {node.external_id} in state {node.current_state}")
        try:
            state.begin_transition(dec.node_id, ACTIVE)
        except TransitionRejected as exc:
            raise PolicyFault(dec, str(exc)) from None

    for dec in offs:
        node = state.platform.nodes[dec.node_id]
        if not node.is_idle:
            raise PolicyFault(dec, f"switch-off of node {node.external_id} which is not active-idle")
        if node.reserved_for is not None:
            raise PolicyFault(dec, f"switch-off of node {node.external_id} reserved for {node.reserved_for}")
        try:
            state.begin_transition(dec.node_id, SLEEPING)
        except TransitionRejected as exc:
            raise PolicyFault(dec, str(exc)) from None


def proceed(state: SimState, policy: Policy) -> tuple[EventBatch, bool]:
    """Advance by exactly one event batch and invoke the policy once.

    Returns the batch (with a SimulationEnd marker appended when it was the
    last one) and whether the simulation is still running afterwards.
    """
    if not state.is_alive():
        raise ValueError("proceed() called on a finished simulation")
    if not state.pending:
        raise StalledSimulation(
            f"{len(state.queue)} job(s) waiting at t={state.clock} but no event can ever fire; "
            "no power policy or agent is switching nodes back on"
        )

    events: list[Event] = []
    while state.pending and not events:
        batch_time = state.pending[0][0]
        while state.pending and state.pending[0][0] == batch_time:
            event = heapq.heappop(state.pending)[3]
            if event.kind != EventKind.DECISION_TICK:
                state._nontick_pending -= 1
            if state._event_valid(event):
                events.append(event)

    if not events:
        # everything left was stale; nothing can happen anymore
        batch = EventBatch(time=state.clock, events=[])
        batch.events.append(Event(time=state.clock, kind=EventKind.SIMULATION_END, seq=0))
        return batch, False

    batch = EventBatch(time=batch_time, events=events)
    state._advance_clock(batch_time)
    _apply_effects(state, batch)

    state.policy_invocations += 1
    state.batch_times.append(batch_time)
    decisions = policy(state, batch)
    apply_decisions(state, decisions or [])

    alive = state.is_alive()
    if not alive:
        state._seq += 1
        batch.events.append(Event(time=batch_time, kind=EventKind.SIMULATION_END, seq=state._seq))
    return batch, alive


def drain(state: SimState, policy: Policy, until_us: int | None = None) -> bool:
    """Run batches until the simulation ends or the next event lies past `until_us`.

    Returns True while the simulation is still running.
    """
    while state.is_alive():
        if until_us is not None and (not state.pending or state.pending[0][0] > until_us):
            return True
        _, alive = proceed(state, policy)
        if not alive:
            return False
    return False


@dataclass
class ResultsBundle:
    job_records: list[JobRecord]
    node_traces: list  # list[metrics.NodeStateTrace]
    summary: object  # metrics.Summary
    state: SimState
    outputs: object | None = None  # report.OutputBundle when written to disk


def run_simulation(run_config, write_outputs: bool = True) -> ResultsBundle:
    """Load inputs, run one full simulation, and emit the output files.

    ``run_config`` is a config.RunConfig; this is the non-RL path (the RL
    path wraps the same state in an environment instead).
    """
    from pathlib import Path

    from . import metrics, report
    from .config import resolved_doc
    from .platform import parse_platform
    from .sched import build_policy
    from .workload import parse_workload

    platform = parse_platform(Path(run_config.platform).read_bytes())
    workload = parse_workload(Path(run_config.workload).read_bytes())
    policy = build_policy(run_config.policy_config())
    engine_config = EngineConfig(
        start_time_us=run_config.start_time_us,
        timeout_us=run_config.timeout_us,
        overrun_policy=run_config.overrun_policy,
        seed=run_config.seed,
    )
    state = start_simulator(engine_config, platform, workload)
    while state.is_alive():
        proceed(state, policy)
    log.info(
        "run finished: %d jobs, %d batches, clock %d us",
        len(state.completed),
        state.policy_invocations,
        state.clock,
    )

    traces = metrics.split_active_intervals(state.finalized_segments(), state.completed)
    summary = metrics.build_summary(
        state.completed, traces, state.platform, state.start_time_us, state.clock
    )
    bundle = ResultsBundle(job_records=state.completed, node_traces=traces, summary=summary, state=state)
    if write_outputs:
        bundle.outputs = report.write_run_outputs(
            run_config.output,
            state.completed,
            traces,
            state.platform,
            summary,
            algorithm=run_config.algorithm,
            seed=run_config.seed,
            echo_doc=resolved_doc(run_config),
            px_per_hour=run_config.report.px_per_hour,
            lane_height=run_config.report.lane_height,
        )
    return bundle
