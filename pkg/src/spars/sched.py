"""Scheduling policies: FCFS and EASY backfilling, each power-state layered.

A policy is a pure function of the simulation state; it is re-run from
scratch after every event batch and returns a list of decisions the engine
applies atomically. Reservations are likewise recomputed every invocation
rather than bound early, so node assignments always reflect the current
state of the machine room.

Power-state variants:

* ``psus``   - power-state unaware: every node stays on forever.
* ``psas_ao``- auto on/off: idle nodes are switched off after a configurable
  idle timeout unless they sit inside the head job's reservation, and
  sleeping nodes are proactively booted when the head job (or its
  reservation) will need them within one boot delay.
* ``psas_ipm``- power decisions are delegated to an external manager (an RL
  agent or scripted policy driving the environment); the scheduler itself
  never switches nodes but still plans around boot delays.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

from .platform import ACTIVE, SLEEPING, SWITCHING_OFF, SWITCHING_ON, Node

if TYPE_CHECKING:  # engine imports this module; keep the reverse edge type-only
    from .engine import EventBatch, SimState

log = logging.getLogger(__name__)

FAR_FUTURE = 2**62  # placeholder availability for nodes that can never serve


@dataclass(frozen=True)
class StartJob:
    job_id: str
    node_ids: tuple[int, ...]
    issued_at: int = 0


@dataclass(frozen=True)
class SwitchOff:
    node_id: int
    issued_at: int = 0


@dataclass(frozen=True)
class SwitchOn:
    node_id: int
    issued_at: int = 0


@dataclass(frozen=True)
class Reserve:
    job_id: str
    node_ids: tuple[int, ...]
    est_start: int
    issued_at: int = 0


Decision = Union[StartJob, SwitchOff, SwitchOn, Reserve]

BASE_ALGORITHMS = ("fcfs", "easy")
PSM_VARIANTS = ("psus", "psas_ao", "psas_ipm")

ALGORITHM_NAMES = tuple(f"{base}_{psm}" for base in BASE_ALGORITHMS for psm in PSM_VARIANTS)

# legacy spelling that predates the auto-on / ipm split
_ALGORITHM_ALIASES = {"easy_psas": "easy_psas_ao", "fcfs_psas": "fcfs_psas_ao"}


@dataclass(frozen=True)
class PolicyConfig:
    algorithm: str  # "fcfs" | "easy"
    psm: str  # "psus" | "psas_ao" | "psas_ipm"
    idle_timeout_us: int = 300 * 10**6
    boot_lookahead: bool = True

    def __post_init__(self):
        if self.algorithm not in BASE_ALGORITHMS:
            raise ValueError(f"unknown base algorithm {self.algorithm!r}")
        if self.psm not in PSM_VARIANTS:
            raise ValueError(f"unknown psm variant {self.psm!r}")
        if self.psm == "psas_ao" and self.idle_timeout_us <= 0:
            raise ValueError("psas_ao requires idle_timeout > 0")


def parse_algorithm(name: str, idle_timeout_us: int = 300 * 10**6) -> PolicyConfig:
    if name in _ALGORITHM_ALIASES:
        canonical = _ALGORITHM_ALIASES[name]
        log.warning("algorithm %r is deprecated; using %r", name, canonical)
        name = canonical
    if name not in ALGORITHM_NAMES:
        raise ValueError(f"unknown algorithm {name!r}; expected one of {', '.join(ALGORITHM_NAMES)}")
    base, psm = name.split("_", 1)
    return PolicyConfig(algorithm=base, psm=psm, idle_timeout_us=idle_timeout_us)


def _startable(state: "SimState") -> list[Node]:
    """Active-idle nodes in selection order: longest idle first, then id."""
    nodes = [n for n in state.platform.nodes if n.is_idle]
    nodes.sort(key=lambda n: (n.idle_since, n.id))
    return nodes


def _boot_delay_us(node: Node) -> int | None:
    sleeping = node.states.get(SLEEPING)
    if sleeping is None:
        return None
    return sleeping.transitions.get(ACTIVE)


def _availability(state: "SimState", cfg: PolicyConfig, pending_starts: dict[int, int]) -> list[tuple[int, int, Node]]:
    """(available_at, preference, node) for every node, planning with reqtime.

    ``pending_starts`` maps node id -> release time for jobs started earlier
    in this same invocation (they are not in state.running yet).
    Sleeping/switching nodes are usable only under boot_lookahead, at the
    instant their (implied) switch-on would complete.
    """
    now = state.clock
    rows = []
    for node in state.platform.nodes:
        prefer = 1  # 0 = active-idle, 1 = everything else
        if node.id in pending_starts:
            avail = pending_starts[node.id]
        elif node.running_job is not None:
            entry = state.running[node.running_job]
            avail = max(now, entry.start + entry.job.reqtime_us)
        elif node.current_state == ACTIVE:
            avail = now
            prefer = 0
        elif not cfg.boot_lookahead:
            avail = FAR_FUTURE
        elif node.current_state == SLEEPING:
            delay = _boot_delay_us(node)
            avail = FAR_FUTURE if delay is None else now + delay
        elif node.current_state == SWITCHING_ON:
            avail = node.state_since + node.states[SWITCHING_ON].transitions[ACTIVE]
        else:  # switching_off: finish the descent, then boot
            off_done = node.state_since + node.states[SWITCHING_OFF].transitions[SLEEPING]
            delay = _boot_delay_us(node)
            avail = FAR_FUTURE if delay is None else off_done + delay
        rows.append((avail, prefer, node))
    return rows


def _compute_reservation(
    state: "SimState",
    cfg: PolicyConfig,
    head_res: int,
    pending_starts: dict[int, int],
) -> tuple[int, tuple[int, ...]] | None:
    """Shadow time and node set for the first blocked job, or None.

    The shadow time is the earliest instant at which head_res nodes are
    simultaneously available assuming every running job lasts exactly its
    requested wall time. Ties prefer active nodes, then longest-idle, then id.
    """
    rows = _availability(state, cfg, pending_starts)
    rows.sort(key=lambda r: (r[0], r[1], r[2].idle_since, r[2].id))
    chosen = rows[:head_res]
    if len(chosen) < head_res or chosen[-1][0] >= FAR_FUTURE:
        return None
    shadow = chosen[-1][0]
    return shadow, tuple(sorted(node.id for _, _, node in chosen))


def fcfs_decide(state: "SimState", cfg: PolicyConfig) -> list[Decision]:
    """Start jobs strictly in queue order; stop at the first that won't fit."""
    now = state.clock
    decisions: list[Decision] = []
    free = _startable(state)
    for job_id in state.queue:
        job = state.jobs[job_id]
        if job.res > len(free):
            break
        alloc, free = free[: job.res], free[job.res :]
        decisions.append(StartJob(job_id, tuple(sorted(n.id for n in alloc)), issued_at=now))
    return decisions


def easy_decide(state: "SimState", cfg: PolicyConfig) -> list[Decision]:
    """FCFS plus one reservation for the first blocked job, plus backfilling.

    A later job backfills only if it fits in idle nodes right now and either
    finishes (by its requested wall time) before the reservation's shadow
    time or touches no reserved node.
    """
    now = state.clock
    decisions: list[Decision] = []
    free = _startable(state)
    pending_starts: dict[int, int] = {}

    position = 0
    queue = state.queue
    while position < len(queue):
        job = state.jobs[queue[position]]
        if job.res > len(free):
            break
        alloc, free = free[: job.res], free[job.res :]
        for node in alloc:
            pending_starts[node.id] = now + job.reqtime_us
        decisions.append(StartJob(job.job_id, tuple(sorted(n.id for n in alloc)), issued_at=now))
        position += 1

    if position >= len(queue):
        return decisions

    head = state.jobs[queue[position]]
    reservation = _compute_reservation(state, cfg, head.res, pending_starts)
    if reservation is None:
        # nothing guarantees the head a start; do not backfill around it
        return decisions
    shadow, reserved = reservation
    decisions.append(Reserve(head.job_id, reserved, est_start=shadow, issued_at=now))
    reserved_set = set(reserved)

    for job_id in queue[position + 1 :]:
        job = state.jobs[job_id]
        if job.res > len(free):
            continue
        if now + job.reqtime_us <= shadow:
            candidates = free
        else:
            candidates = [n for n in free if n.id not in reserved_set]
            if job.res > len(candidates):
                continue
        alloc = candidates[: job.res]
        taken = {n.id for n in alloc}
        free = [n for n in free if n.id not in taken]
        for node in alloc:
            pending_starts[node.id] = now + job.reqtime_us
        decisions.append(StartJob(job.job_id, tuple(sorted(taken)), issued_at=now))

    return decisions


def apply_psm(state: "SimState", cfg: PolicyConfig, base: list[Decision]) -> list[Decision]:
    """Layer power-state decisions over the base scheduler's output."""
    if cfg.psm != "psas_ao":
        return base  # psus: never touch power; psas_ipm: someone else does

    now = state.clock
    decisions = list(base)
    allocated = {nid for d in base if isinstance(d, StartJob) for nid in d.node_ids}
    reserves = [d for d in base if isinstance(d, Reserve)]
    reserved_ids = {nid for d in reserves for nid in d.node_ids}

    # proactively boot sleeping nodes the head will need within one boot delay
    boot_targets: list[int] = []
    if reserves:
        for dec in reserves:
            for nid in sorted(dec.node_ids):
                node = state.platform.nodes[nid]
                if node.current_state != SLEEPING:
                    continue
                delay = _boot_delay_us(node)
                if delay is not None and dec.est_start <= now + delay:
                    boot_targets.append(nid)
    else:
        # FCFS has no reservations: cover the head job's deficit directly
        waiting = [j for j in state.queue if not any(isinstance(d, StartJob) and d.job_id == j for d in base)]
        if waiting:
            head = state.jobs[waiting[0]]
            idle_free = sum(1 for n in state.platform.nodes if n.is_idle and n.id not in allocated)
            incoming = sum(1 for n in state.platform.nodes if n.current_state == SWITCHING_ON)
            deficit = head.res - idle_free - incoming
            for node in state.platform.nodes:
                if deficit <= 0:
                    break
                if node.current_state == SLEEPING and _boot_delay_us(node) is not None:
                    boot_targets.append(node.id)
                    deficit -= 1
    for nid in boot_targets:
        decisions.append(SwitchOn(nid, issued_at=now))

    # nodes the head job is counting on must not be powered down underneath it
    protected = set(reserved_ids)
    if not reserves and state.queue:
        pending = [j for j in state.queue if not any(isinstance(d, StartJob) and d.job_id == j for d in base)]
        if pending:
            head = state.jobs[pending[0]]
            idle_pref = [n for n in _startable(state) if n.id not in allocated]
            protected.update(n.id for n in idle_pref[: head.res])

    for node in state.platform.nodes:
        if not node.is_idle or node.id in allocated or node.id in protected:
            continue
        if node.transition_delay_us(SLEEPING) is None:
            continue
        if now - node.idle_since >= cfg.idle_timeout_us:
            decisions.append(SwitchOff(node.id, issued_at=now))

    return decisions


def decide(state: "SimState", batch: "EventBatch", cfg: PolicyConfig) -> list[Decision]:
    base = easy_decide(state, cfg) if cfg.algorithm == "easy" else fcfs_decide(state, cfg)
    return apply_psm(state, cfg, base)


def build_policy(cfg: PolicyConfig):
    """Bind a PolicyConfig into the engine's policy callable."""

    def policy(state: "SimState", batch: "EventBatch") -> list[Decision]:
        return decide(state, batch, cfg)

    policy.config = cfg
    return policy
