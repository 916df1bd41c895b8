"""Exact energy accounting and scheduling performance metrics.

Energy is folded over node state traces in integer arithmetic: one interval
contributes duration_us x power_mW nanojoules, exactly. The headline
invariant, asserted on every run, is

    total_energy == sum(energy_by_state.values())

with zero tolerance. Any gap or overlap in a trace is an accounting fault
(an engine bug), never silently corrected.

The computing/idle split of active time is derived here from the job records
intersected with the active intervals, not taken from the engine, so the
energy report can never drift from the schedule it claims to describe.
"""

from __future__ import annotations

from dataclasses import dataclass

from .platform import ACTIVE, SLEEPING, SWITCHING_OFF, SWITCHING_ON, Platform

COMPUTING = "computing"
IDLE = "idle"

TRACE_STATES = (COMPUTING, IDLE, SLEEPING, SWITCHING_ON, SWITCHING_OFF)
WASTE_STATES = (IDLE, SWITCHING_ON, SWITCHING_OFF)


class AccountingFault(RuntimeError):
    """A node state trace does not tile the simulation horizon exactly."""


@dataclass(frozen=True)
class NodeStateTrace:
    """Per-node (state, begin, end) intervals tiling the whole horizon."""

    node_id: int
    intervals: tuple[tuple[str, int, int], ...]


@dataclass(frozen=True)
class Summary:
    total_energy_nj: int
    energy_by_state_nj: dict[str, int]
    wasted_energy_nj: int
    mean_waiting_us: float
    max_waiting_us: int
    total_waiting_us: int
    utilization: float
    makespan_us: int
    job_count: int
    terminated_count: int
    num_nodes: int
    start_time_us: int
    end_time_us: int
    max_active_power_mw: int  # reward normalization constant


def split_active_intervals(
    raw_segments: list[list[tuple[str, int, int]]],
    job_records,
) -> list[NodeStateTrace]:
    """Derive computing/idle traces from platform states plus job records.

    ``raw_segments`` uses platform state names (active/sleeping/switching_*);
    active intervals are split against the job residencies recorded for each
    node. Job intervals outside active time are an accounting fault.
    """
    per_node_jobs: dict[int, list[tuple[int, int]]] = {}
    for record in job_records:
        if record.finish_us == record.start_us:
            continue
        for nid in record.nodes:
            per_node_jobs.setdefault(nid, []).append((record.start_us, record.finish_us))

    traces = []
    for node_id, segments in enumerate(raw_segments):
        jobs = sorted(per_node_jobs.get(node_id, ()))
        for (a_start, a_end), (b_start, b_end) in zip(jobs, jobs[1:]):
            if b_start < a_end:
                raise AccountingFault(
                    f"node {node_id}: job intervals overlap ({a_start},{a_end}) and ({b_start},{b_end})"
                )
        out: list[tuple[str, int, int]] = []
        job_index = 0
        for state_name, begin, end in segments:
            if state_name != ACTIVE:
                out.append((state_name, begin, end))
                continue
            cursor = begin
            while job_index < len(jobs) and jobs[job_index][0] < end:
                j_start, j_end = jobs[job_index]
                if j_start < cursor or j_end > end:
                    raise AccountingFault(
                        f"node {node_id}: job interval ({j_start},{j_end}) escapes active window ({begin},{end})"
                    )
                if j_start > cursor:
                    out.append((IDLE, cursor, j_start))
                out.append((COMPUTING, j_start, j_end))
                cursor = j_end
                job_index += 1
            if cursor < end:
                out.append((IDLE, cursor, end))
        if job_index != len(jobs):
            j_start, j_end = jobs[job_index]
            raise AccountingFault(
                f"node {node_id}: job interval ({j_start},{j_end}) not covered by any active window"
            )
        traces.append(NodeStateTrace(node_id=node_id, intervals=tuple(out)))
    return traces


def _validate_tiling(trace: NodeStateTrace, horizon: tuple[int, int] | None) -> None:
    intervals = trace.intervals
    if not intervals:
        if horizon is not None and horizon[0] != horizon[1]:
            raise AccountingFault(f"node {trace.node_id}: empty trace over non-empty horizon {horizon}")
        return
    previous_end = None
    for state_name, begin, end in intervals:
        if state_name not in TRACE_STATES:
            raise AccountingFault(f"node {trace.node_id}: unknown trace state {state_name!r}")
        if begin >= end:
            raise AccountingFault(f"node {trace.node_id}: empty or inverted interval ({begin},{end})")
        if previous_end is not None:
            if begin > previous_end:
                raise AccountingFault(f"node {trace.node_id}: gap ({previous_end},{begin})")
            if begin < previous_end:
                raise AccountingFault(f"node {trace.node_id}: overlap at {begin}")
        previous_end = end
    if horizon is not None and (intervals[0][1] != horizon[0] or intervals[-1][2] != horizon[1]):
        raise AccountingFault(
            f"node {trace.node_id}: trace spans ({intervals[0][1]},{intervals[-1][2]}) "
            f"but the horizon is {horizon}"
        )


def compute_energy(
    traces: list[NodeStateTrace],
    platform: Platform,
    horizon: tuple[int, int] | None = None,
) -> tuple[int, dict[str, int]]:
    """Exact per-state energy in nanojoules; total is the sum by construction."""
    by_state = {name: 0 for name in TRACE_STATES}
    for trace in traces:
        _validate_tiling(trace, horizon)
        node = platform.nodes[trace.node_id]
        active_mw = node.state_power_mw(ACTIVE)
        for state_name, begin, end in trace.intervals:
            power = active_mw if state_name in (COMPUTING, IDLE) else node.state_power_mw(state_name)
            by_state[state_name] += (end - begin) * power
    return sum(by_state.values()), by_state


def compute_waste(by_state: dict[str, int]) -> int:
    """Energy spent while idle or in a power transition."""
    return sum(by_state.get(name, 0) for name in WASTE_STATES)


def compute_perf(job_records, platform: Platform, start_time_us: int, end_time_us: int) -> dict:
    waits = [record.waiting_us for record in job_records]
    total_wait = sum(waits)
    busy_node_us = sum((r.finish_us - r.start_us) * r.res for r in job_records)
    if job_records:
        makespan = max(r.finish_us for r in job_records) - min(r.start_us for r in job_records)
        span = max(r.finish_us for r in job_records) - start_time_us
    else:
        makespan = 0
        span = 0
    denominator = platform.num_nodes * span
    return {
        "mean_waiting_us": total_wait / len(waits) if waits else 0.0,
        "max_waiting_us": max(waits) if waits else 0,
        "total_waiting_us": total_wait,
        "utilization": busy_node_us / denominator if denominator else 0.0,
        "makespan_us": makespan,
        "busy_node_us": busy_node_us,
    }


def build_summary(
    job_records,
    traces: list[NodeStateTrace],
    platform: Platform,
    start_time_us: int,
    end_time_us: int,
) -> Summary:
    total_nj, by_state = compute_energy(traces, platform, horizon=(start_time_us, end_time_us))
    perf = compute_perf(job_records, platform, start_time_us, end_time_us)
    return Summary(
        total_energy_nj=total_nj,
        energy_by_state_nj=by_state,
        wasted_energy_nj=compute_waste(by_state),
        mean_waiting_us=perf["mean_waiting_us"],
        max_waiting_us=perf["max_waiting_us"],
        total_waiting_us=perf["total_waiting_us"],
        utilization=perf["utilization"],
        makespan_us=perf["makespan_us"],
        job_count=len(job_records),
        terminated_count=sum(1 for r in job_records if r.outcome == "terminated_overrun"),
        num_nodes=platform.num_nodes,
        start_time_us=start_time_us,
        end_time_us=end_time_us,
        max_active_power_mw=platform.max_active_power_mw(),
    )
