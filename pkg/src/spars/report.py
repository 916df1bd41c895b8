"""Run outputs: CSV logs, the summary file, and the Gantt SVG.

All files are written atomically (temp file + rename) and are byte-stable:
no timestamps, no randomness, fixed number formatting (times as seconds with
six decimals, '.' separator). Re-running an identical configuration
overwrites every artifact with identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

from .metrics import NodeStateTrace, Summary
from .platform import Platform
from .units import format_seconds, nj_to_joules, us_to_seconds

JOBS_CSV = "jobs.csv"
NODE_STATES_CSV = "node_states.csv"
SUMMARY_JSON = "summary.json"
GANTT_SVG = "gantt.svg"
CONFIG_ECHO = "config_echo.json"


@dataclass(frozen=True)
class OutputBundle:
    jobs_csv: Path
    node_states_csv: Path
    summary_json: Path
    gantt_svg: Path
    config_echo: Path


def atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def jobs_csv_bytes(records, platform: Platform) -> bytes:
    lines = ["job_id,subtime,start_time,finish_time,waiting_time,res,nodes,outcome"]
    for record in sorted(records, key=lambda r: (r.start_us, r.job_id)):
        nodes = " ".join(str(platform.nodes[nid].external_id) for nid in record.nodes)
        lines.append(
            ",".join(
                [
                    record.job_id,
                    format_seconds(record.subtime_us),
                    format_seconds(record.start_us),
                    format_seconds(record.finish_us),
                    format_seconds(record.waiting_us),
                    str(record.res),
                    nodes,
                    record.outcome,
                ]
            )
        )
    return ("\n".join(lines) + "\n").encode()


def node_states_csv_bytes(traces: list[NodeStateTrace], platform: Platform) -> bytes:
    lines = ["node_id,state,begin,end"]
    for trace in traces:
        ext = platform.nodes[trace.node_id].external_id
        for state_name, begin, end in trace.intervals:
            lines.append(f"{ext},{state_name},{format_seconds(begin)},{format_seconds(end)}")
    return ("\n".join(lines) + "\n").encode()


def summary_doc(summary: Summary, *, algorithm: str, seed: int) -> dict:
    return {
        "algorithm": algorithm,
        "seed": seed,
        "job_count": summary.job_count,
        "terminated_count": summary.terminated_count,
        "makespan_s": us_to_seconds(summary.makespan_us),
        "mean_waiting_s": summary.mean_waiting_us / 10**6,
        "max_waiting_s": us_to_seconds(summary.max_waiting_us),
        "utilization": summary.utilization,
        "total_energy_j": nj_to_joules(summary.total_energy_nj),
        "wasted_energy_j": nj_to_joules(summary.wasted_energy_nj),
        "energy_by_state_j": {k: nj_to_joules(v) for k, v in sorted(summary.energy_by_state_nj.items())},
        "exact": {
            "total_energy_nj": summary.total_energy_nj,
            "wasted_energy_nj": summary.wasted_energy_nj,
            "energy_by_state_nj": dict(sorted(summary.energy_by_state_nj.items())),
            "makespan_us": summary.makespan_us,
            "total_waiting_us": summary.total_waiting_us,
            "max_waiting_us": summary.max_waiting_us,
            "start_time_us": summary.start_time_us,
            "end_time_us": summary.end_time_us,
        },
        "normalization": {
            "num_nodes": summary.num_nodes,
            "max_active_power_mw": summary.max_active_power_mw,
        },
    }


def summary_json_bytes(summary: Summary, *, algorithm: str, seed: int) -> bytes:
    doc = summary_doc(summary, algorithm=algorithm, seed=seed)
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()


def job_color(job_id: str) -> str:
    """Deterministic, evenly spread hue per job id."""
    digest = hashlib.md5(job_id.encode()).digest()
    hue = int.from_bytes(digest[:2], "big") % 360
    return f"hsl({hue},65%,52%)"


_BAND_FILL = {
    "sleeping": "#3b3b4f",
    "switching_on": "url(#hatch-on)",
    "switching_off": "url(#hatch-off)",
}

_LEFT = 64
_TOP = 28
_BOTTOM = 44
_RIGHT = 16


def _nice_tick_us(span_us: int, px_per_us: float, target_px: float = 90.0) -> int:
    candidates = [
        60,
        300,
        900,
        1800,
        3600,
        2 * 3600,
        6 * 3600,
        12 * 3600,
        24 * 3600,
        2 * 24 * 3600,
        7 * 24 * 3600,
        30 * 24 * 3600,
    ]
    for seconds in candidates:
        if seconds * 10**6 * px_per_us >= target_px:
            return seconds * 10**6
    return candidates[-1] * 10**6


def _tick_label(us: int) -> str:
    seconds = us // 10**6
    if seconds % (24 * 3600) == 0 and seconds >= 24 * 3600:
        return f"{seconds // (24 * 3600)}d"
    if seconds % 3600 == 0:
        return f"{seconds // 3600}h"
    if seconds % 60 == 0:
        return f"{seconds // 60}m"
    return f"{seconds}s"


def render_gantt(
    records,
    traces: list[NodeStateTrace],
    platform: Platform,
    start_us: int,
    end_us: int,
    px_per_hour: float = 20.0,
    lane_height: int = 14,
) -> bytes:
    """One horizontal lane per node; x is simulation time.

    Jobs are colored blocks (one ``class="job"`` rect per job record, plus
    ``job-cont`` rects when an allocation is not contiguous in node ids),
    power transitions are hatched bands, sleeping is a dark band, idle stays
    blank.
    """
    span_us = max(1, end_us - start_us)
    px_per_us = px_per_hour / 3_600_000_000.0
    chart_w = max(120.0, span_us * px_per_us)
    n = platform.num_nodes
    chart_h = n * lane_height
    width = _LEFT + chart_w + _RIGHT
    height = _TOP + chart_h + _BOTTOM

    def x(us: int) -> float:
        return _LEFT + (us - start_us) * px_per_us

    def lane_y(node_id: int) -> float:
        return _TOP + node_id * lane_height

    parts = []
    parts.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1f}" height="{height:.1f}" '
        f'viewBox="0 0 {width:.1f} {height:.1f}" font-family="sans-serif" font-size="9">'
    )
    parts.append(
        "<defs>"
        '<pattern id="hatch-on" width="6" height="6" patternTransform="rotate(45)" patternUnits="userSpaceOnUse">'
        '<rect width="6" height="6" fill="#d9ead3"/><line x1="0" y1="0" x2="0" y2="6" stroke="#38761d" stroke-width="2"/></pattern>'
        '<pattern id="hatch-off" width="6" height="6" patternTransform="rotate(-45)" patternUnits="userSpaceOnUse">'
        '<rect width="6" height="6" fill="#f4cccc" fill-opacity="0.6"/><line x1="0" y1="0" x2="0" y2="6" stroke="#990000" stroke-width="2"/></pattern>'
        "</defs>"
    )
    parts.append(f'<rect x="{_LEFT}" y="{_TOP}" width="{chart_w:.2f}" height="{chart_h}" fill="#fcfcfc" stroke="#999"/>')

    # lane separators and labels
    for node in platform.nodes:
        y = lane_y(node.id)
        if node.id:
            parts.append(f'<line x1="{_LEFT}" y1="{y:.1f}" x2="{_LEFT + chart_w:.2f}" y2="{y:.1f}" stroke="#eee"/>')
        parts.append(
            f'<text x="{_LEFT - 6}" y="{y + lane_height * 0.72:.1f}" text-anchor="end" fill="#333">'
            f"n{node.external_id}</text>"
        )

    # non-active bands from the traces
    for trace in traces:
        y = lane_y(trace.node_id)
        for state_name, begin, end in trace.intervals:
            fill = _BAND_FILL.get(state_name)
            if fill is None:
                continue
            parts.append(
                f'<rect class="band {state_name}" x="{x(begin):.2f}" y="{y + 1:.1f}" '
                f'width="{max(0.5, (end - begin) * px_per_us):.2f}" height="{lane_height - 2}" fill="{fill}"/>'
            )

    # job blocks: one "job" rect per record, continuation rects for gaps
    for record in sorted(records, key=lambda r: (r.start_us, r.job_id)):
        color = job_color(record.job_id)
        runs: list[list[int]] = []
        for nid in record.nodes:
            if runs and nid == runs[-1][-1] + 1:
                runs[-1].append(nid)
            else:
                runs.append([nid])
        for index, run in enumerate(runs):
            y = lane_y(run[0])
            cls = "job" if index == 0 else "job-cont"
            title = escape(f"job {record.job_id} [{format_seconds(record.start_us)}..{format_seconds(record.finish_us)}]")
            parts.append(
                f'<rect class="{cls}" x="{x(record.start_us):.2f}" y="{y + 1:.1f}" '
                f'width="{max(0.5, (record.finish_us - record.start_us) * px_per_us):.2f}" '
                f'height="{len(run) * lane_height - 2}" fill="{color}" stroke="#222" stroke-width="0.4">'
                f"<title>{title}</title></rect>"
            )

    # time axis
    axis_y = _TOP + chart_h
    tick = _nice_tick_us(span_us, px_per_us)
    t = 0
    while t <= span_us:
        px = x(start_us + t)
        parts.append(f'<line x1="{px:.2f}" y1="{axis_y}" x2="{px:.2f}" y2="{axis_y + 4}" stroke="#333"/>')
        parts.append(f'<text x="{px:.2f}" y="{axis_y + 14}" text-anchor="middle" fill="#333">{_tick_label(t)}</text>')
        t += tick
    parts.append(f'<text x="{_LEFT}" y="{_TOP - 8}" fill="#333">time &#8594; (simulation)</text>')

    # legend
    ly = axis_y + 24
    legend = [
        ("computing", "hsl(200,65%,52%)"),
        ("sleeping", _BAND_FILL["sleeping"]),
        ("switching_on", _BAND_FILL["switching_on"]),
        ("switching_off", _BAND_FILL["switching_off"]),
    ]
    lx = _LEFT
    for label, fill in legend:
        parts.append(f'<rect x="{lx}" y="{ly - 9}" width="12" height="10" fill="{fill}" stroke="#555" stroke-width="0.4"/>')
        parts.append(f'<text x="{lx + 16}" y="{ly}" fill="#333">{label}</text>')
        lx += 24 + 7 * len(label)

    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode()


def write_run_outputs(
    outdir: str | Path,
    records,
    traces: list[NodeStateTrace],
    platform: Platform,
    summary: Summary,
    *,
    algorithm: str,
    seed: int,
    echo_doc: dict | None = None,
    px_per_hour: float = 20.0,
    lane_height: int = 14,
) -> OutputBundle:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    bundle = OutputBundle(
        jobs_csv=outdir / JOBS_CSV,
        node_states_csv=outdir / NODE_STATES_CSV,
        summary_json=outdir / SUMMARY_JSON,
        gantt_svg=outdir / GANTT_SVG,
        config_echo=outdir / CONFIG_ECHO,
    )
    atomic_write(bundle.jobs_csv, jobs_csv_bytes(records, platform))
    atomic_write(bundle.node_states_csv, node_states_csv_bytes(traces, platform))
    atomic_write(bundle.summary_json, summary_json_bytes(summary, algorithm=algorithm, seed=seed))
    atomic_write(
        bundle.gantt_svg,
        render_gantt(
            records,
            traces,
            platform,
            summary.start_time_us,
            summary.end_time_us,
            px_per_hour=px_per_hour,
            lane_height=lane_height,
        ),
    )
    if echo_doc is not None:
        atomic_write(bundle.config_echo, (json.dumps(echo_doc, indent=2, sort_keys=True) + "\n").encode())
    return bundle
