import json

import pytest

from spars import engine, sched
from spars.platform import uniform_platform
from spars.workload import Job, Workload

S = 10**6  # microseconds per second

# Reference node profile used throughout: 190 W active, 9 W asleep,
# 45 min switch-on at 190 W, 30 min switch-off at 9 W, speed 1.
ACTIVE_W = 190
SLEEP_W = 9
ON_S = 2700
OFF_S = 1800


@pytest.fixture
def platform2():
    return uniform_platform(2)


@pytest.fixture
def platform4():
    return uniform_platform(4)


def make_job(job_id, res, subtime_s, reqtime_s, runtime_s=None, **kw):
    runtime_s = reqtime_s if runtime_s is None else runtime_s
    return Job(
        job_id=str(job_id),
        res=res,
        subtime_us=round(subtime_s * S),
        reqtime_us=round(reqtime_s * S),
        runtime_us=round(runtime_s * S),
        **kw,
    )


def make_workload(nb_res, jobs):
    return Workload(nb_res=nb_res, jobs=sorted(jobs, key=lambda j: j.subtime_us))


def run_sim(
    platform,
    workload,
    algorithm="easy_psus",
    timeout_s=None,
    overrun="continue",
    start_s=0,
    idle_timeout_s=300,
    spy=None,
):
    """Run a workload to completion; returns the final SimState."""
    cfg = sched.parse_algorithm(algorithm, idle_timeout_us=round(idle_timeout_s * S))
    policy = sched.build_policy(cfg)
    if spy is not None:
        inner = policy

        def policy(state, batch):
            decisions = inner(state, batch)
            spy(state, batch, decisions)
            return decisions

    state = engine.start_simulator(
        engine.EngineConfig(
            start_time_us=round(start_s * S),
            timeout_us=None if timeout_s is None else round(timeout_s * S),
            overrun_policy=overrun,
        ),
        platform,
        workload,
    )
    while state.is_alive():
        engine.proceed(state, policy)
    return state


def records_by_id(state):
    return {r.job_id: r for r in state.completed}


def platform_doc(num_nodes=1, **kw):
    """Raw platform.json document for parser tests."""
    active_w = kw.get("active_w", ACTIVE_W)
    sleep_w = kw.get("sleep_w", SLEEP_W)
    on_s = kw.get("on_s", ON_S)
    off_s = kw.get("off_s", OFF_S)
    return {
        "nodes": [
            {
                "id": i,
                "dvfs_profiles": {"base": {"power": active_w, "speed": kw.get("speed", 1.0)}},
                "dvfs_mode": "base",
                "states": {
                    "active": {"power": None, "speed": None, "transitions": {"sleeping": off_s}},
                    "sleeping": {"power": sleep_w, "speed": None, "transitions": {"active": on_s}},
                    "switching_on": {"power": active_w, "speed": None},
                    "switching_off": {"power": sleep_w, "speed": None},
                },
            }
            for i in range(num_nodes)
        ]
    }


def doc_bytes(doc):
    return json.dumps(doc).encode()
