"""Job model, workload files, synthetic generation, and SWF trace conversion."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction

from .units import seconds_to_us, us_to_seconds

log = logging.getLogger(__name__)


class WorkloadError(ValueError):
    """Raised for any structural problem in a workload document."""


@dataclass(frozen=True)
class Job:
    """One unit of work.

    ``runtime_us`` is the realized execution time at compute speed 1;
    ``reqtime_us`` is the user-requested wall time that schedulers plan with.
    Job ids are normalized to strings (files may use strings or integers).
    """

    job_id: str
    res: int
    subtime_us: int
    reqtime_us: int
    runtime_us: int
    user_id: int = 0
    profile: str = "default"


@dataclass
class Workload:
    nb_res: int
    jobs: list[Job] = field(default_factory=list)


@dataclass(frozen=True)
class GenSpec:
    """Tunable knobs for the synthetic workload generator."""

    num_jobs: int
    arrival_rate: float  # jobs per second
    mean_runtime: float  # seconds
    runtime_cv: float = 0.0  # coefficient of variation; 0 = constant runtime
    min_res: int = 1
    max_res: int = 1
    reqtime_factor: float = 1.5  # reqtime = ceil(factor * runtime)
    seed: int = 0

    def validate(self) -> None:
        if self.num_jobs < 1:
            raise WorkloadError(f"num_jobs must be >= 1, got {self.num_jobs}")
        if not self.arrival_rate > 0:
            raise WorkloadError(f"arrival_rate must be > 0, got {self.arrival_rate}")
        if not self.mean_runtime > 0:
            raise WorkloadError(f"mean_runtime must be > 0, got {self.mean_runtime}")
        if self.runtime_cv < 0:
            raise WorkloadError(f"runtime_cv must be >= 0, got {self.runtime_cv}")
        if not 1 <= self.min_res <= self.max_res:
            raise WorkloadError(f"need 1 <= min_res <= max_res, got {self.min_res}..{self.max_res}")
        if self.reqtime_factor <= 0:
            raise WorkloadError(f"reqtime_factor must be > 0, got {self.reqtime_factor}")


def _job_from_doc(raw: dict, nb_res: int) -> Job:
    if "job_id" not in raw:
        raise WorkloadError("job without job_id")
    job_id = str(raw["job_id"])

    def num_field(key, *, minimum=None, strict=False):
        value = raw.get(key)
        if value is None:
            raise WorkloadError(f"job {job_id}: missing field {key!r}")
        try:
            us = seconds_to_us(value)
        except (TypeError, ValueError):
            raise WorkloadError(f"job {job_id}: {key}: not a number: {value!r}") from None
        if minimum is not None and (us < minimum or (strict and us == minimum)):
            raise WorkloadError(f"job {job_id}: {key}: must be {'>' if strict else '>='} {minimum}, got {value!r}")
        return us

    try:
        res = int(raw["res"])
    except (KeyError, TypeError, ValueError):
        raise WorkloadError(f"job {job_id}: res: missing or not an integer") from None
    if res < 1:
        raise WorkloadError(f"job {job_id}: res: must be >= 1, got {res}")
    if res > nb_res:
        raise WorkloadError(f"job {job_id}: res: requests {res} nodes but nb_res is {nb_res}")

    return Job(
        job_id=job_id,
        res=res,
        subtime_us=num_field("subtime", minimum=0),
        reqtime_us=num_field("reqtime", minimum=0, strict=True),
        runtime_us=num_field("runtime", minimum=0, strict=True),
        user_id=int(raw.get("user_id", 0)),
        profile=str(raw.get("profile", "default")),
    )


def parse_workload(data: bytes | str) -> Workload:
    """Parse and validate a workload.json document.

    Jobs come out sorted by submission time; ties keep file order (stable),
    which is also the FIFO admission order used by the engine.
    """
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise WorkloadError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise WorkloadError("document must be a JSON object")
    try:
        nb_res = int(doc["nb_res"])
    except (KeyError, TypeError, ValueError):
        raise WorkloadError("nb_res: missing or not an integer") from None
    if nb_res < 1:
        raise WorkloadError(f"nb_res: must be >= 1, got {nb_res}")
    raw_jobs = doc.get("jobs")
    if not isinstance(raw_jobs, list):
        raise WorkloadError("jobs: missing or not a list")

    jobs = []
    seen = set()
    for raw in raw_jobs:
        job = _job_from_doc(raw, nb_res)
        if job.job_id in seen:
            raise WorkloadError(f"job {job.job_id}: duplicate job_id")
        seen.add(job.job_id)
        jobs.append(job)
    jobs.sort(key=lambda j: j.subtime_us)  # stable: ties keep file order
    return Workload(nb_res=nb_res, jobs=jobs)


def serialize_workload(workload: Workload) -> bytes:
    """Emit workload.json; output is byte-stable for equal inputs."""
    doc = {
        "nb_res": workload.nb_res,
        "jobs": [
            {
                "job_id": job.job_id,
                "res": job.res,
                "subtime": us_to_seconds(job.subtime_us),
                "user_id": job.user_id,
                "reqtime": us_to_seconds(job.reqtime_us),
                "runtime": us_to_seconds(job.runtime_us),
                "profile": job.profile,
            }
            for job in workload.jobs
        ],
    }
    return json.dumps(doc, indent=2).encode()


def generate_workload(spec: GenSpec) -> Workload:
    """Draw a synthetic workload; equal specs give equal workloads, everywhere.

    Inter-arrival gaps are exponential(arrival_rate); runtimes are log-normal
    with the requested mean and coefficient of variation (cv = 0 degenerates
    to the constant mean); res is uniform on [min_res, max_res]. Exactly three
    draws per job, in that order, from one seeded Mersenne Twister stream.
    """
    spec.validate()
    if spec.reqtime_factor < 1:
        log.warning(
            "reqtime_factor %.3f < 1: generated jobs will overrun their requested wall time",
            spec.reqtime_factor,
        )
    rng = random.Random(spec.seed)
    factor = Fraction(spec.reqtime_factor)
    if spec.runtime_cv > 0:
        sigma = math.sqrt(math.log(1.0 + spec.runtime_cv**2))
        mu = math.log(spec.mean_runtime) - sigma * sigma / 2.0
    jobs = []
    clock_us = 0
    for i in range(1, spec.num_jobs + 1):
        gap = rng.expovariate(spec.arrival_rate)
        clock_us += max(0, seconds_to_us(gap))
        if spec.runtime_cv > 0:
            runtime_s = rng.lognormvariate(mu, sigma)
            runtime_us = max(1, seconds_to_us(runtime_s))
        else:
            runtime_us = seconds_to_us(spec.mean_runtime)
        res = rng.randint(spec.min_res, spec.max_res)
        reqtime_us = max(1, math.ceil(runtime_us * factor))
        jobs.append(
            Job(
                job_id=str(i),
                res=res,
                subtime_us=clock_us,
                reqtime_us=reqtime_us,
                runtime_us=runtime_us,
            )
        )
    return Workload(nb_res=spec.max_res, jobs=jobs)


@dataclass
class SwfConversion:
    workload: Workload
    dropped: int  # parsed fine but unusable (no processors / no runtime / too wide)
    skipped: int  # lines that could not be parsed at all


# 1-based SWF field numbers we consume
_SWF_JOB_ID = 1
_SWF_SUBMIT = 2
_SWF_RUNTIME = 4
_SWF_PROCS = 5
_SWF_REQTIME = 9
_SWF_USER = 12


def convert_swf(data: bytes | str, nb_res: int) -> SwfConversion:
    """Convert a Standard Workload Format trace into a Workload.

    Jobs with missing/zero processors or runtime are dropped and counted, as
    are jobs wider than nb_res (so the result always re-parses cleanly).
    A non-positive requested time falls back to the runtime. Unparsable lines
    are skipped with a counter.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    jobs = []
    seen = set()
    dropped = 0
    skipped = 0
    for lineno, line in enumerate(data.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith(";"):
            continue
        fields = line.split()
        if len(fields) < _SWF_USER:
            log.warning("swf line %d: only %d fields, skipped", lineno, len(fields))
            skipped += 1
            continue
        try:
            job_id = fields[_SWF_JOB_ID - 1]
            submit = float(fields[_SWF_SUBMIT - 1])
            runtime = float(fields[_SWF_RUNTIME - 1])
            procs = int(float(fields[_SWF_PROCS - 1]))
            reqtime = float(fields[_SWF_REQTIME - 1])
            user = int(float(fields[_SWF_USER - 1]))
        except ValueError:
            log.warning("swf line %d: unreadable fields, skipped", lineno)
            skipped += 1
            continue
        if job_id in seen:
            log.warning("swf line %d: duplicate job id %s, skipped", lineno, job_id)
            skipped += 1
            continue
        if procs <= 0 or runtime <= 0:
            dropped += 1
            continue
        if procs > nb_res:
            dropped += 1
            continue
        seen.add(job_id)
        jobs.append(
            Job(
                job_id=job_id,
                res=procs,
                subtime_us=max(0, seconds_to_us(submit)),
                reqtime_us=seconds_to_us(reqtime) if reqtime > 0 else seconds_to_us(runtime),
                runtime_us=seconds_to_us(runtime),
                user_id=max(0, user),
            )
        )
    jobs.sort(key=lambda j: j.subtime_us)
    return SwfConversion(workload=Workload(nb_res=nb_res, jobs=jobs), dropped=dropped, skipped=skipped)
