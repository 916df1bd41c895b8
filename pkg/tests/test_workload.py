import hashlib
import json
import math

import pytest

from spars.workload import (
    GenSpec,
    WorkloadError,
    convert_swf,
    generate_workload,
    parse_workload,
    serialize_workload,
)

from conftest import S


def workload_doc(nb_res=2, jobs=None):
    if jobs is None:
        jobs = [{"job_id": "a", "res": 1, "subtime": 0, "user_id": 0,
                 "reqtime": 10, "runtime": 5, "profile": "p"}]
    return json.dumps({"nb_res": nb_res, "jobs": jobs}).encode()


class TestParse:
    def test_reference_sized_workload_parses(self):
        spec = GenSpec(num_jobs=3614, arrival_rate=1 / 2200, mean_runtime=2000,
                       runtime_cv=1.5, min_res=1, max_res=128, seed=42)
        workload = parse_workload(serialize_workload(generate_workload(spec)))
        assert workload.nb_res == 128
        assert len(workload.jobs) == 3614
        assert max(j.res for j in workload.jobs) <= 128

    def test_empty_workload(self):
        workload = parse_workload(workload_doc(jobs=[]))
        assert workload.jobs == []

    def test_res_wider_than_nb_res_names_the_job(self):
        jobs = [{"job_id": "wide", "res": 3, "subtime": 0, "reqtime": 1, "runtime": 1}]
        with pytest.raises(WorkloadError, match="wide"):
            parse_workload(workload_doc(nb_res=2, jobs=jobs))

    def test_duplicate_job_id(self):
        jobs = [
            {"job_id": 1, "res": 1, "subtime": 0, "reqtime": 1, "runtime": 1},
            {"job_id": "1", "res": 1, "subtime": 2, "reqtime": 1, "runtime": 1},
        ]
        with pytest.raises(WorkloadError, match="duplicate"):
            parse_workload(workload_doc(jobs=jobs))

    def test_negative_and_zero_fields_rejected(self):
        bad = {"job_id": "x", "res": 1, "subtime": -1, "reqtime": 1, "runtime": 1}
        with pytest.raises(WorkloadError, match="x.*subtime"):
            parse_workload(workload_doc(jobs=[bad]))
        bad = {"job_id": "x", "res": 1, "subtime": 0, "reqtime": 0, "runtime": 1}
        with pytest.raises(WorkloadError, match="x.*reqtime"):
            parse_workload(workload_doc(jobs=[bad]))

    def test_sort_is_stable_on_equal_subtimes(self):
        jobs = [
            {"job_id": "late", "res": 1, "subtime": 9, "reqtime": 1, "runtime": 1},
            {"job_id": "b", "res": 1, "subtime": 3, "reqtime": 1, "runtime": 1},
            {"job_id": "a", "res": 1, "subtime": 3, "reqtime": 1, "runtime": 1},
        ]
        workload = parse_workload(workload_doc(jobs=jobs))
        assert [j.job_id for j in workload.jobs] == ["b", "a", "late"]


class TestGenerator:
    def test_determinism_byte_identical(self):
        spec = GenSpec(num_jobs=200, arrival_rate=0.01, mean_runtime=100, runtime_cv=0.7,
                       min_res=1, max_res=8, seed=99)
        assert serialize_workload(generate_workload(spec)) == serialize_workload(generate_workload(spec))

    def test_cv_zero_gives_constant_runtime(self):
        spec = GenSpec(num_jobs=50, arrival_rate=0.5, mean_runtime=600, runtime_cv=0.0, seed=1)
        workload = generate_workload(spec)
        assert all(j.runtime_us == 600 * S for j in workload.jobs)

    def test_sample_mean_interarrival_matches_rate(self):
        # frozen oracle: one recorded run of the generator itself
        spec = GenSpec(num_jobs=10**4, arrival_rate=0.01, mean_runtime=600, runtime_cv=1.0,
                       min_res=1, max_res=4, seed=2024)
        workload = generate_workload(spec)
        assert workload.jobs[-1].subtime_us == 986_077_216_680  # regression pin
        mean_gap_s = workload.jobs[-1].subtime_us / len(workload.jobs) / S
        assert math.isclose(mean_gap_s, 100.0, rel_tol=0.05)
        digest = hashlib.sha256(serialize_workload(workload)).hexdigest()
        assert digest == "0c623963e99cf82478b26fc2fa9a58de8dd3518ea7b09e8bc298f9844a1c28f0"

    def test_reqtime_factor_applied_as_ceiling(self):
        spec = GenSpec(num_jobs=10, arrival_rate=1, mean_runtime=100, runtime_cv=0.5,
                       reqtime_factor=1.5, seed=5)
        for job in generate_workload(spec).jobs:
            assert job.reqtime_us == math.ceil(job.runtime_us * 3 / 2)

    def test_reqtime_factor_below_one_warns_but_generates(self, caplog):
        spec = GenSpec(num_jobs=5, arrival_rate=1, mean_runtime=100, reqtime_factor=0.5, seed=1)
        with caplog.at_level("WARNING"):
            workload = generate_workload(spec)
        assert any("overrun" in r.message for r in caplog.records)
        assert all(j.reqtime_us < j.runtime_us for j in workload.jobs)

    def test_res_respects_bounds(self):
        spec = GenSpec(num_jobs=500, arrival_rate=1, mean_runtime=10, min_res=2, max_res=5, seed=3)
        workload = generate_workload(spec)
        assert {j.res for j in workload.jobs} <= {2, 3, 4, 5}
        assert workload.nb_res == 5

    def test_invalid_specs_rejected(self):
        with pytest.raises(WorkloadError):
            GenSpec(num_jobs=0, arrival_rate=1, mean_runtime=1).validate()
        with pytest.raises(WorkloadError):
            GenSpec(num_jobs=1, arrival_rate=0, mean_runtime=1).validate()
        with pytest.raises(WorkloadError):
            GenSpec(num_jobs=1, arrival_rate=1, mean_runtime=1, min_res=3, max_res=2).validate()


SWF_FIXTURE = """\
; Comment line describing the trace
; Version: 2.2
1 0 10 300 4 -1 -1 4 600 -1 1 7 -1 -1 -1 -1 -1 -1
2 120 5 100 -1 -1 -1 2 -1 -1 1 3 -1 -1 -1 -1 -1 -1
3 200 8 -1 2 -1 -1 2 500 -1 1 9 -1 -1 -1 -1 -1 -1
4 300 8 120 2 -1 -1 2 -1 -1 1 9 -1 -1 -1 -1 -1 -1
garbage line that cannot parse
"""


class TestSwf:
    def test_basic_conversion(self):
        result = convert_swf(SWF_FIXTURE, nb_res=8)
        ids = [j.job_id for j in result.workload.jobs]
        assert ids == ["1", "4"]  # 2 has no processors, 3 has no runtime
        assert result.dropped == 2
        assert result.skipped == 1

    def test_negative_requested_time_falls_back_to_runtime(self):
        result = convert_swf(SWF_FIXTURE, nb_res=8)
        job4 = next(j for j in result.workload.jobs if j.job_id == "4")
        assert job4.reqtime_us == 120 * S
        job1 = next(j for j in result.workload.jobs if j.job_id == "1")
        assert job1.reqtime_us == 600 * S

    def test_too_wide_jobs_dropped_for_closure(self):
        result = convert_swf(SWF_FIXTURE, nb_res=2)
        assert [j.job_id for j in result.workload.jobs] == ["4"]
        assert result.dropped == 3

    def test_convert_then_parse_closure(self):
        result = convert_swf(SWF_FIXTURE, nb_res=8)
        reparsed = parse_workload(serialize_workload(result.workload))
        assert reparsed.jobs == result.workload.jobs
