import json

import pytest

from irfuzz.campaign import IterationReport
from irfuzz.errors import MalformedCsv, NoTests, ZeroElapsed
from irfuzz.metrics import (
    OverlapReport,
    bugs_over_time,
    emit_report,
    ingest_coverage_summary,
    overlap,
    registry_bug_times,
    throughput,
    validity_rate,
)
from irfuzz.triage import BugKey, BugKeyKind, BugRegistry, CrashRecord


def report(iteration=1, generated=100, valid=70, elapsed=60.0, crashes=0, new_bugs=0):
    return IterationReport(
        iteration=iteration,
        generated=generated,
        compile_valid=valid,
        crashes=crashes,
        new_bugs=new_bugs,
        programs_added=0,
        transformed_added=0,
        elapsed=elapsed,
    )


class TestThroughput:
    def test_hand_value(self):
        # 138 tests in 10 minutes -> 13.8 per minute
        reports = [report(1, 100, 70, 400.0), report(2, 38, 30, 200.0)]
        assert throughput(reports) == pytest.approx(13.8)

    def test_no_tests_is_zero(self):
        assert throughput([report(generated=0, valid=0, elapsed=5.0)]) == 0.0
        assert throughput([]) == 0.0

    def test_zero_elapsed_raises(self):
        with pytest.raises(ZeroElapsed):
            throughput([report(generated=10, elapsed=0.0)])


class TestValidityRate:
    def test_hand_value(self):
        reports = [report(1, 100, 70), report(2, 40, 14)]
        assert validity_rate(reports) == pytest.approx(84 / 140) == 0.6

    def test_no_tests(self):
        with pytest.raises(NoTests):
            validity_rate([report(generated=0, valid=0)])


class TestBugsOverTime:
    def test_hand_curve(self):
        points = bugs_over_time(
            bug_times=[100.0, 4000.0, 7300.0],
            test_events=[(3600.0, 50), (7200.0, 50)],
            interval=3600.0,
        )
        assert [(p.elapsed, p.cumulative_bugs, p.cumulative_tests) for p in points] == [
            (3600.0, 1, 50),
            (7200.0, 2, 100),
            (10800.0, 3, 100),
        ]

    def test_empty(self):
        points = bugs_over_time([], [], interval=60.0)
        assert [(p.cumulative_bugs, p.cumulative_tests) for p in points] == [(0, 0)]

    def test_monotone(self):
        points = bugs_over_time([5.0, 5.0, 80.0, 120.0], [(60.0, 7)], interval=30.0)
        bugs = [p.cumulative_bugs for p in points]
        assert bugs == sorted(bugs)

    def test_registry_bug_times_uses_first_seen(self):
        reg = BugRegistry()
        key = BugKey(BugKeyKind.ASSERTION, "k")
        for pid, t in [("a", 30.0), ("b", 10.0)]:
            reg.register_crash(
                CrashRecord(pid, "-cse", key, "x", first_seen=t, iteration=1)
            )
        assert registry_bug_times(reg) == [10.0]
        assert registry_bug_times(reg, epoch=4.0) == [6.0]


class TestOverlap:
    def test_three_way_hand_enumeration(self):
        rep = overlap({"A": {1, 2, 3}, "B": {2, 3, 4}, "C": {3, 5}})
        assert rep.counts == {"A": 3, "B": 3, "C": 2}
        assert rep.regions == {
            "A": 1,
            "B": 1,
            "C": 1,
            "A&B": 1,
            "A&C": 0,
            "B&C": 0,
            "A&B&C": 1,
        }
        assert rep.union_size() == 5

    def test_two_way_disjoint(self):
        rep = overlap({"x": {1}, "y": {2, 3}})
        assert rep.regions == {"x": 1, "y": 2, "x&y": 0}

    def test_regions_partition_union(self):
        rep = overlap({"a": set(range(10)), "b": set(range(5, 15)), "c": {0, 14}})
        assert rep.union_size() == 15

    def test_registries_accepted(self):
        def reg_with(sigs):
            reg = BugRegistry()
            for i, s in enumerate(sigs):
                reg.register_crash(
                    CrashRecord(
                        f"p{i}",
                        "-cse",
                        BugKey(BugKeyKind.ASSERTION, s),
                        "x",
                        0.0,
                        1,
                    )
                )
            return reg

        rep = overlap({"m": reg_with(["a", "b"]), "n": reg_with(["b", "c"])})
        assert rep.regions == {"m": 1, "n": 1, "m&n": 1}

    def test_single_registry_rejected(self):
        with pytest.raises(ValueError):
            overlap({"only": {1}})


class TestCoverageCsv:
    def test_parse_with_header(self, tmp_path):
        f = tmp_path / "cov.csv"
        f.write_text("timestamp,percent\n3600,21.5\n86400,28.22\n")
        assert ingest_coverage_summary(f) == [(3600.0, 21.5), (86400.0, 28.22)]

    def test_parse_headerless(self, tmp_path):
        f = tmp_path / "cov.csv"
        f.write_text("60,1.0\n")
        assert ingest_coverage_summary(f) == [(60.0, 1.0)]

    def test_wrong_columns(self, tmp_path):
        f = tmp_path / "cov.csv"
        f.write_text("1,2,3\n")
        with pytest.raises(MalformedCsv):
            ingest_coverage_summary(f)

    def test_non_numeric(self, tmp_path):
        f = tmp_path / "cov.csv"
        f.write_text("sixty,1.0\n")
        with pytest.raises(MalformedCsv):
            ingest_coverage_summary(f)


class TestEmitReport:
    def _registry(self):
        reg = BugRegistry()
        reg.register_crash(
            CrashRecord(
                "p1",
                "-cse",
                BugKey(BugKeyKind.ASSERTION, "k1"),
                "Assertion 'k1' failed",
                first_seen=30.0,
                iteration=1,
            )
        )
        return reg

    def test_files_and_summary(self, tmp_path):
        reports = [report(1, 100, 70, 300.0), report(2, 100, 80, 300.0)]
        summary = emit_report(
            tmp_path, reports, self._registry(), interval=300.0
        )
        assert summary["unique_bugs"] == 1
        assert summary["throughput_tests_per_minute"] == pytest.approx(20.0)
        assert summary["validity_rate"] == 0.75
        on_disk = json.loads((tmp_path / "report.json").read_text())
        assert on_disk == summary
        lines = (tmp_path / "bugs_over_time.csv").read_text().splitlines()
        assert lines[0] == "elapsed_seconds,cumulative_bugs,cumulative_tests"
        assert lines[1] == "300.0,1,100"
        assert lines[2] == "600.0,1,200"

    def test_compare_writes_overlap(self, tmp_path):
        other = BugRegistry()
        other.register_crash(
            CrashRecord(
                "q1",
                "-cse",
                BugKey(BugKeyKind.TRACE, "mlir::x()", low_confidence=True),
                "x",
                0.0,
                1,
            )
        )
        summary = emit_report(
            tmp_path,
            [report()],
            self._registry(),
            compare={"baseline": other},
        )
        ov = json.loads((tmp_path / "overlap.json").read_text())
        assert ov["counts"] == {"baseline": 1, "campaign": 1}
        assert ov["regions"]["baseline&campaign"] == 0
        assert ov["low_confidence_keys"] == ["mlir::x()"]
        assert summary["overlap"]["counts"] == ov["counts"]

    def test_idempotent(self, tmp_path):
        args = ([report()], self._registry())
        emit_report(tmp_path, *args)
        first = (tmp_path / "report.json").read_bytes()
        emit_report(tmp_path, *args)
        assert (tmp_path / "report.json").read_bytes() == first

    def test_coverage_included(self, tmp_path):
        summary = emit_report(
            tmp_path, [report()], self._registry(), coverage=[(3600.0, 12.5)]
        )
        assert summary["coverage"] == [
            {"elapsed_seconds": 3600.0, "percent": 12.5}
        ]
