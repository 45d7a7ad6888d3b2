"""Campaign analytics: bug curves, throughput, validity, overlap."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Optional, Sequence

from .campaign import IterationReport
from .corpus import CorpusStats
from .errors import MalformedCsv, NoTests, ZeroElapsed
from .triage import BugKey, BugRegistry

DEFAULT_INTERVAL = 3600.0  # seconds


@dataclass(frozen=True)
class TimeSeriesPoint:
    elapsed: float
    cumulative_bugs: int
    cumulative_tests: int


def bugs_over_time(
    bug_times: Sequence[float],
    test_events: Sequence[tuple[float, int]] = (),
    interval: float = DEFAULT_INTERVAL,
) -> list[TimeSeriesPoint]:
    """Cumulative distinct-bug curve sampled at a fixed interval.

    ``bug_times`` are first-seen offsets in seconds; ``test_events`` are
    (offset, tests_completed) pairs, typically one per iteration.
    """
    bug_times = sorted(bug_times)
    tests = sorted(test_events)
    end = max(
        [bug_times[-1] if bug_times else 0.0]
        + [t for t, _ in tests[-1:]]
    )
    points = []
    t = interval
    while True:
        nb = sum(1 for b in bug_times if b <= t)
        nt = sum(n for at, n in tests if at <= t)
        points.append(TimeSeriesPoint(t, nb, nt))
        if t >= end:
            break
        t += interval
    return points


def registry_bug_times(reg: BugRegistry, epoch: float = 0.0) -> list[float]:
    times = []
    for records in reg.buckets.values():
        times.append(min(r.first_seen for r in records) - epoch)
    return times


def throughput(reports: Sequence[IterationReport]) -> float:
    """Tests generated per minute over all iterations."""
    total_tests = sum(r.generated for r in reports)
    total_minutes = sum(r.elapsed for r in reports) / 60.0
    if total_tests == 0:
        return 0.0
    if total_minutes <= 0:
        raise ZeroElapsed("no elapsed time recorded")
    return total_tests / total_minutes


def validity_rate(reports: Sequence[IterationReport]) -> float:
    generated = sum(r.generated for r in reports)
    if generated == 0:
        raise NoTests("no generated tests")
    return sum(r.compile_valid for r in reports) / generated


@dataclass(frozen=True)
class OverlapReport:
    counts: dict[str, int]  # unique bugs per label
    regions: dict[str, int]  # exclusive region sizes, labels joined by '&'

    def union_size(self) -> int:
        return sum(self.regions.values())

    def as_dict(self) -> dict:
        return {"counts": dict(self.counts), "regions": dict(self.regions)}


def overlap(registries: dict[str, BugRegistry | set]) -> OverlapReport:
    """Exclusive region sizes over bug-key sets, inclusion-exclusion style."""
    if len(registries) < 2:
        raise ValueError("overlap needs at least two registries")
    key_sets: dict[str, set] = {}
    for label, reg in registries.items():
        key_sets[label] = set(reg) if isinstance(reg, set) else set(reg.keys())
    labels = sorted(key_sets)
    regions: dict[str, int] = {}
    for r in range(1, len(labels) + 1):
        for combo in combinations(labels, r):
            inside = set.intersection(*(key_sets[l] for l in combo))
            outside = set.union(
                *(key_sets[l] for l in labels if l not in combo), set()
            ) if len(combo) < len(labels) else set()
            regions["&".join(combo)] = len(inside - outside)
    counts = {l: len(key_sets[l]) for l in labels}
    return OverlapReport(counts=counts, regions=regions)


def ingest_coverage_summary(path) -> list[tuple[float, float]]:
    """Parse a two-column ``timestamp,percent`` CSV."""
    series = []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), 1):
            if not row or (lineno == 1 and row[0].strip().lower() == "timestamp"):
                continue
            if len(row) != 2:
                raise MalformedCsv(f"{path}:{lineno}: expected 2 columns")
            try:
                series.append((float(row[0]), float(row[1])))
            except ValueError as e:
                raise MalformedCsv(f"{path}:{lineno}: {e}") from e
    return series


def emit_report(
    directory,
    reports: Sequence[IterationReport],
    registry: BugRegistry,
    corpus_stats: Optional[CorpusStats] = None,
    compare: Optional[dict[str, BugRegistry]] = None,
    coverage: Optional[Sequence[tuple[float, float]]] = None,
    interval: float = DEFAULT_INTERVAL,
) -> dict:
    """Write report.json, bugs_over_time.csv, overlap.json, corpus_stats.json."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)

    bug_times = sorted(registry_bug_times(registry))
    offsets = []
    acc = 0.0
    for r in reports:
        acc += r.elapsed
        offsets.append((acc, r.generated))
    curve = bugs_over_time(bug_times, offsets, interval)

    with open(root / "bugs_over_time.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["elapsed_seconds", "cumulative_bugs", "cumulative_tests"])
        for p in curve:
            w.writerow([p.elapsed, p.cumulative_bugs, p.cumulative_tests])

    summary = {
        "iterations": [r.as_dict() for r in reports],
        "unique_bugs": len(registry),
        "total_crashes": registry.total_records(),
        "throughput_tests_per_minute": (
            round(throughput(reports), 4)
            if reports and sum(r.elapsed for r in reports) > 0
            else 0.0
        ),
        "validity_rate": (
            round(validity_rate(reports), 4)
            if sum(r.generated for r in reports)
            else 0.0
        ),
    }
    if coverage:
        summary["coverage"] = [
            {"elapsed_seconds": t, "percent": p} for t, p in coverage
        ]

    if compare:
        all_regs = {"campaign": registry, **compare}
        ov = overlap(all_regs)
        # trace-keyed matches are weaker evidence of the same bug
        low_conf = sorted(
            k.value
            for reg in all_regs.values()
            for k in (reg.keys() if isinstance(reg, BugRegistry) else reg)
            if getattr(k, "kind", None) is not None and k.kind.value == "trace"
        )
        (root / "overlap.json").write_text(
            json.dumps(
                {**ov.as_dict(), "low_confidence_keys": low_conf},
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
        summary["overlap"] = ov.as_dict()

    if corpus_stats is not None:
        (root / "corpus_stats.json").write_text(
            json.dumps(corpus_stats.as_dict(), indent=2, sort_keys=True) + "\n"
        )
        summary["corpus"] = corpus_stats.as_dict()

    (root / "report.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    return summary
