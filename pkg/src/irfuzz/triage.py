"""Crash deduplication: assertion-first bug keys and the bug registry."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Sequence

from .errors import NoSignal

log = logging.getLogger(__name__)

DEFAULT_FRAME_PREFIXES = ("mlir::",)


class BugKeyKind(str, Enum):
    ASSERTION = "assertion"
    TRACE = "trace"


@dataclass(frozen=True)
class BugKey:
    kind: BugKeyKind
    value: str
    low_confidence: bool = field(default=False, compare=False)


@dataclass(frozen=True)
class CrashRecord:
    program_id: str
    pass_flag: str
    bug_key: BugKey
    stderr: str
    first_seen: float  # epoch seconds (simulated clock under faultline)
    iteration: int
    program_text: str = ""

    def __post_init__(self):
        if not self.stderr:
            raise ValueError("CrashRecord.stderr must be non-empty")


# `Assertion 'expr' failed`, glibc's `Assertion `expr' failed`, and bare
# assert(expr) styles; first match wins.
_ASSERT_PATTERNS = (
    re.compile(r"Assertion\s+[`'\"](?P<expr>.+?)['\"]\s+failed"),
    re.compile(r"\bassert\((?P<expr>.+)\)"),
)
_FILE_LINE_RE = re.compile(r"[^\s'\"`]+:\d+(?::\d+)?:?")
_ADDR_RE = re.compile(r"0x[0-9a-fA-F]+")
_FRAME_NO_RE = re.compile(r"^\s*#\d+\s*")
_OFFSET_RE = re.compile(r"\(\+0x[0-9a-fA-F]+\)")


def _normalize_assertion(expr: str) -> str:
    expr = _FILE_LINE_RE.sub("", expr)
    return " ".join(expr.split())


def _frame_symbol(line: str) -> str:
    line = _FRAME_NO_RE.sub("", line)
    line = _OFFSET_RE.sub("", line)
    line = _ADDR_RE.sub("", line)
    return line.strip()


def extract_bug_key(
    stderr: str,
    frame_prefixes: Sequence[str] = DEFAULT_FRAME_PREFIXES,
) -> BugKey:
    """Assertion-statement key when present, else the filtered frame list.

    Raises NoSignal when stderr has neither; callers fall back to a
    catch-all key over the last five stderr lines (see catch_all_key).
    """
    if not stderr:
        raise ValueError("stderr must be non-empty")
    for line in stderr.splitlines():
        for pat in _ASSERT_PATTERNS:
            m = pat.search(_FILE_LINE_RE.sub("", line)) or pat.search(line)
            if m:
                return BugKey(
                    BugKeyKind.ASSERTION, _normalize_assertion(m.group("expr"))
                )
    frames = []
    for line in stderr.splitlines():
        sym = _frame_symbol(line)
        if any(sym.startswith(p) for p in frame_prefixes):
            frames.append(sym)
    if frames:
        return BugKey(BugKeyKind.TRACE, "\n".join(frames))
    raise NoSignal("stderr has neither an assertion nor a relevant frame")


def catch_all_key(stderr: str) -> BugKey:
    tail = "\n".join(stderr.strip().splitlines()[-5:])
    return BugKey(BugKeyKind.TRACE, tail, low_confidence=True)


def key_for_stderr(
    stderr: str, frame_prefixes: Sequence[str] = DEFAULT_FRAME_PREFIXES
) -> BugKey:
    try:
        return extract_bug_key(stderr, frame_prefixes)
    except NoSignal:
        return catch_all_key(stderr)


class BugRegistry:
    """Single-writer bucket map from BugKey to crash occurrences."""

    def __init__(self):
        self._buckets: dict[BugKey, list[CrashRecord]] = {}
        self._seen: set[tuple[str, str]] = set()

    def __len__(self) -> int:
        return len(self._buckets)

    @property
    def buckets(self) -> dict[BugKey, list[CrashRecord]]:
        return self._buckets

    def total_records(self) -> int:
        return sum(len(b) for b in self._buckets.values())

    def keys(self) -> list[BugKey]:
        return list(self._buckets.keys())

    def register_crash(self, rec: CrashRecord) -> bool:
        """Insert a record; True iff this opened a new bucket."""
        pair = (rec.program_id, rec.pass_flag)
        if pair in self._seen:
            log.debug("duplicate occurrence ignored: %s", pair)
            return False
        self._seen.add(pair)
        bucket = self._buckets.setdefault(rec.bug_key, [])
        is_new = not bucket
        bucket.append(rec)
        return is_new

    # -- persistence ---------------------------------------------------

    def index_rows(self) -> list[dict]:
        rows = []
        for bug_id, (key, records) in enumerate(self._buckets.items(), 1):
            first = min(records, key=lambda r: (r.first_seen, r.program_id))
            rows.append(
                {
                    "bug_id": bug_id,
                    "key_kind": key.kind.value,
                    "key_value": key.value,
                    "occurrences": len(records),
                    "first_seen_iso8601": _iso(first.first_seen),
                    "reproducer_path": f"bug_{bug_id:04d}/reproducer.mlir",
                    "pass_flag": first.pass_flag,
                    "low_confidence": key.low_confidence,
                }
            )
        return rows

    def export(self, directory) -> Path:
        """One directory per bug plus a bugs.jsonl index; idempotent."""
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        rows = self.index_rows()
        for row, (key, records) in zip(rows, self._buckets.items()):
            first = min(records, key=lambda r: (r.first_seen, r.program_id))
            bug_dir = root / f"bug_{row['bug_id']:04d}"
            bug_dir.mkdir(exist_ok=True)
            (bug_dir / "reproducer.mlir").write_text(first.program_text)
            (bug_dir / "stderr.txt").write_text(first.stderr)
            (bug_dir / "meta.json").write_text(
                json.dumps(
                    {
                        "key_kind": key.kind.value,
                        "key_value": key.value,
                        "pass_flag": first.pass_flag,
                        "program_id": first.program_id,
                        "iteration": first.iteration,
                        "first_seen_iso8601": _iso(first.first_seen),
                    },
                    indent=2,
                    sort_keys=True,
                )
                + "\n"
            )
        index = root / "bugs.jsonl"
        index.write_text(
            "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
        )
        return index

    def to_jsonl(self) -> str:
        """Full record dump used by campaign checkpoints."""
        lines = []
        for key, records in self._buckets.items():
            for r in records:
                lines.append(
                    json.dumps(
                        {
                            "program_id": r.program_id,
                            "pass_flag": r.pass_flag,
                            "key_kind": key.kind.value,
                            "key_value": key.value,
                            "low_confidence": key.low_confidence,
                            "stderr": r.stderr,
                            "first_seen": r.first_seen,
                            "iteration": r.iteration,
                            "program_text": r.program_text,
                        },
                        sort_keys=True,
                    )
                )
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str) -> "BugRegistry":
        reg = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            key = BugKey(
                BugKeyKind(d["key_kind"]),
                d["key_value"],
                low_confidence=d.get("low_confidence", False),
            )
            reg.register_crash(
                CrashRecord(
                    program_id=d["program_id"],
                    pass_flag=d["pass_flag"],
                    bug_key=key,
                    stderr=d["stderr"],
                    first_seen=d["first_seen"],
                    iteration=d["iteration"],
                    program_text=d.get("program_text", ""),
                )
            )
        return reg


def _iso(epoch_seconds: float) -> str:
    return datetime.fromtimestamp(epoch_seconds, tz=timezone.utc).isoformat()


def export_registry(reg: BugRegistry, directory) -> Path:
    return reg.export(directory)
