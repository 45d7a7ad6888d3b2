"""Seed ingestion, tokenization and the deduplicating program store.

Programs are stored as immutable records; all mutation goes through
``CorpusStore.add_program``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import EmptyCorpus, MalformedInput

log = logging.getLogger(__name__)

NEWLINE = "\n"

# One lexical unit of IR text.  Alternatives ordered so that string
# literals, sigil-prefixed names and dotted identifiers stay whole;
# anything unmatched falls through to a single character.
_TOKEN_RE = re.compile(
    r'"(?:\\.|[^"\\\n])*"'          # string literal, escapes preserved
    r"|[%@#!][A-Za-z0-9_$.]*"       # SSA values, symbols, attrs, types
    r"|[A-Za-z_][A-Za-z0-9_$.]*"    # identifiers incl. dotted op names
    r"|0x[0-9a-fA-F]+"
    r"|\d+\.\d*(?:[eE][+-]?\d+)?"
    r"|\d+"
    r"|\S"                          # any other byte, one token each
)


def tokenize(text: str) -> list[str]:
    """Deterministic lexical split; any byte sequence tokenizes."""
    tokens: list[str] = []
    lines = text.split("\n")
    for i, line in enumerate(lines):
        if i > 0:
            tokens.append(NEWLINE)
        tokens.extend(_TOKEN_RE.findall(line))
    # a trailing newline in the source already produced its token via split
    return tokens


def detokenize(tokens: Iterable[str]) -> str:
    """Join tokens so that ``tokenize(detokenize(ts)) == ts``."""
    parts: list[str] = []
    for t in tokens:
        if t == NEWLINE:
            parts.append("\n")
        else:
            if parts and parts[-1] != "\n":
                parts.append(" ")
            parts.append(t)
    return "".join(parts)


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class Provenance(str, Enum):
    SEED = "seed"
    GENERATED = "generated"
    TRANSFORMED = "transformed"


@dataclass(frozen=True)
class TestProgram:
    id: str
    tokens: tuple[str, ...]
    text: str
    provenance: Provenance
    origin_iteration: int = 0
    parent_id: Optional[str] = None

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("TestProgram.tokens must be non-empty")
        if (self.provenance is Provenance.SEED) != (
            self.origin_iteration == 0 and self.parent_id is None
        ):
            raise ValueError(
                "provenance=seed iff origin_iteration=0 and no parent"
            )

    @property
    def sha256(self) -> str:
        return content_hash(self.text)


def make_program(
    text: str,
    provenance: Provenance = Provenance.SEED,
    origin_iteration: int = 0,
    parent_id: Optional[str] = None,
) -> TestProgram:
    """Build a program from raw text; tokens and id are derived."""
    tokens = tuple(tokenize(text))
    # normalize so that text == detokenize(tokens) holds by construction
    norm = detokenize(tokens)
    pid = f"{provenance.value[0]}{origin_iteration}-{content_hash(norm)[:12]}"
    return TestProgram(
        id=pid,
        tokens=tokens,
        text=norm,
        provenance=provenance,
        origin_iteration=origin_iteration,
        parent_id=parent_id,
    )


# Unit-starting lines must lead with something function- or module-like:
# a dotted operation name (func.func, llvm.func, gpu.module, ...) or the
# bare `module` keyword.
_UNIT_HEAD_RE = re.compile(r"^\s*([A-Za-z_][\w$]*\.[\w$.]+|module)\b")


def _brace_delta(line: str) -> int:
    """Net brace count of one line, ignoring strings and // comments."""
    delta = 0
    i = 0
    n = len(line)
    while i < n:
        c = line[i]
        if c == '"':
            i += 1
            while i < n and line[i] != '"':
                i += 2 if line[i] == "\\" else 1
            i += 1
            continue
        if c == "/" and i + 1 < n and line[i + 1] == "/":
            break
        if c == "{":
            delta += 1
        elif c == "}":
            delta -= 1
        i += 1
    return delta


def split_seed_file(file_text: str) -> list[TestProgram]:
    """Split a seed file into top-level brace-balanced units.

    Lines outside any unit (comments, RUN lines, braceless attribute
    declarations) are skipped.  An unbalanced trailer is skipped with a
    warning rather than aborting ingestion.
    """
    programs: list[TestProgram] = []
    lines = file_text.split("\n")
    unit: list[str] = []
    depth = 0
    opened = False
    for line in lines:
        if not unit:
            if not _UNIT_HEAD_RE.match(line) or "{" not in line.split("//")[0]:
                continue
            unit = [line]
            depth = _brace_delta(line)
            opened = True
        else:
            unit.append(line)
            depth += _brace_delta(line)
        if opened and depth <= 0:
            programs.append(make_program("\n".join(unit) + "\n"))
            unit = []
            depth = 0
            opened = False
    if unit:
        log.warning(
            "unbalanced delimiters: skipping %d trailing line(s)", len(unit)
        )
    return programs


@dataclass
class CorpusStats:
    count: int
    mean_tokens: float

    def as_dict(self) -> dict:
        return {"count": self.count, "mean_tokens": round(self.mean_tokens, 2)}


class CorpusStore:
    """Id-indexed, content-deduplicated program store.

    Entries are immutable after insertion; iteration follows insertion
    order, which keeps downstream sampling and training deterministic.
    """

    def __init__(self):
        self._entries: dict[str, TestProgram] = {}
        self._hashes: set[str] = set()

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[TestProgram]:
        return iter(self._entries.values())

    def __contains__(self, program_id: str) -> bool:
        return program_id in self._entries

    def get(self, program_id: str) -> TestProgram:
        return self._entries[program_id]

    def add_program(self, p: TestProgram) -> bool:
        h = p.sha256
        if h in self._hashes:
            return False
        self._hashes.add(h)
        self._entries[p.id] = p
        return True

    def sample_fuzz_seeds(
        self, limit: int, rng_seed, min_tokens: int = 1
    ) -> list[TestProgram]:
        """Uniform sample without replacement of min(|store|, limit)."""
        if not self._entries:
            raise EmptyCorpus("cannot sample from an empty corpus")
        eligible = [p for p in self if len(p.tokens) >= min_tokens]
        if not eligible:
            raise EmptyCorpus(f"no program has >= {min_tokens} tokens")
        rng = (
            rng_seed
            if isinstance(rng_seed, np.random.Generator)
            else np.random.default_rng(rng_seed)
        )
        k = min(len(eligible), limit)
        idx = rng.choice(len(eligible), size=k, replace=False)
        return [eligible[i] for i in idx]

    def stats(self) -> CorpusStats:
        if not self._entries:
            return CorpusStats(0, 0.0)
        counts = [len(p.tokens) for p in self]
        return CorpusStats(len(counts), sum(counts) / len(counts))

    # On-disk layout: one directory per provenance class, raw text per
    # program, plus an append-only manifest.jsonl.

    def manifest_lines(self) -> list[str]:
        lines = []
        for p in self:
            lines.append(
                json.dumps(
                    {
                        "id": p.id,
                        "provenance": p.provenance.value,
                        "origin_iteration": p.origin_iteration,
                        "parent_id": p.parent_id,
                        "token_count": len(p.tokens),
                        "sha256": p.sha256,
                    },
                    sort_keys=True,
                )
            )
        return lines

    def manifest_sha256(self) -> str:
        return content_hash("\n".join(self.manifest_lines()))

    def save(self, directory) -> None:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        for prov in Provenance:
            (root / prov.value).mkdir(exist_ok=True)
        for p in self:
            path = root / p.provenance.value / f"{p.id}.mlir"
            if not path.exists():
                path.write_text(p.text)
        (root / "manifest.jsonl").write_text(
            "\n".join(self.manifest_lines()) + ("\n" if len(self) else "")
        )

    @classmethod
    def load(cls, directory) -> "CorpusStore":
        root = Path(directory)
        manifest = root / "manifest.jsonl"
        if not manifest.exists():
            raise MalformedInput(f"missing manifest: {manifest}")
        store = cls()
        for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                meta = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedInput(f"{manifest}:{lineno}: {e}") from e
            prov = Provenance(meta["provenance"])
            path = root / prov.value / f"{meta['id']}.mlir"
            text = path.read_text()
            if content_hash(text) != meta["sha256"]:
                raise MalformedInput(f"hash mismatch for {path}")
            p = TestProgram(
                id=meta["id"],
                tokens=tuple(tokenize(text)),
                text=text,
                provenance=prov,
                origin_iteration=meta["origin_iteration"],
                parent_id=meta.get("parent_id"),
            )
            store.add_program(p)
        return store
