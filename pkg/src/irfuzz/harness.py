"""Executes programs against a compiler and classifies each run.

Two adapters are provided: ``ExecCompiler`` drives a real ``mlir-opt``
style binary in a fresh subprocess per run, and ``FaultlineCompiler``
is a pure, deterministic stand-in with injectable crash signatures so
the whole loop can be exercised on a desk.
"""

from __future__ import annotations

import json
import os
import re
import shutil
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from .corpus import TestProgram, detokenize, tokenize
from .errors import CompilerMissing, DuplicatePass, MalformedLine, MalformedInput

DEFAULT_TIMEOUT = 10.0


class PassCategory(str, Enum):
    CONVERSION = "Conversion"
    GENERAL_TRANSFORMATION = "GeneralTransformation"
    DIALECT_TRANSFORMATION = "DialectTransformation"
    BUFFERIZATION = "Bufferization"
    OTHER = "Other"


@dataclass(frozen=True)
class PassSpec:
    flag: str
    category: PassCategory = PassCategory.OTHER

    def __post_init__(self):
        if not self.flag or not self.flag.startswith("-"):
            raise ValueError(f"pass flag must start with '-': {self.flag!r}")


class OutcomeKind(str, Enum):
    VALID = "valid"
    DIAGNOSTIC = "diagnostic"
    CRASH = "crash"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class ExecutionOutcome:
    kind: OutcomeKind
    exit_code: Optional[int] = None
    signal: Optional[int] = None
    stderr: str = ""
    stdout: str = ""
    wall_time: float = 0.0


@dataclass(frozen=True)
class TransformedProgram:
    source_id: str
    pass_flag: str
    output_text: str


# Crash markers: only crashes count as bugs; ordinary
# `error:` diagnostics with a nonzero exit stay Diagnostic.
_ASSERTION_RE = re.compile(
    r"Assertion\s+[`'\"].+?['\"]\s+failed|assert\(.+?\)"
)
_CRASH_MARKERS = ("PLEASE submit a bug report", "Stack dump:")


def classify_stderr_crash(stderr: str) -> bool:
    if any(m in stderr for m in _CRASH_MARKERS):
        return True
    return bool(_ASSERTION_RE.search(stderr))


def load_pass_list(path) -> list[PassSpec]:
    """Parse a one-pass-per-line file: ``<flag> [category]``."""
    specs: list[PassSpec] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        flag = parts[0]
        if not flag.startswith("-"):
            raise MalformedLine(lineno, raw, "flag must start with '-'")
        if len(parts) > 2:
            raise MalformedLine(lineno, raw, "expected '<flag> [category]'")
        if flag in seen:
            raise DuplicatePass(f"line {lineno}: duplicate pass {flag}")
        seen.add(flag)
        category = PassCategory.OTHER
        if len(parts) == 2:
            try:
                category = PassCategory(parts[1])
            except ValueError:
                raise MalformedLine(lineno, raw, f"unknown category {parts[1]!r}")
        specs.append(PassSpec(flag, category))
    return specs


def default_pass_list() -> list[PassSpec]:
    """The shipped 237-flag snapshot of the upstream pass documentation."""
    return load_pass_list(Path(__file__).parent / "data" / "mlir_passes.txt")


class ExecCompiler:
    """Runs ``<binary> [pass_flag] <input_file>`` in a fresh process."""

    def __init__(self, binary: str, env: Optional[dict] = None):
        self.binary = binary
        self.env = dict(os.environ)
        # keep upstream crash handlers from swallowing the stack trace
        self.env.setdefault("LLVM_DISABLE_CRASH_REPORT", "1")
        if env:
            self.env.update(env)
        if shutil.which(binary) is None and not Path(binary).exists():
            raise CompilerMissing(f"compiler binary not found: {binary}")

    def run(
        self, text: str, pass_flag: Optional[str], timeout: float = DEFAULT_TIMEOUT
    ) -> ExecutionOutcome:
        import time

        with tempfile.NamedTemporaryFile(
            "w", suffix=".mlir", delete=False
        ) as f:
            f.write(text)
            path = f.name
        argv = [self.binary]
        if pass_flag:
            argv.append(pass_flag)
        argv.append(path)
        start = time.monotonic()
        try:
            proc = subprocess.run(
                argv,
                capture_output=True,
                text=True,
                timeout=timeout,
                env=self.env,
            )
        except subprocess.TimeoutExpired as e:
            wall = time.monotonic() - start
            return ExecutionOutcome(
                kind=OutcomeKind.TIMEOUT,
                stderr=(e.stderr or b"").decode() if isinstance(e.stderr, bytes) else (e.stderr or ""),
                stdout=(e.stdout or b"").decode() if isinstance(e.stdout, bytes) else (e.stdout or ""),
                wall_time=wall,
            )
        finally:
            os.unlink(path)
        wall = time.monotonic() - start
        rc = proc.returncode
        if rc < 0 or classify_stderr_crash(proc.stderr):
            return ExecutionOutcome(
                kind=OutcomeKind.CRASH,
                exit_code=rc if rc >= 0 else None,
                signal=-rc if rc < 0 else None,
                stderr=proc.stderr,
                stdout=proc.stdout,
                wall_time=wall,
            )
        kind = OutcomeKind.VALID if rc == 0 else OutcomeKind.DIAGNOSTIC
        return ExecutionOutcome(
            kind=kind,
            exit_code=rc,
            stderr=proc.stderr,
            stdout=proc.stdout,
            wall_time=wall,
        )


@dataclass(frozen=True)
class FaultlineSpec:
    """Deterministic toy-compiler behavior: grammar, faults, rewrites."""

    grammar_keywords: tuple[str, ...]
    faults: tuple[tuple[str, str, str], ...]  # (pass, trigger_token, signature)
    rewrites: tuple[tuple[str, str], ...] = ()  # (from_token, to_token)
    hang_passes: tuple[str, ...] = ()

    @classmethod
    def from_dict(cls, d: dict) -> "FaultlineSpec":
        return cls(
            grammar_keywords=tuple(d.get("grammar_keywords", [])),
            faults=tuple(
                (f["pass"], f["trigger_token"], f["crash_signature"])
                for f in d.get("faults", [])
            ),
            rewrites=tuple(
                (r["from_token"], r["to_token"]) for r in d.get("rewrites", [])
            ),
            hang_passes=tuple(d.get("hang_passes", [])),
        )

    @classmethod
    def from_file(cls, path) -> "FaultlineSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise MalformedInput(f"bad faultline spec {path}: {e}") from e

    def to_dict(self) -> dict:
        return {
            "grammar_keywords": list(self.grammar_keywords),
            "faults": [
                {"pass": p, "trigger_token": t, "crash_signature": s}
                for p, t, s in self.faults
            ],
            "rewrites": [
                {"from_token": a, "to_token": b} for a, b in self.rewrites
            ],
            "hang_passes": list(self.hang_passes),
        }


def _faultline_stderr(signature: str, pass_flag: str) -> str:
    return (
        f"faultline: while running {pass_flag}\n"
        f"faultline: Assertion '{signature}' failed.\n"
        "Stack dump:\n"
        " #0 0x00000000 mlir::detail::OpToOpPassAdaptor::run(...)\n"
        " #1 0x00000000 mlir::PassManager::runPasses(...)\n"
        " #2 0x00000000 llvm::sys::RunSignalHandlers()\n"
    )


class FaultlineCompiler:
    """Pure classification function; safe to call from any thread."""

    SIMULATED_SECONDS_PER_RUN = 0.05

    def __init__(self, spec: FaultlineSpec):
        self.spec = spec
        self._fault_index: dict[str, list[tuple[str, str]]] = {}
        for p, trigger, sig in spec.faults:
            self._fault_index.setdefault(p, []).append((trigger, sig))
        self._rewrite_map = dict(spec.rewrites)
        self._cache: dict[str, tuple[bool, frozenset, str]] = {}

    def _analyze(self, text: str) -> tuple[bool, frozenset, str]:
        """(grammar_valid, token set, rewritten stdout), cached per text."""
        hit = self._cache.get(text)
        if hit is not None:
            return hit
        tokens = tokenize(text)
        valid = self._grammar_valid(tokens)
        rewritten = ""
        if valid:
            if self._rewrite_map:
                rewritten = detokenize(
                    [self._rewrite_map.get(t, t) for t in tokens]
                )
            else:
                rewritten = detokenize(tokens)
        entry = (valid, frozenset(tokens), rewritten)
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[text] = entry
        return entry

    def _grammar_valid(self, tokens: Sequence[str]) -> bool:
        first = next((t for t in tokens if t != "\n"), None)
        if first is None or first not in self.spec.grammar_keywords:
            return False
        depth = 0
        opened = False
        for t in tokens:
            if t == "{":
                depth += 1
                opened = True
            elif t == "}":
                depth -= 1
                if depth < 0:
                    return False
        return opened and depth == 0

    def run(
        self,
        text: str,
        pass_flag: Optional[str],
        timeout: float = DEFAULT_TIMEOUT,
    ) -> ExecutionOutcome:
        dt = self.SIMULATED_SECONDS_PER_RUN
        valid, tokens, rewritten = self._analyze(text)
        if not valid:
            return ExecutionOutcome(
                kind=OutcomeKind.DIAGNOSTIC,
                exit_code=1,
                stderr="error: program failed grammar verification\n",
                wall_time=dt,
            )
        if pass_flag is not None:
            if pass_flag in self.spec.hang_passes:
                return ExecutionOutcome(
                    kind=OutcomeKind.TIMEOUT, wall_time=timeout
                )
            for trigger, signature in self._fault_index.get(pass_flag, ()):
                if trigger in tokens:
                    return ExecutionOutcome(
                        kind=OutcomeKind.CRASH,
                        signal=6,
                        stderr=_faultline_stderr(signature, pass_flag),
                        wall_time=dt,
                    )
        return ExecutionOutcome(
            kind=OutcomeKind.VALID,
            exit_code=0,
            stdout=rewritten + "\n",
            wall_time=dt,
        )


def faultline_compile(
    spec: FaultlineSpec, text: str, pass_flag: Optional[str] = None
) -> ExecutionOutcome:
    return FaultlineCompiler(spec).run(text, pass_flag)


def compile_check(compiler, q: TestProgram, timeout: float = DEFAULT_TIMEOUT) -> ExecutionOutcome:
    """Syntax/verifier gate: run the compiler with no pass flags."""
    return compiler.run(q.text, None, timeout)


def run_pass(
    compiler, q: TestProgram, pass_spec: PassSpec, timeout: float = DEFAULT_TIMEOUT
) -> ExecutionOutcome:
    return compiler.run(q.text, pass_spec.flag, timeout)


def sweep(
    compiler,
    q: TestProgram,
    passes: Sequence[PassSpec],
    timeout: float = DEFAULT_TIMEOUT,
    workers: int = 1,
) -> list[tuple[PassSpec, ExecutionOutcome]]:
    """One outcome per pass in list order; a failed compile check yields []."""
    if compile_check(compiler, q, timeout).kind is not OutcomeKind.VALID:
        return []
    if workers <= 1:
        return [(p, run_pass(compiler, q, p, timeout)) for p in passes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(
            pool.map(lambda p: run_pass(compiler, q, p, timeout), passes)
        )
    return list(zip(passes, outcomes))


def transformed_outputs(
    q: TestProgram, results: Sequence[tuple[PassSpec, ExecutionOutcome]]
) -> list[TransformedProgram]:
    out = []
    for spec, outcome in results:
        if outcome.kind is OutcomeKind.VALID and outcome.stdout.strip():
            out.append(
                TransformedProgram(
                    source_id=q.id,
                    pass_flag=spec.flag,
                    output_text=outcome.stdout.strip("\n") + "\n",
                )
            )
    return out
