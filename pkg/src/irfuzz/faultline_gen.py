"""Randomized faultline specs and matching seed corpora.

Used by the `faultline-gen` subcommand and the acceptance suite, so the
whole closed loop can be exercised without a real compiler.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import Provenance, TestProgram, make_program
from .harness import FaultlineSpec, PassSpec

GRAMMAR_KEYWORDS = ("func.func", "module", "llvm.func", "gpu.module")

# operations a generated corpus draws from; triggers are picked among the
# rarer half so perturbed sampling has something to rediscover
COMMON_OPS = (
    "arith.addi",
    "arith.muli",
    "arith.constant",
    "arith.subi",
    "memref.load",
    "memref.store",
    "scf.yield",
    "func.return",
)
RARE_OPS = (
    "tosa.argmax",
    "vector.bitcast",
    "tensor.dim",
    "affine.load",
    "linalg.fill",
    "math.sqrt",
    "sparse_tensor.convert",
    "tosa.reshape",
    "vector.transfer_write",
    "memref.alloca",
    "scf.while",
    "arith.remsi",
    "tensor.expand_shape",
    "affine.store",
    "gpu.barrier",
    "vector.mask",
)
TYPES = ("i32", "i64", "f32", "f16", "index")


def generate_spec(
    rng_seed: int,
    num_faults: int = 12,
    passes: Optional[Sequence[PassSpec]] = None,
    num_hang_passes: int = 0,
    rewrite_ops: int = 2,
) -> FaultlineSpec:
    """A spec whose triggers are rare ops and whose passes come from
    the supplied pass list (the shipped snapshot by default)."""
    from .harness import default_pass_list

    rng = np.random.default_rng(rng_seed)
    passes = list(passes if passes is not None else default_pass_list())
    flags = [p.flag for p in passes]
    chosen_flags = [
        flags[i]
        for i in rng.choice(len(flags), size=min(num_faults + num_hang_passes, len(flags)), replace=False)
    ]
    triggers = [
        RARE_OPS[i]
        for i in rng.choice(len(RARE_OPS), size=min(num_faults, len(RARE_OPS)), replace=False)
    ]
    faults = tuple(
        (
            chosen_flags[i],
            triggers[i],
            f"op->getKind() != FaultKind::K{rng.integers(1000, 9999)} && \"{triggers[i]}\"",
        )
        for i in range(len(triggers))
    )
    hang = tuple(chosen_flags[len(triggers) : len(triggers) + num_hang_passes])
    rewrites = []
    if rewrite_ops:
        # passes introduce new (rare) ops, the way real lowerings do, so
        # transformed outputs genuinely diversify the training corpus
        idx = rng.choice(len(COMMON_OPS) - 2, size=rewrite_ops, replace=False)
        targets = rng.choice(len(RARE_OPS), size=rewrite_ops, replace=False)
        for i, j in zip(idx, targets):
            rewrites.append((COMMON_OPS[i], RARE_OPS[j]))
    return FaultlineSpec(
        grammar_keywords=GRAMMAR_KEYWORDS,
        faults=faults,
        rewrites=tuple(rewrites),
        hang_passes=hang,
    )


def generate_seed_corpus(
    rng_seed: int,
    num_programs: int = 50,
    rare_op_rate: float = 0.18,
    min_body_lines: int = 3,
    max_body_lines: int = 8,
) -> list[TestProgram]:
    """Small brace-balanced function programs over a fixed op vocabulary."""
    rng = np.random.default_rng(rng_seed)
    programs = []
    for n in range(num_programs):
        ty = TYPES[rng.integers(len(TYPES))]
        lines = [f"func.func @f{n} ( %arg0 : {ty} ) -> {ty} {{"]
        body = rng.integers(min_body_lines, max_body_lines + 1)
        # leading constant keeps %arg0 unique to the header, which keeps
        # low-order models from conflating header and body contexts
        lines.append(f"%0 = arith.constant {int(rng.integers(1, 100))} : {ty}")
        prev = "%0"
        for i in range(1, body):
            if rng.random() < rare_op_rate:
                op = RARE_OPS[rng.integers(len(RARE_OPS))]
            else:
                op = COMMON_OPS[rng.integers(len(COMMON_OPS) - 2)]  # no yield/return
            lines.append(f"%{i} = {op} {prev} : {ty}")
            prev = f"%{i}"
        lines.append(f"func.return {prev} : {ty}")
        lines.append("}")
        programs.append(make_program("\n".join(lines) + "\n"))
    return programs


def write_spec(spec: FaultlineSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")


def write_seed_corpus(programs: Sequence[TestProgram], directory) -> None:
    from .corpus import CorpusStore

    store = CorpusStore()
    for p in programs:
        store.add_program(p)
    store.save(directory)
