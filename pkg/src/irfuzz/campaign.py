"""End-to-end iteration loop: train, sample, generate, sweep, triage,
augment, checkpoint.

Under the faultline compiler the campaign runs on a simulated clock
(run costs come from the compiler's reported wall times), which makes
whole campaigns bit-reproducible for a fixed rng_seed.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import (
    CorpusStore,
    Provenance,
    TestProgram,
    content_hash,
    make_program,
)
from .errors import ConfigInvalid, CorruptCheckpoint
from .generator import (
    GenerationConfig,
    NGramModel,
    generate_candidates,
    generate_greedy,
    train_model,
)
from .harness import (
    ExecutionOutcome,
    FaultlineCompiler,
    OutcomeKind,
    PassSpec,
    TransformedProgram,
    compile_check,
    run_pass,
    transformed_outputs,
)
from .triage import BugRegistry, CrashRecord, key_for_stderr

log = logging.getLogger(__name__)


class Mode(str, Enum):
    PERTURBED = "perturbed"
    GREEDY_ABLATION = "greedy_ablation"
    NO_AUGMENTATION_ABLATION = "no_augmentation"


@dataclass(frozen=True)
class CampaignConfig:
    max_iterations: int = 1
    epochs: int = 5
    max_seed_samples: int = 35000
    token_limit: int = 600
    temperature: float = 1.0
    prefix_len: int = 3
    candidates_per_seed: int = 4
    wall_clock_budget: Optional[float] = None  # seconds
    worker_pool_width: int = 1
    rng_seed: int = 0
    mode: Mode = Mode.PERTURBED
    ngram_order: int = 4
    run_timeout: float = 10.0

    def __post_init__(self):
        for name in (
            "max_iterations",
            "epochs",
            "max_seed_samples",
            "token_limit",
            "prefix_len",
            "candidates_per_seed",
            "worker_pool_width",
        ):
            if getattr(self, name) < 1:
                raise ConfigInvalid(f"{name} must be >= 1")
        if self.temperature <= 0:
            raise ConfigInvalid("temperature must be > 0")
        if self.wall_clock_budget is not None and self.wall_clock_budget < 0:
            raise ConfigInvalid("wall_clock_budget must be >= 0")

    def normalized(self) -> "CampaignConfig":
        """Greedy ablation pins prefix_len=10 and one candidate per seed."""
        if self.mode is Mode.GREEDY_ABLATION:
            return dataclasses.replace(
                self, prefix_len=10, candidates_per_seed=1
            )
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown config fields: {sorted(unknown)}")
        if "mode" in d:
            d = dict(d, mode=Mode(d["mode"]))
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigInvalid(str(e)) from e

    @classmethod
    def from_json(cls, text: str) -> "CampaignConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigInvalid(f"config is not valid JSON: {e}") from e
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mode"] = self.mode.value
        return d


@dataclass(frozen=True)
class IterationReport:
    iteration: int
    generated: int
    compile_valid: int
    crashes: int
    new_bugs: int
    programs_added: int
    transformed_added: int
    elapsed: float  # seconds

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


class SimulatedClock:
    """Deterministic clock advanced by reported run costs."""

    def __init__(self, start: float = 0.0):
        self._t = start

    def now(self) -> float:
        return self._t

    def charge(self, seconds: float) -> None:
        self._t += seconds


class WallClock:
    def __init__(self):
        self._epoch = time.time() - time.monotonic()

    def now(self) -> float:
        return self._epoch + time.monotonic()

    def charge(self, seconds: float) -> None:
        pass  # real time passes on its own


@dataclass
class CampaignState:
    corpus: CorpusStore
    backend: object
    registry: BugRegistry
    clock: object
    start_time: float
    iteration: int = 0
    reports: list[IterationReport] = field(default_factory=list)


def _iteration_rng(cfg: CampaignConfig, iteration: int, lane: int) -> np.random.Generator:
    return np.random.default_rng([cfg.rng_seed & 0xFFFFFFFF, iteration, lane])


def augment_training_set(
    corpus: CorpusStore,
    generated_valid: Sequence[TestProgram],
    transformed: Sequence[TransformedProgram],
    iteration: int = 0,
) -> tuple[int, int]:
    """Fold valid generated programs and transformed outputs back into T."""
    added_generated = sum(corpus.add_program(p) for p in generated_valid)
    added_transformed = 0
    for t in transformed:
        p = make_program(
            t.output_text,
            provenance=Provenance.TRANSFORMED,
            origin_iteration=iteration,
            parent_id=t.source_id,
        )
        if corpus.add_program(p):
            added_transformed += 1
    return added_generated, added_transformed


def run_iteration(
    state: CampaignState,
    cfg: CampaignConfig,
    compiler,
    passes: Sequence[PassSpec],
) -> IterationReport:
    cfg = cfg.normalized()
    state.iteration += 1
    iteration = state.iteration
    t0 = state.clock.now()

    # 1. train on the full current corpus
    training_set = list(state.corpus)
    state.backend = train_model(state.backend, training_set, cfg.epochs)

    # 2. sample fuzz seeds (only programs long enough to donate a prefix)
    seeds = state.corpus.sample_fuzz_seeds(
        cfg.max_seed_samples,
        _iteration_rng(cfg, iteration, 0),
        min_tokens=cfg.prefix_len,
    )

    # 3. generation
    gen_cfg = GenerationConfig(
        temperature=cfg.temperature,
        prefix_len=cfg.prefix_len,
        candidates_per_seed=cfg.candidates_per_seed,
        token_limit=cfg.token_limit,
        rng_seed=(cfg.rng_seed << 8) ^ iteration,
    )
    generated: list[TestProgram] = []
    for seed in seeds:
        if cfg.mode is Mode.GREEDY_ABLATION:
            generated.append(
                generate_greedy(
                    state.backend, seed, gen_cfg, origin_iteration=iteration
                )
            )
        else:
            generated.extend(
                generate_candidates(
                    state.backend, seed, gen_cfg, origin_iteration=iteration
                )
            )

    # 4. compile check + per-pass sweep; crashes never abort the loop
    valid: list[TestProgram] = []
    crashes = 0
    new_bugs = 0
    transformed: list[TransformedProgram] = []
    for q in generated:
        # budget re-checked between sweep batches so in-flight runs finish
        if not _budget_left(state, cfg):
            break
        check = compile_check(compiler, q, cfg.run_timeout)
        state.clock.charge(check.wall_time)
        if check.kind is not OutcomeKind.VALID:
            continue
        valid.append(q)
        results = _sweep_with_clock(
            state, compiler, q, passes, cfg.run_timeout, cfg.worker_pool_width
        )
        for spec, outcome in results:
            if outcome.kind is OutcomeKind.CRASH:
                crashes += 1
                rec = CrashRecord(
                    program_id=q.id,
                    pass_flag=spec.flag,
                    bug_key=key_for_stderr(outcome.stderr),
                    stderr=outcome.stderr,
                    first_seen=state.clock.now(),
                    iteration=iteration,
                    program_text=q.text,
                )
                if state.registry.register_crash(rec):
                    new_bugs += 1
        transformed.extend(transformed_outputs(q, results))

    # 5. diversity augmentation
    if cfg.mode is Mode.NO_AUGMENTATION_ABLATION:
        added_generated = added_transformed = 0
    else:
        added_generated, added_transformed = augment_training_set(
            state.corpus, valid, transformed, iteration
        )

    report = IterationReport(
        iteration=iteration,
        generated=len(generated),
        compile_valid=len(valid),
        crashes=crashes,
        new_bugs=new_bugs,
        programs_added=added_generated,
        transformed_added=added_transformed,
        elapsed=state.clock.now() - t0,
    )
    state.reports.append(report)
    return report


def _sweep_with_clock(state, compiler, q, passes, timeout, workers):
    """Sweep all passes over one program, charging run costs to the clock."""
    if workers <= 1:
        results = [(p, run_pass(compiler, q, p, timeout)) for p in passes]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(
                pool.map(lambda p: run_pass(compiler, q, p, timeout), passes)
            )
        results = list(zip(passes, outs))
    for _, outcome in results:
        state.clock.charge(outcome.wall_time / max(1, workers))
    return results


def new_state(
    cfg: CampaignConfig,
    seeds: Sequence[TestProgram],
    compiler,
    backend=None,
) -> CampaignState:
    corpus = CorpusStore()
    for p in seeds:
        corpus.add_program(p)
    if backend is None:
        backend = NGramModel(cfg.ngram_order)
    clock = (
        SimulatedClock() if isinstance(compiler, FaultlineCompiler) else WallClock()
    )
    return CampaignState(
        corpus=corpus,
        backend=backend,
        registry=BugRegistry(),
        clock=clock,
        start_time=clock.now(),
    )


def run_campaign(
    cfg: CampaignConfig,
    seeds: Sequence[TestProgram],
    compiler,
    passes: Sequence[PassSpec],
    backend=None,
    checkpoint_dir=None,
) -> tuple[BugRegistry, list[IterationReport]]:
    cfg = cfg.normalized()
    if not seeds:
        raise ConfigInvalid("seed set is empty")
    state = new_state(cfg, seeds, compiler, backend)
    return _drive(state, cfg, compiler, passes, checkpoint_dir)


def _budget_left(state: CampaignState, cfg: CampaignConfig) -> bool:
    if cfg.wall_clock_budget is None:
        return True
    return state.clock.now() - state.start_time < cfg.wall_clock_budget


def _drive(state, cfg, compiler, passes, checkpoint_dir):
    while state.iteration < cfg.max_iterations and _budget_left(state, cfg):
        report = run_iteration(state, cfg, compiler, passes)
        log.info(
            "iteration %d: generated=%d valid=%d crashes=%d new_bugs=%d",
            report.iteration,
            report.generated,
            report.compile_valid,
            report.crashes,
            report.new_bugs,
        )
        if checkpoint_dir is not None:
            save_checkpoint(state, cfg, checkpoint_dir)
    return state.registry, state.reports


# -- checkpointing -----------------------------------------------------


def save_checkpoint(state: CampaignState, cfg: CampaignConfig, directory) -> Path:
    root = Path(directory) / f"iter_{state.iteration}"
    root.mkdir(parents=True, exist_ok=True)
    manifest = "\n".join(state.corpus.manifest_lines())
    (root / "corpus.manifest").write_text(manifest + ("\n" if manifest else ""))
    state.corpus.save(root / "corpus")
    if hasattr(state.backend, "save"):
        state.backend.save(root / "model.snap")
    (root / "registry.jsonl").write_text(state.registry.to_jsonl())
    (root / "rng.state").write_text(
        json.dumps(
            {
                "rng_seed": cfg.rng_seed,
                "iteration": state.iteration,
                "clock": state.clock.now(),
                "start_time": state.start_time,
            }
        )
    )
    (root / "meta.json").write_text(
        json.dumps(
            {
                "config": cfg.to_dict(),
                "iteration": state.iteration,
                "manifest_sha256": content_hash(manifest),
                "reports": [r.as_dict() for r in state.reports],
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return root


def load_checkpoint(directory, compiler) -> tuple[CampaignState, CampaignConfig]:
    root = Path(directory)
    try:
        meta = json.loads((root / "meta.json").read_text())
        rng_state = json.loads((root / "rng.state").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptCheckpoint(f"unreadable checkpoint {root}: {e}") from e
    manifest = (root / "corpus.manifest").read_text().rstrip("\n")
    if content_hash(manifest) != meta["manifest_sha256"]:
        raise CorruptCheckpoint(f"corpus manifest hash mismatch in {root}")
    cfg = CampaignConfig.from_dict(meta["config"])
    corpus = CorpusStore.load(root / "corpus")
    if "\n".join(corpus.manifest_lines()) != manifest:
        raise CorruptCheckpoint(f"corpus does not match manifest in {root}")
    backend = (
        NGramModel.load(root / "model.snap")
        if (root / "model.snap").exists()
        else NGramModel(cfg.ngram_order)
    )
    registry = BugRegistry.from_jsonl((root / "registry.jsonl").read_text())
    clock = (
        SimulatedClock(rng_state["clock"])
        if isinstance(compiler, FaultlineCompiler)
        else WallClock()
    )
    state = CampaignState(
        corpus=corpus,
        backend=backend,
        registry=registry,
        clock=clock,
        start_time=rng_state.get("start_time", 0.0),
        iteration=meta["iteration"],
        reports=[IterationReport(**r) for r in meta.get("reports", [])],
    )
    return state, cfg


def resume(
    checkpoint_dir,
    cfg: Optional[CampaignConfig],
    compiler,
    passes: Sequence[PassSpec],
    out_checkpoint_dir=None,
) -> tuple[BugRegistry, list[IterationReport]]:
    """Continue a campaign at checkpoint.iteration + 1."""
    state, saved_cfg = load_checkpoint(checkpoint_dir, compiler)
    cfg = (cfg or saved_cfg).normalized()
    return _drive(state, cfg, compiler, passes, out_checkpoint_dir)
