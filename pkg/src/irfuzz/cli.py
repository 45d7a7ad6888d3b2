"""Single entry-point command wiring all modules into operator workflows.

Exit codes: 0 success, 1 usage error, 2 environment error (missing
compiler or backend), 3 data corruption.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import campaign as campaign_mod
from . import faultline_gen, metrics
from .corpus import CorpusStore, make_program, split_seed_file
from .errors import (
    BackendUnavailable,
    CompilerMissing,
    ConfigInvalid,
    CorruptCheckpoint,
    IrFuzzError,
    MalformedInput,
)
from .generator import HttpBackend, NGramModel, train_model
from .harness import (
    ExecCompiler,
    FaultlineCompiler,
    FaultlineSpec,
    default_pass_list,
    load_pass_list,
    sweep as run_sweep,
)
from .triage import BugRegistry, CrashRecord, key_for_stderr

log = logging.getLogger(__name__)


def _make_compiler(spec: str):
    if spec.startswith("faultline:"):
        return FaultlineCompiler(FaultlineSpec.from_file(spec.split(":", 1)[1]))
    if spec.startswith("exec:"):
        return ExecCompiler(spec.split(":", 1)[1])
    raise click.UsageError(
        f"--compiler must be 'faultline:<spec.json>' or 'exec:<binary>', got {spec!r}"
    )


def _make_backend(spec: str, order: int = 4):
    if spec == "ngram":
        return NGramModel(order)
    if spec.startswith("http:") or spec.startswith("https:"):
        return HttpBackend(spec)
    raise click.UsageError(
        f"--backend must be 'ngram' or 'http://...', got {spec!r}"
    )


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def cli(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command("seed-split")
@click.option("--in", "in_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path())
def seed_split(in_dir: str, out_dir: str):
    """Split seed files into per-function programs and build a corpus."""
    store = CorpusStore()
    files = sorted(Path(in_dir).rglob("*.mlir"))
    for path in files:
        for program in split_seed_file(path.read_text()):
            store.add_program(program)
    store.save(out_dir)
    click.echo(f"ingested {len(files)} file(s) into {len(store)} program(s)")


@cli.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--backend", default="ngram", show_default=True)
@click.option("--epochs", default=5, show_default=True)
@click.option("--order", default=4, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def train(corpus_dir, backend, epochs, order, out_path):
    """Train a generator backend on a corpus and snapshot it."""
    store = CorpusStore.load(corpus_dir)
    model = train_model(_make_backend(backend, order), list(store), epochs)
    if hasattr(model, "save"):
        model.save(out_path)
        click.echo(f"snapshot written to {out_path}")
    else:
        click.echo("remote backend trained (no local snapshot)")


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seeds", default=10, show_default=True, help="Fuzz seeds to sample.")
@click.option("--temperature", default=1.0, show_default=True)
@click.option("--prefix-len", default=3, show_default=True)
@click.option("--candidates", default=4, show_default=True)
@click.option("--token-limit", default=600, show_default=True)
@click.option("--rng-seed", default=0, show_default=True)
def generate(model_path, corpus_dir, out_dir, seeds, temperature, prefix_len,
             candidates, token_limit, rng_seed):
    """Generate perturbed candidates from sampled corpus seeds."""
    from .generator import GenerationConfig, generate_candidates

    model = NGramModel.load(model_path)
    store = CorpusStore.load(corpus_dir)
    cfg = GenerationConfig(
        temperature=temperature,
        prefix_len=prefix_len,
        candidates_per_seed=candidates,
        token_limit=token_limit,
        rng_seed=rng_seed,
    )
    out = CorpusStore()
    for seed in store.sample_fuzz_seeds(seeds, rng_seed, min_tokens=prefix_len):
        for q in generate_candidates(model, seed, cfg):
            out.add_program(q)
    out.save(out_dir)
    click.echo(f"wrote {len(out)} candidate(s) to {out_dir}")


@cli.command()
@click.option("--compiler", required=True)
@click.option("--passes", "passes_path", type=click.Path(exists=True))
@click.option("--program", "program_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--timeout", default=10.0, show_default=True)
@click.option("--workers", default=1, show_default=True)
def sweep(compiler, passes_path, program_path, out_path, timeout, workers):
    """Compile-check one program, then run every pass individually."""
    comp = _make_compiler(compiler)
    passes = load_pass_list(passes_path) if passes_path else default_pass_list()
    program = make_program(Path(program_path).read_text())
    results = run_sweep(comp, program, passes, timeout, workers)
    with open(out_path, "w") as f:
        for spec, outcome in results:
            f.write(
                json.dumps(
                    {
                        "program_id": program.id,
                        "program_text": program.text,
                        "pass_flag": spec.flag,
                        "kind": outcome.kind.value,
                        "exit_code": outcome.exit_code,
                        "signal": outcome.signal,
                        "stderr": outcome.stderr,
                        "wall_time": outcome.wall_time,
                    }
                )
                + "\n"
            )
    click.echo(f"{len(results)} outcome(s) written to {out_path}")


@cli.command()
@click.option("--config", "config_path", required=True,
              help="Campaign config JSON; '-' reads stdin.")
@click.option("--compiler", required=True)
@click.option("--backend", default="ngram", show_default=True)
@click.option("--passes", "passes_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed-corpus", "seed_dir", required=True, type=click.Path(exists=True))
@click.option("--resume-from", type=click.Path(exists=True),
              help="Checkpoint directory (iter_<n>) to continue from.")
@click.option("--max-iterations", type=int)
@click.option("--epochs", type=int)
@click.option("--max-seed-samples", type=int)
@click.option("--token-limit", type=int)
@click.option("--temperature", type=float)
@click.option("--prefix-len", type=int)
@click.option("--candidates-per-seed", type=int)
@click.option("--wall-clock-budget", type=float)
@click.option("--workers", "worker_pool_width", type=int)
@click.option("--rng-seed", type=int)
@click.option("--mode", type=click.Choice([m.value for m in campaign_mod.Mode]))
def campaign(config_path, compiler, backend, passes_path, out_dir, seed_dir,
             resume_from, **overrides):
    """Run the full self-adaptive loop; bugs are the product, exit code 0."""
    raw = sys.stdin.read() if config_path == "-" else Path(config_path).read_text()
    cfg_dict = json.loads(raw) if raw.strip() else {}
    for key, value in overrides.items():
        if value is not None:
            cfg_dict[key] = value
    cfg = campaign_mod.CampaignConfig.from_dict(cfg_dict)
    comp = _make_compiler(compiler)
    passes = load_pass_list(passes_path) if passes_path else default_pass_list()
    out = Path(out_dir)
    checkpoints = out / "checkpoints"
    if resume_from:
        registry, reports = campaign_mod.resume(
            resume_from, cfg, comp, passes, checkpoints
        )
    else:
        store = CorpusStore.load(seed_dir)
        be = _make_backend(backend, cfg.ngram_order)
        registry, reports = campaign_mod.run_campaign(
            cfg, list(store), comp, passes, be, checkpoints
        )
    registry.export(out / "bugs")
    stats = None
    if checkpoints.exists():
        last = sorted(checkpoints.glob("iter_*"), key=lambda p: int(p.name[5:]))
        if last:
            stats = CorpusStore.load(last[-1] / "corpus").stats()
    metrics.emit_report(out / "report", reports, registry, corpus_stats=stats)
    click.echo(
        f"campaign complete: {len(reports)} iteration(s), "
        f"{len(registry)} unique bug(s)"
    )


@cli.command()
@click.option("--sweep", "sweep_path", required=True, type=click.Path(exists=True),
              help="Outcome JSONL produced by the sweep subcommand.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def triage(sweep_path, out_dir):
    """Bucket crash outcomes into deduplicated bug records."""
    registry = BugRegistry()
    for lineno, line in enumerate(Path(sweep_path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedInput(f"{sweep_path}:{lineno}: {e}") from e
        if d.get("kind") != "crash":
            continue
        registry.register_crash(
            CrashRecord(
                program_id=d["program_id"],
                pass_flag=d["pass_flag"],
                bug_key=key_for_stderr(d["stderr"]),
                stderr=d["stderr"],
                first_seen=d.get("wall_time", 0.0),
                iteration=0,
                program_text=d.get("program_text", ""),
            )
        )
    registry.export(out_dir)
    click.echo(f"{len(registry)} unique bug(s) exported to {out_dir}")


@cli.command()
@click.option("--campaign", "campaign_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--compare", "compare_dirs", multiple=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--coverage", "coverage_path", type=click.Path(exists=True))
@click.option("--interval", default=3600.0, show_default=True)
def report(campaign_dir, compare_dirs, coverage_path, interval):
    """Recompute the metrics bundle for a finished campaign."""
    root = Path(campaign_dir)
    checkpoints = sorted(
        (root / "checkpoints").glob("iter_*"), key=lambda p: int(p.name[5:])
    )
    if not checkpoints:
        raise MalformedInput(f"no checkpoints under {root}")
    last = checkpoints[-1]
    try:
        meta = json.loads((last / "meta.json").read_text())
        registry = BugRegistry.from_jsonl((last / "registry.jsonl").read_text())
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise MalformedInput(f"corrupt campaign artifacts in {last}: {e}") from e
    reports = [campaign_mod.IterationReport(**r) for r in meta.get("reports", [])]
    compare = {}
    for d in compare_dirs:
        cps = sorted(
            (Path(d) / "checkpoints").glob("iter_*"), key=lambda p: int(p.name[5:])
        )
        if not cps:
            raise MalformedInput(f"no checkpoints under {d}")
        compare[Path(d).name] = BugRegistry.from_jsonl(
            (cps[-1] / "registry.jsonl").read_text()
        )
    coverage = (
        metrics.ingest_coverage_summary(coverage_path) if coverage_path else None
    )
    summary = metrics.emit_report(
        root / "report",
        reports,
        registry,
        corpus_stats=CorpusStore.load(last / "corpus").stats(),
        compare=compare or None,
        coverage=coverage,
        interval=interval,
    )
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


@cli.command("faultline-gen")
@click.option("--rng-seed", default=0, show_default=True)
@click.option("--num-faults", default=12, show_default=True)
@click.option("--hang-passes", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--corpus-out", type=click.Path(),
              help="Also emit a matching seed corpus directory.")
@click.option("--num-programs", default=50, show_default=True)
def faultline_gen_cmd(rng_seed, num_faults, hang_passes, out_path, corpus_out,
                      num_programs):
    """Emit a randomized faultline spec (and optionally matching seeds)."""
    spec = faultline_gen.generate_spec(
        rng_seed, num_faults, num_hang_passes=hang_passes
    )
    faultline_gen.write_spec(spec, out_path)
    click.echo(f"spec with {len(spec.faults)} fault(s) written to {out_path}")
    if corpus_out:
        programs = faultline_gen.generate_seed_corpus(rng_seed, num_programs)
        faultline_gen.write_seed_corpus(programs, corpus_out)
        click.echo(f"{len(programs)} seed program(s) written to {corpus_out}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.UsageError as e:
        click.echo(f"usage error: {e.format_message()}", err=True)
        return 1
    except (CompilerMissing, BackendUnavailable) as e:
        click.echo(f"environment error: {e}", err=True)
        return 2
    except (CorruptCheckpoint, MalformedInput) as e:
        click.echo(f"data corruption: {e}", err=True)
        return 3
    except (ConfigInvalid, IrFuzzError) as e:
        click.echo(f"error: {e}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
