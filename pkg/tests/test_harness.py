import os
import stat
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irfuzz.corpus import make_program
from irfuzz.errors import (
    CompilerMissing,
    DuplicatePass,
    MalformedInput,
    MalformedLine,
)
from irfuzz.faultline_gen import RARE_OPS, generate_seed_corpus, generate_spec
from irfuzz.harness import (
    ExecCompiler,
    FaultlineCompiler,
    FaultlineSpec,
    OutcomeKind,
    PassCategory,
    PassSpec,
    classify_stderr_crash,
    compile_check,
    load_pass_list,
    run_pass,
    sweep,
    transformed_outputs,
)

SPEC = FaultlineSpec(
    grammar_keywords=("func.func", "module"),
    faults=(("-canonicalize", "tosa.argmax", "isLegal(op) && \"argmax\""),),
    rewrites=(("arith.addi", "arith.muli"),),
    hang_passes=("-slow-pass",),
)

GOOD = "func.func @f ( ) {\n%0 = arith.addi %a %b : i32\nfunc.return\n}\n"
TRIGGER = "func.func @f ( ) {\n%0 = tosa.argmax %a : i32\nfunc.return\n}\n"


class TestPassList:
    def test_shipped_list_has_237_passes(self, all_passes):
        assert len(all_passes) == 237
        assert len({p.flag for p in all_passes}) == 237

    def test_shipped_list_categories(self, all_passes):
        cats = {p.category for p in all_passes}
        assert PassCategory.CONVERSION in cats
        assert PassCategory.BUFFERIZATION in cats

    def test_parse(self, tmp_path):
        f = tmp_path / "p.txt"
        f.write_text("# header\n-a Conversion\n-b\n\n-c Other # trailing\n")
        specs = load_pass_list(f)
        assert [(s.flag, s.category.value) for s in specs] == [
            ("-a", "Conversion"),
            ("-b", "Other"),
            ("-c", "Other"),
        ]

    def test_empty_file(self, tmp_path):
        f = tmp_path / "p.txt"
        f.write_text("# nothing\n")
        assert load_pass_list(f) == []

    def test_duplicate_rejected(self, tmp_path):
        f = tmp_path / "p.txt"
        f.write_text("-a\n-a\n")
        with pytest.raises(DuplicatePass):
            load_pass_list(f)

    def test_malformed_lines(self, tmp_path):
        f = tmp_path / "p.txt"
        f.write_text("not-a-flag\n")
        with pytest.raises(MalformedLine) as exc:
            load_pass_list(f)
        assert exc.value.lineno == 1
        f.write_text("-a BogusCategory\n")
        with pytest.raises(MalformedLine):
            load_pass_list(f)
        f.write_text("-a Conversion extra\n")
        with pytest.raises(MalformedLine):
            load_pass_list(f)

    def test_flag_shape_enforced(self):
        with pytest.raises(ValueError):
            PassSpec("no-dash")


class TestCrashClassifier:
    def test_markers(self):
        assert classify_stderr_crash("PLEASE submit a bug report to ...")
        assert classify_stderr_crash("Stack dump:\n #0 foo")
        assert classify_stderr_crash("x: Assertion `a == b' failed.")
        assert classify_stderr_crash("Assertion 'ok()' failed")

    def test_plain_diagnostics_not_crashes(self):
        assert not classify_stderr_crash("f.mlir:3:1: error: unknown op")
        assert not classify_stderr_crash("")


class TestFaultlineCompiler:
    def setup_method(self):
        self.compiler = FaultlineCompiler(SPEC)

    def test_valid_no_pass(self):
        out = self.compiler.run(GOOD, None)
        assert out.kind is OutcomeKind.VALID
        assert out.exit_code == 0
        assert out.wall_time == FaultlineCompiler.SIMULATED_SECONDS_PER_RUN

    def test_invalid_grammar_unbalanced(self):
        out = self.compiler.run("func.func @f ( ) {\n", None)
        assert out.kind is OutcomeKind.DIAGNOSTIC
        assert "error" in out.stderr

    def test_invalid_grammar_bad_keyword(self):
        out = self.compiler.run("banana @f { }", None)
        assert out.kind is OutcomeKind.DIAGNOSTIC

    def test_crash_needs_both_pass_and_trigger(self):
        assert self.compiler.run(TRIGGER, "-canonicalize").kind is OutcomeKind.CRASH
        assert self.compiler.run(TRIGGER, "-other-pass").kind is OutcomeKind.VALID
        assert self.compiler.run(GOOD, "-canonicalize").kind is OutcomeKind.VALID
        assert self.compiler.run(TRIGGER, None).kind is OutcomeKind.VALID

    def test_crash_shape(self):
        out = self.compiler.run(TRIGGER, "-canonicalize")
        assert out.signal == 6
        assert "Assertion 'isLegal(op) && \"argmax\"' failed." in out.stderr
        assert "Stack dump:" in out.stderr
        assert classify_stderr_crash(out.stderr)

    def test_hang_pass_times_out(self):
        out = self.compiler.run(GOOD, "-slow-pass", timeout=2.0)
        assert out.kind is OutcomeKind.TIMEOUT
        assert out.wall_time == 2.0

    def test_rewrite_applied_to_stdout(self):
        out = self.compiler.run(GOOD, "-any-pass")
        assert "arith.muli" in out.stdout
        assert "arith.addi" not in out.stdout

    def test_deterministic(self):
        a = self.compiler.run(TRIGGER, "-canonicalize")
        b = FaultlineCompiler(SPEC).run(TRIGGER, "-canonicalize")
        assert a == b


class TestSweep:
    PASSES = [PassSpec("-canonicalize"), PassSpec("-cse"), PassSpec("-inline")]

    def test_failed_check_yields_empty(self):
        compiler = FaultlineCompiler(SPEC)
        assert sweep(compiler, make_program("junk {"), self.PASSES) == []

    def test_one_outcome_per_pass_in_order(self):
        compiler = FaultlineCompiler(SPEC)
        results = sweep(compiler, make_program(GOOD), self.PASSES)
        assert [p.flag for p, _ in results] == [p.flag for p in self.PASSES]
        assert all(o.kind is OutcomeKind.VALID for _, o in results)

    def test_single_crash_isolated(self):
        compiler = FaultlineCompiler(SPEC)
        results = sweep(compiler, make_program(TRIGGER), self.PASSES)
        kinds = {p.flag: o.kind for p, o in results}
        assert kinds["-canonicalize"] is OutcomeKind.CRASH
        assert kinds["-cse"] is OutcomeKind.VALID

    def test_full_pass_list(self, tiny_compiler, all_passes):
        results = sweep(tiny_compiler, make_program(GOOD), all_passes)
        assert len(results) == 237

    def test_parallel_matches_serial(self, tiny_compiler, all_passes):
        q = make_program(TRIGGER)
        serial = sweep(tiny_compiler, q, all_passes, workers=1)
        parallel = sweep(tiny_compiler, q, all_passes, workers=4)
        assert serial == parallel

    def test_transformed_outputs(self):
        compiler = FaultlineCompiler(SPEC)
        q = make_program(GOOD)
        results = sweep(compiler, q, self.PASSES)
        outs = transformed_outputs(q, results)
        assert len(outs) == 3
        assert all(t.source_id == q.id for t in outs)
        assert all(t.output_text.endswith("\n") for t in outs)

    def test_transformed_excludes_crashes(self):
        compiler = FaultlineCompiler(SPEC)
        q = make_program(TRIGGER)
        outs = transformed_outputs(q, sweep(compiler, q, self.PASSES))
        assert {t.pass_flag for t in outs} == {"-cse", "-inline"}


@settings(max_examples=1000, deadline=None)
@given(
    spec_seed=st.integers(0, 10_000),
    program_seed=st.integers(0, 10_000),
    pass_idx=st.integers(0, 236),
)
def test_crash_iff_trigger_under_faulty_pass(spec_seed, program_seed, pass_idx):
    """A run crashes exactly when the pass is faulty and its trigger occurs."""
    from irfuzz.harness import default_pass_list

    passes = default_pass_list()
    spec = generate_spec(spec_seed, num_faults=6, passes=passes)
    compiler = FaultlineCompiler(spec)
    (program,) = generate_seed_corpus(program_seed, num_programs=1)
    flag = passes[pass_idx].flag
    outcome = compiler.run(program.text, flag)
    tokens = set(program.tokens)
    expected_crash = any(
        p == flag and trig in tokens for p, trig, _ in spec.faults
    )
    assert (outcome.kind is OutcomeKind.CRASH) == expected_crash


class TestExecCompiler:
    @pytest.fixture()
    def stub_binary(self, tmp_path):
        # crashes (abort-style stderr + exit 134) when input mentions the
        # trigger; errors on "bad"; otherwise echoes the file
        script = tmp_path / "stub-opt"
        script.write_text(
            textwrap.dedent(
                """\
                #!/bin/sh
                f=""
                for a in "$@"; do f="$a"; done
                if grep -q crashme "$f"; then
                  echo "stub: Assertion 'x != y' failed." >&2
                  echo "Stack dump:" >&2
                  exit 134
                fi
                if grep -q bad "$f"; then
                  echo "error: bad input" >&2
                  exit 1
                fi
                cat "$f"
                """
            )
        )
        script.chmod(script.stat().st_mode | stat.S_IEXEC)
        return str(script)

    def test_missing_binary(self):
        with pytest.raises(CompilerMissing):
            ExecCompiler("/no/such/compiler-binary")

    def test_valid(self, stub_binary):
        out = ExecCompiler(stub_binary).run("module { }", None)
        assert out.kind is OutcomeKind.VALID
        assert out.stdout.strip() == "module { }"
        assert out.wall_time > 0

    def test_diagnostic(self, stub_binary):
        out = ExecCompiler(stub_binary).run("bad input", None)
        assert out.kind is OutcomeKind.DIAGNOSTIC
        assert out.exit_code == 1

    def test_crash_via_stderr_markers(self, stub_binary):
        out = ExecCompiler(stub_binary).run("crashme", "-canonicalize")
        assert out.kind is OutcomeKind.CRASH
        assert "Assertion" in out.stderr

    def test_compile_check_and_run_pass_wrappers(self, stub_binary):
        compiler = ExecCompiler(stub_binary)
        q = make_program("module { }")
        assert compile_check(compiler, q).kind is OutcomeKind.VALID
        assert run_pass(compiler, q, PassSpec("-cse")).kind is OutcomeKind.VALID


class TestFaultlineSpecIo:
    def test_round_trip(self, tiny_spec, tmp_path):
        path = tmp_path / "spec.json"
        from irfuzz.faultline_gen import write_spec

        write_spec(tiny_spec, path)
        assert FaultlineSpec.from_file(path) == tiny_spec

    def test_malformed_spec_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(MalformedInput):
            FaultlineSpec.from_file(path)

    def test_generated_spec_shape(self, tiny_spec):
        assert len(tiny_spec.faults) == 5
        for pass_flag, trigger, sig in tiny_spec.faults:
            assert pass_flag.startswith("-")
            assert trigger in RARE_OPS
            assert trigger in sig

    def test_generated_corpus_compiles_clean(self, tiny_seeds, tiny_compiler):
        valid = sum(
            compile_check(tiny_compiler, p).kind is OutcomeKind.VALID
            for p in tiny_seeds
        )
        assert valid == len(tiny_seeds)
