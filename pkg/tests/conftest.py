import pathlib

import pytest

from irfuzz.corpus import make_program
from irfuzz.faultline_gen import generate_seed_corpus, generate_spec
from irfuzz.harness import FaultlineCompiler, default_pass_list

FIXTURE_DIR = pathlib.Path(__file__).parent / "fixtures"
MLIR_DIR = FIXTURE_DIR / "mlir"

_HERE = str(pathlib.Path(__file__).parent.resolve())
_criterion_results: list[tuple[str, bool]] = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(name): marks a test as one acceptance criterion"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call" or not str(item.path).startswith(_HERE):
        return
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        _criterion_results.append((marker.args[0], report.passed))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed in _criterion_results:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}")


@pytest.fixture(scope="session")
def mlir_fixture_files():
    files = sorted(MLIR_DIR.glob("*.mlir"))
    assert len(files) >= 30
    return files


@pytest.fixture()
def tiny_seeds():
    return generate_seed_corpus(11, 12)


@pytest.fixture()
def tiny_spec():
    return generate_spec(11, num_faults=5)


@pytest.fixture()
def tiny_compiler(tiny_spec):
    return FaultlineCompiler(tiny_spec)


@pytest.fixture(scope="session")
def all_passes():
    return default_pass_list()


def simple_program(text="func.func @f ( ) {\nfunc.return\n}\n"):
    return make_program(text)
