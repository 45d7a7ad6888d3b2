import pathlib

import pytest

from neural_backend.model import AdapterConfig, ModelConfig, build_model

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
    terminalreporter.section("neural backend acceptance criteria")
    for name, passed in _criterion_results:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {name}")

TOY_PROGRAMS = [
    (
        f"func.func @f{i} ( %arg0 : i32 ) -> i32 {{\n"
        f"%0 = arith.constant {i} : i32\n"
        "%1 = arith.addi %0 %arg0 : i32\n"
        "func.return %1 : i32\n"
        "}\n"
    )
    for i in range(10)
]


@pytest.fixture()
def tiny_model():
    return build_model(ModelConfig(), AdapterConfig(), seed=0)


@pytest.fixture()
def toy_programs():
    return list(TOY_PROGRAMS)
