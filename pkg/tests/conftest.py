"""Shared end-to-end runs.  Training is the slow part, so each protocol runs
once per session and every test that needs it reads the same result."""
import pytest

from forcerl.harness import ExperimentConfig, run_ablation_matrix, run_generalization

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def base_config():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def ablation(base_config, tmp_path_factory):
    return run_ablation_matrix(base_config, str(tmp_path_factory.mktemp("ablate")))


@pytest.fixture(scope="session")
def generalization(base_config, tmp_path_factory):
    return run_generalization(base_config, str(tmp_path_factory.mktemp("generalize")))


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion."""
    def emit(tag, passed, detail):
        line = f"{tag} {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
