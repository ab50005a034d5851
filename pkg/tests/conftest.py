import pytest

from fairfl.engine import SimulationConfig, build_setup, run_simulation, summarize

# lines collected by the acceptance suite, printed once at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def default_run():
    """The default configuration: K = 10 devices, 100 rounds, both schemes."""
    config = SimulationConfig()
    setup = build_setup(config)
    records = run_simulation(config, setup)
    distances = [p.distance for p in setup.profiles]
    return config, setup, records, summarize(records, distances)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
