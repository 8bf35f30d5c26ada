import pytest

SALT = "test-salt"


@pytest.fixture
def salt(monkeypatch):
    monkeypatch.setenv("WSSCI_SALT", SALT)
    return SALT


def run_scenario(cfg, root, salt=SALT, **run_kw):
    """Generate ``cfg`` under ``root`` and run the pipeline on it."""
    from wssci.ingest import format_tz
    from wssci.pipeline import RunConfig, run_pipeline
    from wssci.synthgen import LOCATION_FILE, SEARCH_FILE, generate_scenario, write_scenario

    scenario = generate_scenario(cfg)
    write_scenario(scenario, root / "scenario")
    rc = RunConfig.resolve(None, study_window=str(cfg.study_window), tz=format_tz(cfg.tz), **run_kw)
    result = run_pipeline(root / "scenario" / SEARCH_FILE, root / "scenario" / LOCATION_FILE, root / "run", rc, salt)
    return scenario, result


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
