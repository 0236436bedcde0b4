def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one line per acceptance criterion after capture is released."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
