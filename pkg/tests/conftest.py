def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: headline acceptance criteria (slow)")
    config.addinivalue_line("markers", "slow: full-budget scheme comparisons")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} | {name} | {detail}")
