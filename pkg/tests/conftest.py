import os
import tempfile

# keep the alpha table out of the user's cache during tests
os.environ.setdefault("DISTREG_CACHE_DIR", tempfile.mkdtemp(prefix="distreg-test-"))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
