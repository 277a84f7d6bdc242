import sys
from pathlib import Path

import pytest

# Make the test-local helper modules (oracle, synth) importable as plain names.
sys.path.insert(0, str(Path(__file__).parent))


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(name): marks a test as one acceptance criterion"
    )


def pytest_collection_modifyitems(config, items):
    labels = {}
    for item in items:
        marker = item.get_closest_marker("acceptance")
        if marker is not None:
            labels[item.nodeid] = marker.args[0] if marker.args else item.name
    config._acceptance_labels = labels


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    labels = getattr(config, "_acceptance_labels", {})
    if not labels:
        return
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", None)
            if nodeid in labels and getattr(report, "when", "call") == "call":
                outcomes[nodeid] = "PASS" if status == "passed" else "FAIL"
    if not outcomes:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for nodeid, label in labels.items():
        if nodeid in outcomes:
            terminalreporter.write_line(f"  [{outcomes[nodeid]}] {label}")


@pytest.fixture(scope="session")
def atom_dataset(tmp_path_factory):
    """The shared atom fixture dataset, generated once per session."""
    from synth import make_atom_dataset

    return make_atom_dataset(tmp_path_factory.mktemp("atoms"))
