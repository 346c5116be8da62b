import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from subclassrep.dataset import ImageRecord  # noqa: E402


def rec(id, label, tags=(), features=(0.0,)):
    return ImageRecord(id, label, frozenset(tags), np.asarray(features, dtype=float))


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(rows, name="corpus.jsonl"):
        path = tmp_path / name
        with path.open("w") as fh:
            for row in rows:
                fh.write(row if isinstance(row, str) else json.dumps(row))
                fh.write("\n")
        return path

    return _write


@pytest.fixture(scope="session")
def mixture():
    from subclassrep.synthetic import make_subclass_mixture

    return make_subclass_mixture(seed=0)


# acceptance lines collected during the session, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []
# disjointness checks performed by the pipeline and any that fired unexpectedly
HYGIENE = {"checks": 0, "fired": []}


@pytest.fixture(autouse=True)
def _watch_hygiene(request, monkeypatch):
    from subclassrep import pipeline

    original = pipeline.check_disjoint
    probe = request.node.get_closest_marker("hygiene_probe") is not None

    def watched(**groups):
        HYGIENE["checks"] += 1
        try:
            original(**groups)
        except Exception as exc:
            if not probe:
                HYGIENE["fired"].append(f"{request.node.nodeid}: {exc}")
            raise

    monkeypatch.setattr(pipeline, "check_disjoint", watched)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES and not HYGIENE["checks"]:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
    status = "PASS" if not HYGIENE["fired"] else "FAIL"
    terminalreporter.write_line(
        f"[{status}] data hygiene (suite-wide): {HYGIENE['checks']} pipeline disjointness checks, "
        f"{len(HYGIENE['fired'])} unexpected firings"
    )
    for item in HYGIENE["fired"]:
        terminalreporter.write_line(f"    {item}")


def pytest_sessionfinish(session, exitstatus):
    if HYGIENE["fired"] and exitstatus == 0:
        session.exitstatus = 1
