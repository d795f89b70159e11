from __future__ import annotations

import json

import pytest

# Pathway documents written out by hand, independently of kfptools.fixtures.
CYCLIC3_DOC = {
    "metabolites": ["X1", "X2", "X3"],
    "edges": [
        {"id": "f1", "kind": "labeled_in", "target": "X1"},
        {"id": "f2", "kind": "unlabeled_in", "target": "X1"},
        {"id": "f3", "kind": "exit", "source": "X1"},
        {"id": "f4", "kind": "internal", "source": "X1", "target": "X2"},
        {"id": "f5", "kind": "unlabeled_in", "target": "X2"},
        {"id": "f6", "kind": "exit", "source": "X2"},
        {"id": "f7", "kind": "internal", "source": "X2", "target": "X3"},
        {"id": "f8", "kind": "unlabeled_in", "target": "X3"},
        {"id": "f9", "kind": "exit", "source": "X3"},
        {"id": "f10", "kind": "internal", "source": "X3", "target": "X1"},
    ],
}

IRREVERSIBLE2_DOC = {
    "metabolites": ["X1", "X2"],
    "edges": [
        {"id": "f1", "kind": "labeled_in", "target": "X1"},
        {"id": "f2", "kind": "unlabeled_in", "target": "X1"},
        {"id": "f3", "kind": "exit", "source": "X1"},
        {"id": "f4", "kind": "internal", "source": "X1", "target": "X2"},
        {"id": "f5", "kind": "unlabeled_in", "target": "X2"},
        {"id": "f6", "kind": "exit", "source": "X2"},
    ],
}

REVERSIBLE2_DOC = {
    "metabolites": ["X1", "X2"],
    "edges": [
        {"id": "f1", "kind": "labeled_in", "target": "X1"},
        {"id": "f2", "kind": "unlabeled_in", "target": "X1"},
        {"id": "f3", "kind": "exit", "source": "X1"},
        {"id": "f4", "kind": "internal", "source": "X1", "target": "X2"},
        {"id": "f5", "kind": "unlabeled_in", "target": "X2"},
        {"id": "f-4", "kind": "internal", "source": "X2", "target": "X1"},
        {"id": "f6", "kind": "exit", "source": "X2"},
    ],
}


def with_fluxes(doc: dict, fluxes: dict) -> dict:
    out = json.loads(json.dumps(doc))
    for e in out["edges"]:
        if e["id"] in fluxes:
            e["flux"] = fluxes[e["id"]]
    return out


@pytest.fixture
def write_doc(tmp_path):
    def _write(doc: dict, name: str = "pathway.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc), encoding="utf-8")
        return path
    return _write


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])
