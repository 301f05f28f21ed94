"""Shared fixtures and the acceptance-criteria report hook."""

import functools
import tempfile
from pathlib import Path

import numpy as np
import pytest

from kegat.kgstore import load_graph

# Acceptance tests append one "PASS: ..." / "FAIL: ..." line per criterion;
# the terminal-summary hook prints them after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


SUGAR_KB_ROWS = [
    ("sugar", "/r/UsedFor", "sweetening_coffee", 3.5),
    ("sugar", "/r/IsA", "sweet_food", 2.0),
    ("sugar", "/r/IsA", "carbohydrate", 0.8),
    ("coffee", "/r/IsA", "drink", 2.5),
    ("coffee", "/r/AtLocation", "cup", 1.2),
]


def write_kb(path, rows):
    lines = [f"{h}\t{r}\t{t}\t{w}" for h, r, t, w in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def sugar_kb_path(tmp_path):
    return write_kb(tmp_path / "kb.tsv", SUGAR_KB_ROWS)


@pytest.fixture
def sugar_graph(sugar_kb_path):
    return load_graph(sugar_kb_path)


@functools.lru_cache(maxsize=1)
def sugar_graph_cached():
    """Module-level sugar graph for non-fixture (hypothesis) tests."""
    with tempfile.TemporaryDirectory() as tmp:
        return load_graph(write_kb(Path(tmp) / "kb.tsv", SUGAR_KB_ROWS))


def numeric_grad(f, x, step=1e-6):
    """Central finite differences of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += step
        xm = x.copy()
        xm[idx] -= step
        g[idx] = (f(xp) - f(xm)) / (2 * step)
        it.iternext()
    return g
