from pathlib import Path

import numpy as np
import pytest

from nesy_shortcuts.knowledge import parse_task

TASKS = Path(__file__).resolve().parent.parent / "tasks"

XOR_TEXT = "concepts 3\nlabels 1\nknowledge y1 <-> (c1 ^ c2 ^ c3)\n"

# filled by test_acceptance, printed once at the end of the session
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")


def pin_lines(bits):
    return "".join(f"pin {b}\n" for b in bits)


def random_task_text(rng: np.random.Generator, k: int, n_labels: int, pin_prob: float = 0.3) -> str:
    """A random well-formed task: a random reasoning map written as one
    ``yj <-> DNF`` equivalence per label bit."""
    n = 2**k
    n_used = int(rng.integers(1, min(2**n_labels, n) + 1))
    used = rng.choice(2**n_labels, size=n_used, replace=False)
    label_of = rng.choice(used, size=n)
    clauses = []
    for j in range(n_labels):
        shift = n_labels - 1 - j
        minterms = []
        for g in range(n):
            if (label_of[g] >> shift) & 1:
                lits = [
                    f"c{i + 1}" if (g >> (k - 1 - i)) & 1 else f"!c{i + 1}" for i in range(k)
                ]
                minterms.append("(" + " & ".join(lits) + ")")
        body = " | ".join(minterms) if minterms else "false"
        clauses.append(f"(y{j + 1} <-> ({body}))")
    pins = [format(g, f"0{k}b") for g in range(n) if rng.random() < pin_prob]
    return (
        f"concepts {k}\nlabels {n_labels}\nknowledge {' & '.join(clauses)}\n" + pin_lines(pins)
    )


@pytest.fixture
def xor_task():
    return parse_task(XOR_TEXT)


@pytest.fixture
def xor_pinned_task():
    return parse_task(XOR_TEXT + pin_lines(format(g, "03b") for g in range(8)))
