"""Counting and enumerating deterministic optima.

A deterministic optimum (det-opt) sends every ground-truth vector ``g`` to a
single concept vector in ``S_{h(g)}``.  Four regimes are counted:

=========  ==========================================
regime     count
=========  ==========================================
``L``      prod_y |S_y| ** |S_y|
``L+R``    prod_y |S_y|!
``L+C``    prod_y |S_y| ** (|S_y| - nu_y)
``L+R+C``  prod_y (|S_y| - nu_y)!
=========  ==========================================

``R`` (reconstruction) forces injective maps; ``C`` (concept supervision)
forces every pinned ``g`` onto itself.  Labels outside the image of ``h``
do not contribute.
"""

from __future__ import annotations

import io
import itertools
from dataclasses import dataclass
from math import factorial, prod
from typing import Iterator

from .knowledge import BitVec, Task, bits_to_int, bits_to_str, int_to_bits

REGIMES = ("L", "L+R", "L+C", "L+R+C")


class LimitExceeded(Exception):
    def __init__(self, count: int, limit: int):
        super().__init__(f"{count} det-opts exceed the enumeration limit {limit}")
        self.count = count
        self.limit = limit


@dataclass(frozen=True)
class DetOpt:
    """A total map from ground-truth vectors to concept vectors.

    ``mapping[g]`` is the integer index of the concept vector assigned to the
    ground-truth vector with integer index ``g``.
    """

    k: int
    mapping: tuple[int, ...]
    injective: bool = False

    def __call__(self, g: BitVec) -> BitVec:
        return int_to_bits(self.mapping[bits_to_int(g)], self.k)

    def is_injective(self) -> bool:
        return len(set(self.mapping)) == len(self.mapping)

    def is_admissible(self, task: Task) -> bool:
        labels = task.label_index
        return all(labels[c] == labels[g] for g, c in enumerate(self.mapping))

    def describe(self) -> str:
        return " ".join(
            f"{bits_to_str(int_to_bits(g, self.k))}->{bits_to_str(int_to_bits(c, self.k))}"
            for g, c in enumerate(self.mapping)
        )


def identity(k: int) -> DetOpt:
    return DetOpt(k, tuple(range(2**k)), injective=True)


def is_ground_truth(d: DetOpt) -> bool:
    """True iff ``d`` is the identity; any other det-opt is a reasoning shortcut."""
    return d.mapping == tuple(range(len(d.mapping)))


# ---------------------------------------------------------------------------
# Closed forms


def _sizes(task: Task) -> list[tuple[int, int]]:
    return [(len(s), task.nu(y)) for y, s in task.s_sets.items()]


def count_likelihood(task: Task) -> int:
    return prod(s**s for s, _ in _sizes(task))


def count_likelihood_rec(task: Task) -> int:
    return prod(factorial(s) for s, _ in _sizes(task))


def count_supervised(task: Task, with_rec: bool) -> int:
    # 0 ** 0 == 1 and 0! == 1 cover fully supervised labels
    if with_rec:
        return prod(factorial(s - nu) for s, nu in _sizes(task))
    return prod(s ** (s - nu) for s, nu in _sizes(task))


def count_regime(task: Task, injective: bool, respect_pins: bool) -> int:
    if respect_pins:
        return count_supervised(task, with_rec=injective)
    return count_likelihood_rec(task) if injective else count_likelihood(task)


def regime_name(injective: bool, respect_pins: bool) -> str:
    return "L" + ("+R" if injective else "") + ("+C" if respect_pins else "")


# ---------------------------------------------------------------------------
# Enumeration


def iter_detopts(task: Task, injective: bool, respect_pins: bool) -> Iterator[DetOpt]:
    """Yield det-opts in lexicographic order of ``(mapping[0], mapping[1], ...)``."""
    n = 2**task.k
    pools = {y: task.s_indices(y) for y in task.s_sets}
    fixed = set(task.pinned) if respect_pins else set()
    choices: list[tuple[int, ...]] = []
    for g in range(n):
        if g in fixed:
            choices.append((g,))
        else:
            y = task.h[g]
            pool = pools[y]
            if injective:
                # pinned g already own their own c
                pool = tuple(c for c in pool if c not in fixed)
            choices.append(pool)

    if not injective:
        for mapping in itertools.product(*choices):
            yield DetOpt(task.k, mapping)
        return

    # backtracking keeps lexicographic order across interleaved labels
    mapping = [0] * n
    used = [False] * n

    def extend(g: int) -> Iterator[DetOpt]:
        if g == n:
            yield DetOpt(task.k, tuple(mapping), injective=True)
            return
        for c in choices[g]:
            if used[c]:
                continue
            used[c] = True
            mapping[g] = c
            yield from extend(g + 1)
            used[c] = False

    yield from extend(0)


def enumerate_detopts(
    task: Task, injective: bool, respect_pins: bool, limit: int
) -> list[DetOpt]:
    """Materialize every det-opt of a regime, refusing when there are too many."""
    count = count_regime(task, injective, respect_pins)
    if count > limit:
        raise LimitExceeded(count, limit)
    return list(iter_detopts(task, injective, respect_pins))


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class LabelRow:
    label: BitVec
    s_size: int
    nu: int

    @property
    def factors(self) -> tuple[int, int, int, int]:
        s, nu = self.s_size, self.nu
        return s**s, factorial(s), s ** (s - nu), factorial(s - nu)


@dataclass(frozen=True)
class CountReport:
    rows: tuple[LabelRow, ...]
    n_L: int
    n_LR: int
    n_LC: int
    n_LRC: int

    def counts(self) -> dict[str, int]:
        return dict(zip(REGIMES, (self.n_L, self.n_LR, self.n_LC, self.n_LRC)))

    def to_table(self) -> str:
        header = ("label", "|S_y|", "nu_y", "n_L", "n_LR", "n_LC", "n_LRC")
        body = [
            (bits_to_str(r.label), str(r.s_size), str(r.nu), *map(str, r.factors))
            for r in self.rows
        ]
        total = (
            "total",
            str(sum(r.s_size for r in self.rows)),
            str(sum(r.nu for r in self.rows)),
            str(self.n_L),
            str(self.n_LR),
            str(self.n_LC),
            str(self.n_LRC),
        )
        lines = [header, *body, total]
        widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
        out = io.StringIO()
        for i, line in enumerate(lines):
            if i == len(lines) - 1:
                out.write("  ".join("-" * w for w in widths) + "\n")
            out.write("  ".join(cell.rjust(w) for cell, w in zip(line, widths)).rstrip() + "\n")
            if i == 0:
                out.write("  ".join("-" * w for w in widths) + "\n")
        return out.getvalue()

    def to_csv(self) -> str:
        lines = ["label,s_size,nu,n_L,n_LR,n_LC,n_LRC"]
        for r in self.rows:
            lines.append(",".join([bits_to_str(r.label), str(r.s_size), str(r.nu), *map(str, r.factors)]))
        lines.append(
            f"total,{sum(r.s_size for r in self.rows)},{sum(r.nu for r in self.rows)},"
            f"{self.n_L},{self.n_LR},{self.n_LC},{self.n_LRC}"
        )
        return "\n".join(lines) + "\n"


def count_report(task: Task) -> CountReport:
    rows = tuple(LabelRow(y, len(s), task.nu(y)) for y, s in task.s_sets.items())
    return CountReport(
        rows=rows,
        n_L=count_likelihood(task),
        n_LR=count_likelihood_rec(task),
        n_LC=count_supervised(task, with_rec=False),
        n_LRC=count_supervised(task, with_rec=True),
    )
