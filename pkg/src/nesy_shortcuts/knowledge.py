"""Propositional knowledge: parsing, evaluation and task compilation.

Concept variables are written ``c1..ck`` and label variables ``y1..yl``.
Operators, tightest binding first::

    !      negation
    &      conjunction
    ^      exclusive or
    |      disjunction
    ->     implication (right-associative)
    <->    equivalence

All binary operators except ``->`` associate to the left.  ``true`` and
``false`` are constants.

Bit vectors are tuples of 0/1 ints.  Their integer index is big-endian,
so ``c1`` is the most significant bit.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Union

import numpy as np

MAX_CONCEPTS = 16

BitVec = tuple[int, ...]


class KnowledgeError(ValueError):
    """Base class for problems with knowledge formulas and task files."""


class FormulaSyntaxError(KnowledgeError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


class UnknownVariable(KnowledgeError):
    pass


class IndexOutOfRange(KnowledgeError):
    pass


class NotWellFormed(KnowledgeError):
    """Some concept vector is consistent with zero or several label vectors."""

    def __init__(self, c: BitVec, count: int):
        super().__init__(
            f"concept vector {bits_to_str(c)} is consistent with {count} label "
            f"vectors (exactly one required)"
        )
        self.c = c
        self.count = count


# ---------------------------------------------------------------------------
# Formula AST


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Xor:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Iff:
    left: "Formula"
    right: "Formula"


Formula = Union[Const, Var, Not, And, Or, Xor, Implies, Iff]

# binary node type -> (symbol, precedence, right associative)
_BINARY = {
    Iff: ("<->", 1, False),
    Implies: ("->", 2, True),
    Or: ("|", 3, False),
    Xor: ("^", 4, False),
    And: ("&", 5, False),
}
_BY_SYMBOL = {sym: (node, prec, right) for node, (sym, prec, right) in _BINARY.items()}
_UNARY_PREC = 6
_VAR_RE = re.compile(r"([cy])([0-9]+)$")


# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(r"\s*(?:(<->|->|[!&^|()])|([A-Za-z_][A-Za-z_0-9]*))")


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            bad = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise FormulaSyntaxError(f"unexpected character {text[bad]!r}", bad)
        start = m.start(1) if m.group(1) else m.start(2)
        tokens.append((m.group(1) or m.group(2), start))
        pos = m.end()
    tokens.append(("", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, k: int, n_labels: int):
        self.tokens = _tokenize(text)
        self.i = 0
        self.k = k
        self.n_labels = n_labels

    def peek(self) -> tuple[str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def parse(self) -> Formula:
        node = self.binary(1)
        tok, pos = self.peek()
        if tok:
            raise FormulaSyntaxError(f"unexpected token {tok!r}", pos)
        return node

    def binary(self, min_prec: int) -> Formula:
        # precedence climbing
        left = self.unary()
        while True:
            tok, _ = self.peek()
            if tok not in _BY_SYMBOL:
                return left
            node, prec, right_assoc = _BY_SYMBOL[tok]
            if prec < min_prec:
                return left
            self.take()
            right = self.binary(prec if right_assoc else prec + 1)
            left = node(left, right)

    def unary(self) -> Formula:
        tok, pos = self.take()
        if tok == "!":
            return Not(self.unary())
        if tok == "(":
            inner = self.binary(1)
            close, cpos = self.take()
            if close != ")":
                raise FormulaSyntaxError("expected ')'", cpos)
            return inner
        if tok == "":
            raise FormulaSyntaxError("unexpected end of input", pos)
        if tok in ("true", "false"):
            return Const(tok == "true")
        if tok[0].isalpha() or tok[0] == "_":
            return self.variable(tok, pos)
        raise FormulaSyntaxError(f"unexpected token {tok!r}", pos)

    def variable(self, name: str, pos: int) -> Var:
        m = _VAR_RE.match(name)
        if m is None:
            raise UnknownVariable(f"unknown variable {name!r} at position {pos}")
        kind, idx = m.group(1), int(m.group(2))
        bound = self.k if kind == "c" else self.n_labels
        if not 1 <= idx <= bound:
            raise IndexOutOfRange(
                f"variable {name!r} at position {pos} out of range "
                f"({kind}1..{kind}{bound})"
            )
        return Var(f"{kind}{idx}")


def parse_formula(text: str, k: int, n_labels: int) -> Formula:
    """Parse ``text`` into a Formula over ``c1..ck`` and ``y1..yl``."""
    if k < 1 or n_labels < 1:
        raise KnowledgeError("need at least one concept and one label")
    return _Parser(text, k, n_labels).parse()


def _prec(f: Formula) -> int:
    if type(f) in _BINARY:
        return _BINARY[type(f)][1]
    return _UNARY_PREC + 1


def to_text(f: Formula) -> str:
    """Render with the minimum parentheses needed to parse back to ``f``."""
    if isinstance(f, Const):
        return "true" if f.value else "false"
    if isinstance(f, Var):
        return f.name
    if isinstance(f, Not):
        inner = to_text(f.child)
        return "!" + (f"({inner})" if _prec(f.child) <= _UNARY_PREC else inner)
    sym, prec, right_assoc = _BINARY[type(f)]
    lt, rt = to_text(f.left), to_text(f.right)
    lp, rp = _prec(f.left), _prec(f.right)
    if lp < prec or (right_assoc and lp == prec):
        lt = f"({lt})"
    if rp < prec or (not right_assoc and rp == prec):
        rt = f"({rt})"
    return f"{lt} {sym} {rt}"


# ---------------------------------------------------------------------------
# Evaluation


def _eval(f: Formula, env: dict):
    # works on Python bools and numpy boolean arrays alike
    if isinstance(f, Var):
        return env[f.name]
    if isinstance(f, Const):
        return f.value
    if isinstance(f, Not):
        return np.logical_not(_eval(f.child, env))
    a, b = _eval(f.left, env), _eval(f.right, env)
    if isinstance(f, And):
        return np.logical_and(a, b)
    if isinstance(f, Or):
        return np.logical_or(a, b)
    if isinstance(f, Xor):
        return np.logical_xor(a, b)
    if isinstance(f, Implies):
        return np.logical_or(np.logical_not(a), b)
    if isinstance(f, Iff):
        return np.logical_not(np.logical_xor(a, b))
    raise TypeError(f"not a formula node: {f!r}")


def evaluate(f: Formula, c: BitVec, y: BitVec) -> bool:
    """Truth value of ``f`` under concepts ``c`` and labels ``y``."""
    env = {f"c{i + 1}": bool(b) for i, b in enumerate(c)}
    env.update({f"y{j + 1}": bool(b) for j, b in enumerate(y)})
    return bool(_eval(f, env))


def truth_table(f: Formula, k: int, n_labels: int) -> np.ndarray:
    """Boolean array ``T[c, y]`` over all integer-indexed concept/label pairs."""
    cs = all_bitvecs(k)
    ys = all_bitvecs(n_labels)
    env = {}
    for i in range(k):
        env[f"c{i + 1}"] = cs[:, i].astype(bool)[:, None]
    for j in range(n_labels):
        env[f"y{j + 1}"] = ys[:, j].astype(bool)[None, :]
    out = _eval(f, env)
    return np.broadcast_to(out, (2**k, 2**n_labels)).copy()


# ---------------------------------------------------------------------------
# Bit vectors


def int_to_bits(v: int, n: int) -> BitVec:
    return tuple((v >> (n - 1 - i)) & 1 for i in range(n))


def bits_to_int(bits: Iterable[int]) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


def bits_to_str(bits: Iterable[int]) -> str:
    return "".join(str(int(b)) for b in bits)


def str_to_bits(s: str) -> BitVec:
    if not s or set(s) - {"0", "1"}:
        raise KnowledgeError(f"not a bitstring: {s!r}")
    return tuple(int(ch) for ch in s)


def all_bitvecs(n: int) -> np.ndarray:
    """``(2**n, n)`` int array; row ``v`` holds the big-endian bits of ``v``."""
    v = np.arange(2**n)[:, None]
    shifts = np.arange(n - 1, -1, -1)[None, :]
    return ((v >> shifts) & 1).astype(np.int64)


# ---------------------------------------------------------------------------
# Tasks


@dataclass(frozen=True)
class Task:
    """A compiled, well-formed task.

    ``h[g]`` is the label vector of the ground-truth vector with integer
    index ``g``.  ``s_sets`` and ``pins`` are keyed by achievable label
    vectors in ascending integer order.
    """

    k: int
    n_labels: int
    knowledge: Formula
    h: tuple[BitVec, ...]
    s_sets: dict[BitVec, tuple[BitVec, ...]]
    pins: dict[BitVec, frozenset[BitVec]] = field(default_factory=dict)

    @property
    def labels(self) -> list[BitVec]:
        return list(self.s_sets)

    @cached_property
    def label_index(self) -> np.ndarray:
        """Integer label of each ground-truth/concept vector index."""
        return np.array([bits_to_int(y) for y in self.h], dtype=np.int64)

    @cached_property
    def pinned(self) -> tuple[int, ...]:
        """Sorted integer indices of pinned ground-truth vectors."""
        return tuple(sorted(bits_to_int(g) for ps in self.pins.values() for g in ps))

    def nu(self, y: BitVec) -> int:
        return len(self.pins.get(y, ()))

    def s_indices(self, y: BitVec) -> tuple[int, ...]:
        return tuple(bits_to_int(c) for c in self.s_sets[y])


def compile_task(
    f: Formula, k: int, n_labels: int, pins: Iterable[BitVec] = ()
) -> Task:
    """Enumerate every (c, y) pair and build the reasoning map and the S_y sets."""
    if not 1 <= k <= MAX_CONCEPTS:
        raise KnowledgeError(f"concept count must be in 1..{MAX_CONCEPTS}, got {k}")
    if n_labels < 1:
        raise KnowledgeError("need at least one label")
    table = truth_table(f, k, n_labels)
    counts = table.sum(axis=1)
    bad = np.flatnonzero(counts != 1)
    if bad.size:
        c = int(bad[0])
        raise NotWellFormed(int_to_bits(c, k), int(counts[c]))
    label_of = table.argmax(axis=1)
    h = tuple(int_to_bits(int(y), n_labels) for y in label_of)

    s_sets: dict[BitVec, tuple[BitVec, ...]] = {}
    for y in sorted(set(label_of.tolist())):
        members = np.flatnonzero(label_of == y)
        s_sets[int_to_bits(y, n_labels)] = tuple(int_to_bits(int(c), k) for c in members)

    grouped: dict[BitVec, set[BitVec]] = {}
    for g in pins:
        g = tuple(int(b) for b in g)
        if len(g) != k or set(g) - {0, 1}:
            raise KnowledgeError(f"pin {bits_to_str(g)} is not a {k}-bit vector")
        grouped.setdefault(h[bits_to_int(g)], set()).add(g)
    return Task(
        k=k,
        n_labels=n_labels,
        knowledge=f,
        h=h,
        s_sets=s_sets,
        pins={y: frozenset(grouped[y]) for y in s_sets if y in grouped},
    )


def with_pins(task: Task, pins: Iterable[BitVec]) -> Task:
    """Recompile ``task`` with a different set of supervised vectors."""
    return compile_task(task.knowledge, task.k, task.n_labels, pins)


def parse_task(text: str) -> Task:
    """Parse the line-oriented task file format.

    Required keys ``concepts``, ``labels`` and ``knowledge``; any number of
    ``pin <bits>`` lines.  ``#`` starts a comment.
    """
    header: dict[str, str] = {}
    pins: list[tuple[str, int]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        rest = rest.strip()
        if key == "pin":
            pins.append((rest, lineno))
        elif key in ("concepts", "labels", "knowledge"):
            if key in header:
                raise KnowledgeError(f"line {lineno}: duplicate {key!r}")
            header[key] = rest
        else:
            raise KnowledgeError(f"line {lineno}: unknown directive {key!r}")
    missing = [key for key in ("concepts", "labels", "knowledge") if key not in header]
    if missing:
        raise KnowledgeError(f"missing directive(s): {', '.join(missing)}")
    try:
        k = int(header["concepts"])
        n_labels = int(header["labels"])
    except ValueError as e:
        raise KnowledgeError(f"bad arity: {e}") from None
    if not 1 <= k <= MAX_CONCEPTS:
        raise KnowledgeError(f"concept count must be in 1..{MAX_CONCEPTS}, got {k}")
    formula = parse_formula(header["knowledge"], k, n_labels)
    pin_vecs = []
    for s, lineno in pins:
        bits = str_to_bits(s)
        if len(bits) != k:
            raise KnowledgeError(f"line {lineno}: pin {s!r} must have {k} bits")
        pin_vecs.append(bits)
    return compile_task(formula, k, n_labels, pin_vecs)


def load_task(path: str | Path) -> Task:
    return parse_task(Path(path).read_text(encoding="utf-8"))


def format_task(task: Task) -> str:
    """Inverse of :func:`parse_task` (pins in ascending order)."""
    lines = [
        f"concepts {task.k}",
        f"labels {task.n_labels}",
        f"knowledge {to_text(task.knowledge)}",
    ]
    lines += [f"pin {bits_to_str(int_to_bits(g, task.k))}" for g in task.pinned]
    return "\n".join(lines) + "\n"
