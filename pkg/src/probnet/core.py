"""Possible worlds, propositions and constraint-term features.

A world is a 0/1 vector of length ``k``.  Everything here accepts either a
single world of shape ``(k,)`` or a batch of shape ``(n, k)`` and evaluates
along the last axis, so the same code serves scalar queries and the
vectorised inner loops of the sampler.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class StructureError(ValueError):
    """A proposition or term refers to something that does not exist."""


@dataclass(frozen=True)
class AtomicVariable:
    index: int
    name: str
    hidden: bool = False


def as_world(bits) -> np.ndarray:
    """Coerce a bit sequence (or batch of them) to a uint8 array."""
    x = np.asarray(bits, dtype=np.uint8)
    if np.any(x > 1):
        raise ValueError("world bits must be 0 or 1")
    return x


def all_worlds(k: int) -> np.ndarray:
    """All 2**k worlds in lexicographic order (x_1 is the most significant bit)."""
    w = np.arange(2 ** k, dtype=np.int64)
    shifts = np.arange(k - 1, -1, -1, dtype=np.int64)
    return ((w[:, None] >> shifts) & 1).astype(np.uint8)


def world_index(x) -> int:
    """Inverse of :func:`all_worlds` for a single world."""
    idx = 0
    for b in np.asarray(x).ravel():
        idx = (idx << 1) | int(b)
    return idx


def _column(x: np.ndarray, i: int, fix: Optional[tuple]) -> np.ndarray:
    if fix is not None and fix[0] == i:
        return np.full(x.shape[:-1], bool(fix[1]))
    return x[..., i].astype(bool)


# ---------------------------------------------------------------------------
# Propositions
# ---------------------------------------------------------------------------

class Proposition:
    """Boolean formula over atoms.  Subclasses are immutable."""

    def evaluate(self, x, fix: Optional[tuple] = None):
        """Truth value on world(s) ``x``; ``fix=(i, v)`` overrides bit ``i`` with ``v``."""
        raise NotImplementedError

    def variables(self) -> frozenset:
        raise NotImplementedError

    def to_text(self, names: Sequence[str]) -> str:
        raise NotImplementedError

    def __invert__(self):
        return Not(self)

    def __and__(self, other):
        return And((self, other))

    def __or__(self, other):
        return Or((self, other))


@dataclass(frozen=True)
class Atom(Proposition):
    index: int

    def evaluate(self, x, fix=None):
        return _column(np.asarray(x), self.index, fix)

    def variables(self):
        return frozenset((self.index,))

    def to_text(self, names):
        return names[self.index]


@dataclass(frozen=True)
class Not(Proposition):
    arg: Proposition

    def evaluate(self, x, fix=None):
        return ~self.arg.evaluate(x, fix)

    def variables(self):
        return self.arg.variables()

    def to_text(self, names):
        inner = self.arg.to_text(names)
        return "!" + inner if isinstance(self.arg, (Atom, Not)) else f"!({inner})"


@dataclass(frozen=True)
class And(Proposition):
    args: tuple

    def __post_init__(self):
        if not self.args:
            raise StructureError("empty conjunction")
        object.__setattr__(self, "args", tuple(self.args))

    def evaluate(self, x, fix=None):
        out = self.args[0].evaluate(x, fix)
        for a in self.args[1:]:
            out = out & a.evaluate(x, fix)
        return out

    def variables(self):
        return frozenset().union(*(a.variables() for a in self.args))

    def to_text(self, names):
        return " and ".join(_wrap(a, names, Or) for a in self.args)


@dataclass(frozen=True)
class Or(Proposition):
    args: tuple

    def __post_init__(self):
        if not self.args:
            raise StructureError("empty disjunction")
        object.__setattr__(self, "args", tuple(self.args))

    def evaluate(self, x, fix=None):
        out = self.args[0].evaluate(x, fix)
        for a in self.args[1:]:
            out = out | a.evaluate(x, fix)
        return out

    def variables(self):
        return frozenset().union(*(a.variables() for a in self.args))

    def to_text(self, names):
        return " or ".join(_wrap(a, names, And) for a in self.args)


def _wrap(p, names, paren_type):
    text = p.to_text(names)
    return f"({text})" if isinstance(p, paren_type) else text


def literal(index: int, positive: bool = True) -> Proposition:
    return Atom(index) if positive else Not(Atom(index))


def literals_of(p: Proposition) -> Optional[list]:
    """``[(index, value), ...]`` if ``p`` is a conjunction of literals, else None."""
    if isinstance(p, Atom):
        return [(p.index, 1)]
    if isinstance(p, Not) and isinstance(p.arg, Atom):
        return [(p.arg.index, 0)]
    if isinstance(p, And):
        out = []
        for a in p.args:
            sub = literals_of(a)
            if sub is None:
                return None
            out.extend(sub)
        return out
    return None


def check_proposition(p: Proposition, k: int) -> None:
    bad = [i for i in p.variables() if not 0 <= i < k]
    if bad:
        raise StructureError(f"proposition references undeclared variable index {bad[0]} (k={k})")


def eval_proposition(p: Proposition, x) -> bool:
    return bool(p.evaluate(np.asarray(x)))


_FORMULA_TOKEN = re.compile(r"\s*(?:(?P<op>[()!])|(?P<name>[A-Za-z_][A-Za-z0-9_.]*[+\-]*))")


def parse_proposition(text: str, names: Sequence[str]) -> Proposition:
    """Parse ``!``/``not``, ``and``, ``or`` and parentheses over variable names."""
    lookup = {n: i for i, n in enumerate(names)}
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _FORMULA_TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise StructureError(f"cannot parse formula at column {pos + 1}: {text!r}")
        tokens.append(m.group("op") or m.group("name"))
        pos = m.end()
    tokens.append(None)
    at = [0]

    def peek():
        return tokens[at[0]]

    def take():
        tok = tokens[at[0]]
        at[0] += 1
        return tok

    def disj():
        parts = [conj()]
        while peek() == "or":
            take()
            parts.append(conj())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def conj():
        parts = [unary()]
        while peek() == "and":
            take()
            parts.append(unary())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def unary():
        tok = take()
        if tok in ("!", "not"):
            return Not(unary())
        if tok == "(":
            inner = disj()
            if take() != ")":
                raise StructureError(f"unbalanced parentheses in {text!r}")
            return inner
        if tok is None or tok in (")", "and", "or"):
            raise StructureError(f"unexpected {tok!r} in {text!r}")
        if tok not in lookup:
            raise StructureError(f"unknown variable {tok!r}")
        return Atom(lookup[tok])

    out = disj()
    if peek() is not None:
        raise StructureError(f"trailing input {peek()!r} in {text!r}")
    return out


# ---------------------------------------------------------------------------
# Constraint terms
# ---------------------------------------------------------------------------

class ConstraintTerm:
    """One feature b_r of the log-linear model."""

    kind: str = ""

    @property
    def involved(self) -> frozenset:
        raise NotImplementedError

    def value(self, x, fix=None):
        raise NotImplementedError

    @property
    def target(self) -> Optional[float]:
        return None

    def delta(self, x, i: int):
        """b(x with bit i := 0) - b(x with bit i := 1), batched over rows."""
        x = np.asarray(x)
        if i not in self.involved:
            return np.zeros(x.shape[:-1])
        return self.value(x, (i, 0)) - self.value(x, (i, 1))

    def check(self, k: int) -> None:
        raise NotImplementedError


def _check_q(q):
    if not 0.0 <= q <= 1.0:
        raise StructureError(f"probability {q} outside [0, 1]")


@dataclass(frozen=True)
class Marginal(ConstraintTerm):
    """P(C) = q;  b(x) = [C](x), target q."""

    C: Proposition
    q: float
    kind = "marginal"
    _involved: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_q(self.q)
        object.__setattr__(self, "_involved", self.C.variables())

    @property
    def involved(self):
        return self._involved

    @property
    def target(self):
        return float(self.q)

    def value(self, x, fix=None):
        return self.C.evaluate(np.asarray(x), fix).astype(float)

    def delta(self, x, i):
        x = np.asarray(x)
        # single-literal fast path
        if isinstance(self.C, Atom) and self.C.index == i:
            return np.full(x.shape[:-1], -1.0)
        if isinstance(self.C, Not) and isinstance(self.C.arg, Atom) and self.C.arg.index == i:
            return np.full(x.shape[:-1], 1.0)
        return super().delta(x, i)

    def check(self, k):
        check_proposition(self.C, k)


@dataclass(frozen=True)
class Conditional(ConstraintTerm):
    """P(C | B) = q;  b(x) = (1-q)[C and B](x) - q[not C and B](x), target 0."""

    C: Proposition
    B: Proposition
    q: float
    kind = "conditional"
    _involved: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_q(self.q)
        object.__setattr__(self, "_involved", self.C.variables() | self.B.variables())

    @property
    def involved(self):
        return self._involved

    @property
    def target(self):
        return 0.0

    def value(self, x, fix=None):
        x = np.asarray(x)
        c = self.C.evaluate(x, fix)
        b = self.B.evaluate(x, fix)
        q = float(self.q)
        return np.where(b, np.where(c, 1.0 - q, -q), 0.0)

    def check(self, k):
        check_proposition(self.C, k)
        check_proposition(self.B, k)


@dataclass(frozen=True)
class Link(ConstraintTerm):
    """Bivariate link; b(x) = [x_i = 1 and x_j = 1], no target."""

    i: int
    j: int
    kind = "link"

    def __post_init__(self):
        if self.i == self.j:
            raise StructureError("a link needs two distinct variables")

    @property
    def involved(self):
        return frozenset((self.i, self.j))

    def value(self, x, fix=None):
        x = np.asarray(x)
        return (_column(x, self.i, fix) & _column(x, self.j, fix)).astype(float)

    def delta(self, x, i):
        x = np.asarray(x)
        if i == self.i:
            return -x[..., self.j].astype(float)
        if i == self.j:
            return -x[..., self.i].astype(float)
        return np.zeros(x.shape[:-1])

    def check(self, k):
        for v in (self.i, self.j):
            if not 0 <= v < k:
                raise StructureError(f"link references undeclared variable index {v} (k={k})")


def b_value(t: ConstraintTerm, x) -> float:
    return float(t.value(np.asarray(x)))


def target_value(t: ConstraintTerm) -> Optional[float]:
    return t.target


def delta_b(t: ConstraintTerm, x, i: int) -> float:
    return float(t.delta(np.asarray(x), i))


def two_point_delta(t: ConstraintTerm, x, i: int):
    """Reference path for :meth:`ConstraintTerm.delta`: explicit evaluation at both settings."""
    x0 = np.array(x, dtype=np.uint8, copy=True)
    x1 = x0.copy()
    x0[..., i] = 0
    x1[..., i] = 1
    return t.value(x0) - t.value(x1)


def feature_matrix(terms: Sequence[ConstraintTerm], x) -> np.ndarray:
    """``(n, d)`` matrix of b_r over a batch of worlds."""
    x = np.atleast_2d(np.asarray(x))
    if not terms:
        return np.zeros((x.shape[0], 0))
    return np.stack([t.value(x) for t in terms], axis=1)
