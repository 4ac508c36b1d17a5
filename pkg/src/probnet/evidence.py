"""Evidence as samples with missing values, truncated samples and pooling."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import Conditional, ConstraintTerm, Marginal, Proposition, literals_of

MARGINAL_RULE = "marginal-rule"
CONDITIONAL_RULE = "conditional-rule"
ASSOCIATIVE = "associative"


class EvidenceError(ValueError):
    pass


class UnsupportedShapeError(EvidenceError):
    """The rule cannot be written down as records with definite bit values."""


@dataclass(frozen=True)
class EvidenceRecord:
    values: tuple  # entries 0, 1 or None (missing)
    multiplicity: int = 1

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(None if v is None else int(v) for v in self.values))
        if self.multiplicity < 1:
            raise EvidenceError("record multiplicity must be >= 1")
        if any(v not in (None, 0, 1) for v in self.values):
            raise EvidenceError(f"record values must be 0, 1 or missing: {self.values}")

    def as_array(self) -> np.ndarray:
        return np.array([-1 if v is None else v for v in self.values], dtype=np.int8)


@dataclass(frozen=True)
class SampleBlock:
    id: str
    kind: str
    n: int
    records: tuple
    q_observed: Optional[float] = None
    truncation: Optional[Proposition] = None
    extension_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        total = sum(r.multiplicity for r in self.records)
        if total != self.n:
            raise EvidenceError(f"block {self.id}: multiplicities sum to {total}, n={self.n}")
        if (self.truncation is not None) != (self.kind == CONDITIONAL_RULE):
            raise EvidenceError(f"block {self.id}: truncation is required exactly for conditional rules")
        if self.extension_count < 0:
            raise EvidenceError("extension_count must be non-negative")

    @property
    def k(self) -> int:
        return len(self.records[0].values) if self.records else 0

    def observed_fraction(self, c: Proposition) -> float:
        """Share of records (by multiplicity) on which ``c`` is known to hold."""
        hit = 0
        for r in self.records:
            x = np.array([0 if v is None else v for v in r.values], dtype=np.uint8)
            hit += r.multiplicity * bool(c.evaluate(x))
        return hit / self.n


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _pinned(p: Proposition, what: str) -> list:
    lits = literals_of(p)
    if lits is None:
        raise UnsupportedShapeError(f"{what} must be a conjunction of literals")
    return lits


def materialize_rule_sample(rule: ConstraintTerm, q_observed: float, n: int, k: int,
                            block_id: str = "S") -> SampleBlock:
    """Imaginary sample of size ``n`` whose observed frequency of C is ``q_observed``.

    Records pin the literals of C (and of B for a conditional rule); every
    other bit is missing.  The C-negated records need C to be a single
    literal.
    """
    if n < 1:
        raise EvidenceError("sample size n must be >= 1")
    if not 0.0 <= q_observed <= 1.0:
        raise EvidenceError(f"observed probability {q_observed} outside [0, 1]")
    if isinstance(rule, Marginal):
        kind, cond = MARGINAL_RULE, None
    elif isinstance(rule, Conditional):
        kind, cond = CONDITIONAL_RULE, rule.B
    else:
        raise EvidenceError("only marginal and conditional rules produce rule samples")
    hits = _round_half_up(q_observed * n)
    if abs(q_observed - hits / n) > 1.0 / (2 * n) + 1e-12:
        raise EvidenceError(f"q={q_observed} cannot be represented with n={n}; use a larger n")
    c_lits = _pinned(rule.C, "the rule consequent")
    b_lits = _pinned(cond, "the rule condition") if cond is not None else []
    if hits < n and len(c_lits) != 1:
        raise UnsupportedShapeError("negating a consequent needs a single literal")

    def record(lits, mult):
        vals = [None] * k
        for i, v in b_lits + lits:
            if vals[i] is not None and vals[i] != v:
                raise UnsupportedShapeError("rule consequent contradicts its condition")
            vals[i] = v
        return EvidenceRecord(tuple(vals), mult)

    records = []
    if hits:
        records.append(record(c_lits, hits))
    if n - hits:
        (i, v), = c_lits
        records.append(record([(i, 1 - v)], n - hits))
    return SampleBlock(block_id, kind, n, tuple(records), q_observed=q_observed, truncation=cond)


def materialize_data_sample(visible_vars: Sequence[int], counts, k: int,
                            block_id: str = "S") -> SampleBlock:
    """Associative data over ``visible_vars``; ``counts`` maps bit tuples to counts.

    ``counts`` may also be an iterable of ``(tuple, count)`` pairs, in which
    case repeated tuples are merged (with a warning).
    """
    visible_vars = list(visible_vars)
    pairs = list(counts.items()) if isinstance(counts, Mapping) else list(counts)
    merged: dict = {}
    for bits, c in pairs:
        bits = tuple(int(b) for b in bits)
        if len(bits) != len(visible_vars):
            raise EvidenceError(f"tuple {bits} does not match {len(visible_vars)} visible variables")
        if c < 1:
            raise EvidenceError(f"count for {bits} must be >= 1")
        if bits in merged:
            warnings.warn(f"block {block_id}: duplicate tuple {bits} merged", stacklevel=2)
        merged[bits] = merged.get(bits, 0) + int(c)
    records = []
    for bits, c in merged.items():
        vals = [None] * k
        for i, b in zip(visible_vars, bits):
            vals[i] = b
        records.append(EvidenceRecord(tuple(vals), c))
    return SampleBlock(block_id, ASSOCIATIVE, sum(merged.values()), tuple(records))


def estimate_truncated_extension(block: SampleBlock, current_completions: np.ndarray,
                                 weights: Optional[np.ndarray] = None) -> SampleBlock:
    """Re-estimate the unseen (not-B) part of a truncated sample.

    p(B) is the add-one smoothed fraction of completed records satisfying B;
    since n / N estimates p(B), the missing count is n (1 - p) / p.
    """
    if block.truncation is None:
        raise EvidenceError(f"block {block.id} is not truncated")
    X = np.atleast_2d(np.asarray(current_completions))
    if X.shape[0] == 0:
        raise EvidenceError("no completions to estimate from")
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    in_b = block.truncation.evaluate(X)
    p_b = (1.0 + float(w[in_b].sum())) / (2.0 + float(w.sum()))
    return replace(block, extension_count=_round_half_up(block.n * (1.0 - p_b) / p_b))


@dataclass
class PooledSample:
    """Concatenation of blocks, expanded to one row per record copy.

    Rows are laid out block by block: each record repeated ``multiplicity *
    replication`` times, followed by ``extension_count * replication``
    all-missing extension rows for a truncated block.  ``completions`` holds
    the current fully observed version of every row once an E-step has run.
    """

    blocks: tuple
    replication: int = 1
    completions: Optional[np.ndarray] = None
    _layout: Optional[tuple] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.blocks = tuple(self.blocks)
        if not self.blocks:
            raise EvidenceError("cannot pool an empty list of blocks")
        ks = {b.k for b in self.blocks if b.records}
        if len(ks) > 1:
            raise EvidenceError(f"blocks disagree on the number of variables: {sorted(ks)}")
        if self.replication < 1:
            raise EvidenceError("replication must be >= 1")

    @property
    def k(self) -> int:
        return next(b.k for b in self.blocks if b.records)

    @property
    def size(self) -> int:
        return sum(b.n + b.extension_count for b in self.blocks)

    def layout(self):
        """``(observed, block_index, is_extension)`` arrays over rows."""
        if self._layout is None:
            k = self.k
            obs, owner, ext = [], [], []
            for bi, b in enumerate(self.blocks):
                for r in b.records:
                    m = r.multiplicity * self.replication
                    obs.append(np.tile(r.as_array(), (m, 1)))
                    owner += [bi] * m
                    ext += [False] * m
                m = b.extension_count * self.replication
                if m:
                    obs.append(np.full((m, k), -1, dtype=np.int8))
                    owner += [bi] * m
                    ext += [True] * m
            self._layout = (np.concatenate(obs) if obs else np.zeros((0, k), np.int8),
                            np.array(owner, dtype=np.int64), np.array(ext, dtype=bool))
        return self._layout

    def with_blocks(self, blocks, completions=None) -> "PooledSample":
        return PooledSample(tuple(blocks), self.replication, completions)

    def check_completions(self) -> None:
        """Raise if a completion disagrees with an observed bit or breaks a truncation."""
        if self.completions is None:
            return
        obs, owner, ext = self.layout()
        known = obs >= 0
        if np.any(self.completions[known] != obs[known]):
            raise AssertionError("completion altered an observed bit")
        for bi, b in enumerate(self.blocks):
            rows = ext & (owner == bi)
            if rows.any() and np.any(b.truncation.evaluate(self.completions[rows])):
                raise AssertionError(f"extension row of block {b.id} satisfies its truncation")


def pool(blocks: Sequence[SampleBlock], replication: int = 1) -> PooledSample:
    return PooledSample(tuple(blocks), replication)


def check_hidden(blocks: Iterable[SampleBlock], hidden: Iterable[int]) -> None:
    hidden = list(hidden)
    for b in blocks:
        for r in b.records:
            if any(r.values[i] is not None for i in hidden):
                raise EvidenceError(f"block {b.id} observes a hidden variable")


# ---------------------------------------------------------------------------
# CSV (block id, multiplicity, one 0/1/? column per variable)
# ---------------------------------------------------------------------------

def blocks_to_csv(blocks: Sequence[SampleBlock], names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["block", "multiplicity"] + list(names))
    for b in blocks:
        for r in b.records:
            w.writerow([b.id, r.multiplicity] + ["?" if v is None else v for v in r.values])
    return buf.getvalue()


def records_from_csv(text: str) -> tuple:
    """Parse :func:`blocks_to_csv` output into ``(names, {block_id: [EvidenceRecord]})``."""
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    if header[:2] != ["block", "multiplicity"]:
        raise EvidenceError("expected columns 'block,multiplicity,...'")
    out: dict = {}
    for row in body:
        if not row:
            continue
        vals = tuple(None if v == "?" else int(v) for v in row[2:])
        out.setdefault(row[0], []).append(EvidenceRecord(vals, int(row[1])))
    return header[2:], out
