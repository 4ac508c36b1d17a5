"""Log-linear maximum-entropy model and its brute-force (enumeration) oracle."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .core import (
    AtomicVariable,
    Conditional,
    ConstraintTerm,
    Link,
    Marginal,
    Proposition,
    StructureError,
    all_worlds,
    feature_matrix,
    parse_proposition,
)

DEFAULT_ENUMERATION_LIMIT = 24
# above this many bits world features are streamed in chunks instead of cached
_CACHE_BITS = 16
# exponent sums are clipped here before exp(); see MaxEntModel.site_logit
EXP_CLIP = 30.0


class CapacityError(RuntimeError):
    """Exact enumeration requested beyond the configured number of bits."""


class DegenerateConditionError(ValueError):
    """Conditioning event has (numerically) zero probability."""


def enumeration_limit() -> int:
    return int(os.environ.get("PROBNET_ENUM_LIMIT", DEFAULT_ENUMERATION_LIMIT))


def _check_capacity(k: int, limit: Optional[int]) -> None:
    limit = enumeration_limit() if limit is None else limit
    if k > limit:
        raise CapacityError(
            f"exact enumeration of 2^{k} worlds exceeds the enumeration limit of {limit} bits "
            "(set PROBNET_ENUM_LIMIT to raise it)")


class MaxEntModel:
    """p(x) proportional to exp(sum_r lambda_r b_r(x)).

    The structure (variables and terms) is validated once at construction;
    ``with_lambda`` returns a new model sharing the precomputed site tables.
    """

    def __init__(self, variables: Sequence[AtomicVariable], terms: Sequence[ConstraintTerm],
                 lam=None):
        self.variables = tuple(variables)
        self.terms = tuple(terms)
        k = len(self.variables)
        for pos, v in enumerate(self.variables):
            if v.index != pos:
                raise StructureError(f"variable {v.name!r} has index {v.index}, expected {pos}")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise StructureError("variable names must be unique")
        for t in self.terms:
            t.check(k)
        self.lam = np.zeros(len(self.terms)) if lam is None else np.array(lam, dtype=float)
        if self.lam.shape != (len(self.terms),):
            raise StructureError(f"lambda has shape {self.lam.shape}, expected ({len(self.terms)},)")
        self.lam.setflags(write=False)
        # terms touching each site (the Markov blanket lives in their variables)
        self._site_terms = [tuple(r for r, t in enumerate(self.terms) if i in t.involved)
                            for i in range(k)]
        # shared by reference with every with_lambda() copy
        self._cache = {}

    @property
    def k(self) -> int:
        return len(self.variables)

    @property
    def d(self) -> int:
        return len(self.terms)

    @property
    def names(self) -> list:
        return [v.name for v in self.variables]

    def with_lambda(self, lam) -> "MaxEntModel":
        new = object.__new__(MaxEntModel)
        new.__dict__.update(self.__dict__)
        new.lam = np.array(lam, dtype=float)
        if new.lam.shape != self.lam.shape:
            raise StructureError("lambda length does not match the term list")
        new.lam.setflags(write=False)
        return new

    def site_terms(self, i: int) -> tuple:
        return self._site_terms[i]

    def markov_blanket(self, i: int) -> frozenset:
        out = frozenset()
        for r in self._site_terms[i]:
            out |= self.terms[r].involved
        return out - {i}

    def features(self, x) -> np.ndarray:
        return feature_matrix(self.terms, x)

    def world_features(self, limit: Optional[int] = None) -> np.ndarray:
        """Cached ``(2**k, d)`` feature matrix over every world."""
        _check_capacity(self.k, limit)
        if "world_features" not in self._cache:
            self._cache["world_features"] = self.features(all_worlds(self.k))
        return self._cache["world_features"]

    def log_score(self, x):
        f = self.features(x)
        out = f @ self.lam
        return float(out[0]) if np.ndim(x) == 1 else out

    def site_deltas(self, x, i: int) -> np.ndarray:
        """``(n, d)`` matrix of delta_b for every term at site ``i`` (zeros off the blanket)."""
        x = np.atleast_2d(np.asarray(x))
        out = np.zeros((x.shape[0], self.d))
        for r in self._site_terms[i]:
            out[:, r] = self.terms[r].delta(x, i)
        return out

    def site_logit(self, x, i: int, lam=None):
        """Exponent sum_r lambda_r * delta_b_r at site ``i``; returns (values, clipped_flag)."""
        lam = self.lam if lam is None else lam
        x = np.atleast_2d(np.asarray(x))
        s = np.zeros(x.shape[0])
        for r in self._site_terms[i]:
            if lam[r] != 0.0:
                s += lam[r] * self.terms[r].delta(x, i)
        clipped = bool(np.any(np.abs(s) > EXP_CLIP))
        return np.clip(s, -EXP_CLIP, EXP_CLIP), clipped

    def conditional_prob_batch(self, x, i: int) -> np.ndarray:
        s, _ = self.site_logit(x, i)
        return expit(-s)

    def __repr__(self):
        return f"MaxEntModel(k={self.k}, d={self.d})"


def log_score(m: MaxEntModel, x) -> float:
    return m.log_score(np.asarray(x))


def conditional_prob(m: MaxEntModel, x, i: int) -> float:
    """p(x_i = 1 | all other bits) = 1 / (1 + exp(sum_r lambda_r delta_b_r))."""
    if not 0 <= i < m.k:
        raise IndexError(i)
    return float(m.conditional_prob_batch(np.asarray(x)[None, :], i)[0])


@dataclass
class ExactTable:
    """Probabilities of all 2**k worlds in :func:`probnet.core.all_worlds` order."""

    k: int
    probabilities: np.ndarray
    log_partition: float
    entropy: float
    scores: np.ndarray = field(repr=False)

    def worlds(self) -> np.ndarray:
        return all_worlds(self.k)

    def prob(self, x) -> float:
        from .core import world_index
        return float(self.probabilities[world_index(x)])

    def event(self, p: Proposition) -> float:
        return float(self.probabilities[p.evaluate(self.worlds())].sum())

    def to_csv(self, names: Sequence[str]) -> str:
        lines = [",".join(list(names) + ["probability"])]
        for x, p in zip(self.worlds(), self.probabilities):
            lines.append(",".join(str(int(b)) for b in x) + f",{float(p)!r}")
        return "\n".join(lines) + "\n"


def _world_chunks(m: MaxEntModel, limit: Optional[int]):
    """Yield ``(slice, features)`` over all worlds; a single cached chunk for small k."""
    _check_capacity(m.k, limit)
    if m.k <= _CACHE_BITS:
        yield slice(0, 2 ** m.k), m.world_features(limit)
        return
    size = 2 ** _CACHE_BITS
    shifts = np.arange(m.k - 1, -1, -1, dtype=np.int64)
    for start in range(0, 2 ** m.k, size):
        w = np.arange(start, start + size, dtype=np.int64)
        x = ((w[:, None] >> shifts) & 1).astype(np.uint8)
        yield slice(start, start + size), m.features(x)


def _world_scores(m: MaxEntModel, limit: Optional[int]) -> np.ndarray:
    scores = np.zeros(2 ** m.k)
    for sl, f in _world_chunks(m, limit):
        if m.d:
            scores[sl] = f @ m.lam
    return scores


def exact_distribution(m: MaxEntModel, limit: Optional[int] = None) -> ExactTable:
    scores = _world_scores(m, limit)
    log_z = float(logsumexp(scores))
    p = np.exp(scores - log_z)
    # log Z - E[score] avoids summing p log p over tiny p
    entropy = log_z - float(p @ scores)
    return ExactTable(m.k, p, log_z, entropy, scores)


def exact_expectations(m: MaxEntModel, limit: Optional[int] = None) -> np.ndarray:
    """E_lambda(b_r) for every term, as a length-d vector."""
    table = exact_distribution(m, limit)
    out = np.zeros(m.d)
    for sl, f in _world_chunks(m, limit):
        out += table.probabilities[sl] @ f
    return out


def exact_expectation(m: MaxEntModel, t: ConstraintTerm, limit: Optional[int] = None) -> float:
    table = exact_distribution(m, limit)
    return float(table.probabilities @ t.value(table.worlds()))


def query_probability(m: MaxEntModel, c: Proposition, given: Optional[Proposition] = None,
                      limit: Optional[int] = None) -> float:
    table = exact_distribution(m, limit)
    worlds = table.worlds()
    hit = c.evaluate(worlds)
    if given is None:
        return float(table.probabilities[hit].sum())
    cond = given.evaluate(worlds)
    p_given = float(table.probabilities[cond].sum())
    if p_given <= 1e-300:
        raise DegenerateConditionError("conditioning event has probability zero")
    return float(table.probabilities[hit & cond].sum()) / p_given


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# ---------------------------------------------------------------------------
# Hardwired fitting
# ---------------------------------------------------------------------------

@dataclass
class ResidualReport:
    residuals: np.ndarray
    iterations: int
    converged: bool

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if self.residuals.size else 0.0

    @property
    def consistent(self) -> bool:
        # non-convergence is read as an inconsistent constraint set
        return self.converged


def fit_maxent_exact(variables: Sequence[AtomicVariable], terms: Sequence[ConstraintTerm],
                     step: float = 0.5, tol: float = 1e-8, max_iter: int = 50_000,
                     offset: Optional[MaxEntModel] = None, lam0=None,
                     limit: Optional[int] = None):
    """Fit lambda so that sum_x b_r(x) p(x) = c_r for every term.

    Plain ascent on the dual, ``lambda += step * (c - E_lambda b)``.  ``offset``
    is an optional model over the same variables whose (fixed) log-score is
    added to every world, so rule terms can be enforced exactly on top of
    learned links.  Returns ``(model, ResidualReport)``; when the tolerance is
    not reached the report carries ``converged=False`` and the model holds the
    best lambda seen.
    """
    terms = tuple(terms)
    for t in terms:
        if t.target is None:
            raise ValueError(f"{type(t).__name__} term has no target and cannot be hardwired")
    model = MaxEntModel(variables, terms, lam0)
    _check_capacity(model.k, limit)
    targets = np.array([t.target for t in terms])
    F = model.world_features(limit)
    base = np.zeros(F.shape[0]) if offset is None else offset.world_features(limit) @ offset.lam
    lam = model.lam.copy()
    best_lam, best_res = lam.copy(), np.inf
    residuals = np.zeros(len(terms))
    it = 0
    for it in range(1, max_iter + 1):
        s = base + F @ lam
        p = np.exp(s - logsumexp(s))
        gap = targets - p @ F
        residuals = np.abs(gap)
        worst = residuals.max() if residuals.size else 0.0
        if worst < best_res:
            best_res, best_lam = worst, lam.copy()
        if worst < tol:
            break
        lam = lam + step * gap
    else:
        return model.with_lambda(best_lam), ResidualReport(_residuals(F, base, best_lam, targets),
                                                           max_iter, False)
    return model.with_lambda(lam), ResidualReport(residuals, it, True)


def _residuals(F, base, lam, targets):
    s = base + F @ lam
    p = np.exp(s - logsumexp(s))
    return np.abs(p @ F - targets)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def term_to_dict(t: ConstraintTerm, names) -> dict:
    if isinstance(t, Marginal):
        return {"kind": "marginal", "C": t.C.to_text(names), "q": t.q}
    if isinstance(t, Conditional):
        return {"kind": "conditional", "C": t.C.to_text(names), "B": t.B.to_text(names), "q": t.q}
    if isinstance(t, Link):
        return {"kind": "link", "i": names[t.i], "j": names[t.j]}
    raise TypeError(type(t))


def term_from_dict(d: dict, names) -> ConstraintTerm:
    kind = d["kind"]
    if kind == "marginal":
        return Marginal(parse_proposition(d["C"], names), float(d["q"]))
    if kind == "conditional":
        return Conditional(parse_proposition(d["C"], names), parse_proposition(d["B"], names),
                           float(d["q"]))
    if kind == "link":
        lookup = {n: i for i, n in enumerate(names)}
        return Link(lookup[d["i"]], lookup[d["j"]])
    raise ValueError(f"unknown term kind {kind!r}")


def model_to_dict(m: MaxEntModel) -> dict:
    names = m.names
    return {
        "variables": [{"name": v.name, "hidden": v.hidden} for v in m.variables],
        "terms": [term_to_dict(t, names) for t in m.terms],
        "lambda": [float(v) for v in m.lam],
    }


def model_from_dict(d: dict) -> MaxEntModel:
    variables = [AtomicVariable(i, v["name"], bool(v.get("hidden", False)))
                 for i, v in enumerate(d["variables"])]
    names = [v.name for v in variables]
    terms = [term_from_dict(t, names) for t in d["terms"]]
    return MaxEntModel(variables, terms, d.get("lambda"))
