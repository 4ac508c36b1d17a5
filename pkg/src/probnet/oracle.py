"""Independent reference computations for small models.

None of these share code paths with what they check: the max-ent oracle
works directly on the probability simplex instead of the exponential
family, exact EM enumerates instead of sampling, and the gradient checker
only ever calls objective values.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .core import all_worlds
from .evidence import estimate_truncated_extension, pool
from .model import MaxEntModel, exact_distribution
from .sem import (
    FULL_EXACT,
    PSEUDO,
    FitConfig,
    full_loglik,
    m_step_fulllikelihood,
    m_step_pseudolikelihood,
)


def finite_difference_gradient(f: Callable, lam, h: float = 1e-5) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    g = np.zeros_like(lam)
    for r in range(lam.size):
        e = np.zeros_like(lam)
        e[r] = h
        g[r] = (f(lam + e) - f(lam - e)) / (2 * h)
    return g


def relative_error(a, b, floor: float = 1e-8) -> float:
    """max|a - b| / max(max|b|, floor)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), floor))


# ---------------------------------------------------------------------------
# Maximum entropy on the simplex
# ---------------------------------------------------------------------------

def constraint_system(terms, k: int):
    """Equality system A p = c over all worlds, including sum p = 1."""
    worlds = all_worlds(k)
    rows = [np.ones(len(worlds))] + [t.value(worlds) for t in terms]
    rhs = [1.0] + [t.target for t in terms]
    return np.array(rows), np.array(rhs)


def feasible_vertices(A, c, count: int, rng: np.random.Generator) -> list:
    """Vertices of {p >= 0, A p = c} found by LPs with random objectives."""
    out = []
    for _ in range(count):
        res = linprog(rng.normal(size=A.shape[1]), A_eq=A, b_eq=c, bounds=(0, None),
                      method="highs")
        if res.status != 0:
            raise ValueError("constraint set is infeasible")
        out.append(np.clip(res.x, 0.0, None))
    return out


def interior_point(A, c) -> np.ndarray:
    """Feasible p maximising min_x p(x) (strictly positive when one exists)."""
    n = A.shape[1]
    # variables (p, t); maximise t subject to p >= t
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    A_eq = np.hstack([A, np.zeros((A.shape[0], 1))])
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=c,
                  bounds=[(0, None)] * n + [(0, 1)], method="highs")
    if res.status != 0 or res.x[-1] <= 0:
        raise ValueError("constraint set has no strictly positive solution")
    return res.x[:n]


def maxent_on_simplex(terms, k: int, iters: int = 200, tol: float = 1e-14) -> np.ndarray:
    """Maximise -sum p log p over the simplex subject to the term targets.

    Projected Newton: each step solves the equality-constrained quadratic
    model (KKT system) and backtracks to keep p > 0 and raise the entropy.
    """
    A, c = constraint_system(terms, k)
    p = interior_point(A, c)
    m = A.shape[0]

    def ent(q):
        return -float(np.sum(q * np.log(q)))

    for _ in range(iters):
        g = -(np.log(p) + 1.0)
        H = 1.0 / p
        K = np.block([[np.diag(H), A.T], [A, np.zeros((m, m))]])
        rhs = np.concatenate([g, c - A @ p])
        step = np.linalg.lstsq(K, rhs, rcond=None)[0][:p.size]
        decrement = float(step @ (H * step))
        if decrement < tol:
            break
        a = 1.0
        neg = step < 0
        if neg.any():
            a = min(1.0, 0.99 * float(np.min(-p[neg] / step[neg])))
        base = ent(p)
        while a > 1e-12 and ent(p + a * step) < base + 0.25 * a * float(g @ step):
            a *= 0.5
        p = p + a * step
    return p / p.sum()


def random_feasible_mixtures(terms, k: int, count: int, rng: np.random.Generator,
                             anchor: Optional[np.ndarray] = None) -> list:
    """Random convex combinations of feasible vertices (and ``anchor`` if given)."""
    A, c = constraint_system(terms, k)
    verts = feasible_vertices(A, c, max(4, count // 10), rng)
    if anchor is not None:
        verts.append(np.asarray(anchor))
    V = np.array(verts)
    return [rng.dirichlet(np.ones(len(V))) @ V for _ in range(count)]


# ---------------------------------------------------------------------------
# Exact EM
# ---------------------------------------------------------------------------

@dataclass
class ExactEMResult:
    model: MaxEntModel
    world_weights: np.ndarray
    loglik_per_record: float
    extension_counts: list
    iterations: int
    converged: bool


def exact_em(model: MaxEntModel, blocks: Sequence, cfg: FitConfig, init_lambda,
             max_iterations: Optional[int] = None, stop_when_stationary: bool = True
             ) -> ExactEMResult:
    """EM with the posterior over missing bits computed by enumeration.

    Each iteration turns the pooled evidence into a weighted sample over all
    2**k worlds (row weight times exact posterior), re-estimates truncated
    extensions from that weighted sample, and applies the configured M-step
    with the configured step schedule and stopping rule, so the only
    difference from :func:`probnet.sem.run_sem` is the exact E-step.
    Replication multiplies every weight, mirroring the add-one smoothing of
    the stochastic version.  With ``stop_when_stationary=False`` exactly
    ``max_iterations`` iterations are run, which is how a stochastic fit of
    that length is compared against its deterministic counterpart.
    """
    k = model.k
    worlds = all_worlds(k)
    s = pool(blocks, cfg.replication_factor)
    m = model.with_lambda(init_lambda)
    # a Monte-Carlo M-step is replaced by its exact counterpart
    mcfg = FitConfig(**{**cfg.__dict__, "m_step": PSEUDO if cfg.m_step == PSEUDO else FULL_EXACT})
    max_iterations = cfg.max_iterations if max_iterations is None else max_iterations
    blocks = list(s.blocks)
    ww = None
    deltas = []
    t, converged = 0, False
    for t in range(max_iterations):
        p = exact_distribution(m).probabilities
        if ww is not None:
            blocks = [estimate_truncated_extension(b, worlds, ww) if b.truncation is not None else b
                      for b in blocks]
        ww = np.zeros(len(worlds))
        for b in blocks:
            for r in b.records:
                obs = r.as_array()
                known = obs >= 0
                ok = np.all(worlds[:, known] == obs[known], axis=1)
                post = np.where(ok, p, 0.0)
                ww += r.multiplicity * cfg.replication_factor * post / post.sum()
            if b.extension_count:
                ok = ~b.truncation.evaluate(worlds)
                post = np.where(ok, p, 0.0)
                ww += b.extension_count * cfg.replication_factor * post / post.sum()
        if mcfg.m_step == PSEUDO:
            lam, _ = m_step_pseudolikelihood(worlds, m, mcfg, t, weights=ww)
        else:
            lam, _ = m_step_fulllikelihood(worlds, m, mcfg, t, weights=ww)
        deltas.append(float(np.max(np.abs(lam - m.lam))) if m.d else 0.0)
        m = m.with_lambda(lam)
        W = cfg.stationarity_window
        if len(deltas) >= W and np.mean(deltas[-W:]) < cfg.stationarity_tol:
            converged = True
            if stop_when_stationary:
                break
    ll = full_loglik(m, worlds, weights=ww) / float(ww.sum())
    return ExactEMResult(m, ww, ll, [b.extension_count for b in blocks if b.truncation is not None],
                         t + 1, converged)
