"""Stochastic EM: clamped Gibbs imputation followed by gradient M-steps.

Two M-step objectives are available on a completed sample X (rows x_j with
weights w_j):

* pseudo-likelihood, sum_j sum_i log p(x_ji | rest of x_j), which needs no
  partition function;
* full likelihood, sum_j lambda.b(x_j) - log Z, with E_lambda(b) from exact
  enumeration or from persistent Gibbs particles.

Gradients are divided by the total weight, so one step size serves any
sample size or replication factor.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, log_expit

from .core import Conditional, Link, Marginal, literals_of
from .evidence import PooledSample, SampleBlock, estimate_truncated_extension, pool
from .gibbs import impute_batch, map_shards, rng_stream, sweep_batch
from .model import (
    EXP_CLIP,
    MaxEntModel,
    enumeration_limit,
    exact_distribution,
    exact_expectations,
    fit_maxent_exact,
    model_to_dict,
)

PSEUDO = "pseudo-likelihood"
FULL_EXACT = "full-likelihood-exact"
FULL_MC = "full-likelihood-mc"
M_STEPS = (PSEUDO, FULL_EXACT, FULL_MC)
ESTEP_SHARD = 256


@dataclass
class FitConfig:
    seed: int = 0
    m_step: str = PSEUDO
    step_size: float = 0.05
    step_decay: float = 200.0
    e_step_sweeps: int = 2
    initial_sweeps: int = 100
    gradient_steps_per_m: int = 10
    replication_factor: int = 10
    max_iterations: int = 5000
    stationarity_window: int = 20
    stationarity_tol: float = 1e-3
    mc_expectation_samples: int = 1000
    mc_sweeps: int = 2
    hardwire_rules: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.m_step not in M_STEPS:
            raise ValueError(f"m_step must be one of {M_STEPS}, got {self.m_step!r}")
        for name in ("step_size", "step_decay"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("replication_factor", "stationarity_window", "max_iterations",
                     "mc_expectation_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("e_step_sweeps", "initial_sweeps", "gradient_steps_per_m", "mc_sweeps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def step(self, t: int) -> float:
        return self.step_size / (1.0 + t / self.step_decay)


@dataclass
class FitReport:
    lambda_trajectory: list
    completed_loglik_trace: list
    row_count_trace: list
    max_delta_trace: list
    extension_trace: list
    converged: bool
    iterations_used: int
    final_model: MaxEntModel
    seed: int
    config: FitConfig
    clipped: bool = False
    final_sample: Optional[PooledSample] = field(default=None, repr=False)

    def per_record_loglik(self) -> np.ndarray:
        return np.asarray(self.completed_loglik_trace) / np.asarray(self.row_count_trace)

    def stationary_loglik(self, window: Optional[int] = None) -> float:
        """Mean per-record completed-data log-likelihood over the last ``window`` iterations."""
        window = window or self.config.stationarity_window
        return float(np.mean(self.per_record_loglik()[-window:]))

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations_used": self.iterations_used,
            "seed": self.seed,
            "clipped": self.clipped,
            # worker count never changes results, so it stays out of the report
            "config": {k: v for k, v in asdict(self.config).items() if k != "workers"},
            "final_model": model_to_dict(self.final_model),
            "lambda_trajectory": [[float(v) for v in lam] for lam in self.lambda_trajectory],
            "completed_loglik_trace": [float(v) for v in self.completed_loglik_trace],
            "row_count_trace": [int(v) for v in self.row_count_trace],
            "max_delta_trace": [float(v) for v in self.max_delta_trace],
            "extension_trace": [list(map(int, e)) for e in self.extension_trace],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def lambda_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration"] + [f"lambda_{r}" for r in range(self.final_model.d)])
        for t, lam in enumerate(self.lambda_trajectory):
            w.writerow([t] + [repr(float(v)) for v in lam])
        return buf.getvalue()

    def loglik_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "completed_loglik", "rows", "max_delta"])
        for t, (ll, n, dl) in enumerate(zip(self.completed_loglik_trace, self.row_count_trace,
                                            self.max_delta_trace)):
            w.writerow([t, repr(float(ll)), n, repr(float(dl))])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------

def _escape_truncation(X: np.ndarray, truncation) -> np.ndarray:
    """Move rows that satisfy the truncation condition just outside it."""
    lits = literals_of(truncation)
    if lits is None:
        raise ValueError("truncation conditions must be conjunctions of literals")
    X = X.copy()
    inside = truncation.evaluate(X)
    i, v = lits[0]
    X[inside, i] = 1 - v
    return X


def e_step(m: MaxEntModel, s: PooledSample, cfg: FitConfig, iteration: int) -> PooledSample:
    """Re-estimate truncated extensions, then impute every missing bit.

    Rows that were completed before are warm-started from their previous
    completion.  Extension rows are regenerated each time, warm-started from
    completed rows lying outside the truncation condition.
    """
    prev = s.completions
    blocks = list(s.blocks)
    if prev is not None:
        blocks = [estimate_truncated_extension(b, prev) if b.truncation is not None else b
                  for b in blocks]
    new = s.with_blocks(blocks)
    obs, owner, ext = new.layout()
    n, k = obs.shape
    rng = rng_stream(cfg.seed, "extension", iteration)
    warm = rng.integers(0, 2, size=(n, k), dtype=np.uint8)
    if prev is not None:
        _, _, prev_ext = s.layout()
        warm[~ext] = prev[~prev_ext]
    forbid = []
    for bi, b in enumerate(blocks):
        rows = ext & (owner == bi)
        if not rows.any():
            continue
        if prev is not None:
            pool_rows = np.flatnonzero(~b.truncation.evaluate(prev))
            if pool_rows.size:
                warm[rows] = prev[rng.choice(pool_rows, size=int(rows.sum()))]
        warm[rows] = _escape_truncation(warm[rows], b.truncation)
        forbid.append((rows, b.truncation))
    sweeps = cfg.e_step_sweeps if prev is not None else max(cfg.e_step_sweeps, cfg.initial_sweeps)

    def job(shard):
        sl = slice(shard * ESTEP_SHARD, min(n, (shard + 1) * ESTEP_SHARD))
        local = [(rows[sl], prop) for rows, prop in forbid if rows[sl].any()]
        r = rng_stream(cfg.seed, "estep", iteration, shard)
        return impute_batch(m, obs[sl], warm[sl], sweeps, r, local)

    parts = map_shards(job, list(range(-(-n // ESTEP_SHARD))), cfg.workers)
    new.completions = np.concatenate(parts) if parts else np.zeros((0, k), np.uint8)
    return new


# ---------------------------------------------------------------------------
# M-step objectives and gradients
# ---------------------------------------------------------------------------

def _weights(X, weights):
    return np.ones(len(X)) if weights is None else np.asarray(weights, dtype=float)


def site_deltas(m: MaxEntModel, X) -> list:
    """Per-site ``(n, d)`` delta_b matrices; fixed for a given completed sample."""
    return [m.site_deltas(X, i) for i in range(m.k)]


def pseudo_loglik(m: MaxEntModel, X, lam=None, weights=None, deltas=None) -> float:
    """sum_j w_j sum_i [x_ji log p_i + (1 - x_ji) log(1 - p_i)], p_i = p(x_i = 1 | rest)."""
    X = np.atleast_2d(X)
    lam = m.lam if lam is None else np.asarray(lam, dtype=float)
    w = _weights(X, weights)
    deltas = site_deltas(m, X) if deltas is None else deltas
    total = 0.0
    for i, D in enumerate(deltas):
        s = D @ lam
        x = X[:, i].astype(float)
        # log p1 = log expit(-s), log(1 - p1) = log expit(s)
        total += float(w @ (x * log_expit(-s) + (1.0 - x) * log_expit(s)))
    return total


def pseudo_gradient(m: MaxEntModel, X, lam=None, weights=None, deltas=None):
    """Gradient of :func:`pseudo_loglik`; returns ``(grad, clipped)``.

    Per record and site, with R = exp(sum_s lambda_s delta_s) and
    p1 = 1 / (1 + R):

        dL/dlambda_r = [x / p1 - (1 - x) / (1 - p1)] * dp1/dlambda_r,
        dp1/dlambda_r = -R delta_r / (1 + R)^2,

    whose product reduces to -(x - p1) delta_r.
    """
    X = np.atleast_2d(X)
    lam = m.lam if lam is None else np.asarray(lam, dtype=float)
    w = _weights(X, weights)
    deltas = site_deltas(m, X) if deltas is None else deltas
    grad = np.zeros(m.d)
    clipped = False
    for i, D in enumerate(deltas):
        s = D @ lam
        if np.any(np.abs(s) > EXP_CLIP):
            clipped = True
            s = np.clip(s, -EXP_CLIP, EXP_CLIP)
        p1 = expit(-s)
        grad -= ((X[:, i] - p1) * w) @ D
    return grad, clipped


def full_loglik(m: MaxEntModel, X, lam=None, weights=None, features=None) -> float:
    """sum_j w_j (lambda . b(x_j) - log Z) with exact log Z."""
    X = np.atleast_2d(X)
    lam = m.lam if lam is None else np.asarray(lam, dtype=float)
    w = _weights(X, weights)
    F = m.features(X) if features is None else features
    log_z = exact_distribution(m.with_lambda(lam)).log_partition
    return float(w @ (F @ lam)) - float(w.sum()) * log_z


def full_gradient(m: MaxEntModel, X, lam=None, weights=None, features=None, expectations=None):
    """sum_j w_j [b(x_j) - E_lambda b]; exact expectations unless given."""
    X = np.atleast_2d(X)
    lam = m.lam if lam is None else np.asarray(lam, dtype=float)
    w = _weights(X, weights)
    F = m.features(X) if features is None else features
    if expectations is None:
        expectations = exact_expectations(m.with_lambda(lam))
    return w @ F - float(w.sum()) * expectations


def m_step_pseudolikelihood(X, m: MaxEntModel, cfg: FitConfig, iteration: int = 0,
                            weights=None, frozen=None):
    """``gradient_steps_per_m`` ascent steps on the pseudo-likelihood; returns (lambda, clipped)."""
    X = np.atleast_2d(X)
    w = _weights(X, weights)
    deltas = site_deltas(m, X)
    lam = m.lam.copy()
    clipped = False
    eta = cfg.step(iteration)
    for _ in range(cfg.gradient_steps_per_m):
        g, c = pseudo_gradient(m, X, lam, w, deltas)
        clipped |= c
        if frozen is not None:
            g[frozen] = 0.0
        lam += eta * g / w.sum()
    return lam, clipped


@dataclass
class MCState:
    """Persistent Gibbs particles used to estimate E_lambda(b)."""

    particles: np.ndarray
    steps: int = 0


def m_step_fulllikelihood(X, m: MaxEntModel, cfg: FitConfig, iteration: int = 0,
                          weights=None, frozen=None, mc_state: Optional[MCState] = None):
    """Full-likelihood ascent steps; returns (lambda, clipped)."""
    X = np.atleast_2d(X)
    w = _weights(X, weights)
    F = m.features(X)
    lam = m.lam.copy()
    eta = cfg.step(iteration)
    for _ in range(cfg.gradient_steps_per_m):
        cur = m.with_lambda(lam)
        if cfg.m_step == FULL_MC:
            expectations = _mc_expectations(cur, cfg, mc_state)
        else:
            expectations = exact_expectations(cur)
        g = full_gradient(m, X, lam, w, F, expectations)
        if frozen is not None:
            g[frozen] = 0.0
        lam += eta * g / w.sum()
    return lam, False


def _mc_expectations(m: MaxEntModel, cfg: FitConfig, state: MCState) -> np.ndarray:
    rng = rng_stream(cfg.seed, "mstep-mc", state.steps)
    P = state.particles
    sweeps = cfg.mc_sweeps if state.steps else max(cfg.mc_sweeps, cfg.initial_sweeps)
    free = np.ones_like(P, dtype=bool)
    for _ in range(sweeps):
        sweep_batch(m, P, free, rng)
    state.steps += 1
    return m.features(P).mean(axis=0)


def new_mc_state(m: MaxEntModel, cfg: FitConfig) -> MCState:
    rng = rng_stream(cfg.seed, "mstep-mc-init")
    return MCState(rng.integers(0, 2, size=(cfg.mc_expectation_samples, m.k), dtype=np.uint8))


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def rule_indices(m: MaxEntModel) -> np.ndarray:
    return np.array([r for r, t in enumerate(m.terms) if isinstance(t, (Marginal, Conditional))],
                    dtype=np.int64)


def initial_lambda(m: MaxEntModel, seed: int) -> np.ndarray:
    """Links start at U(-0.5, 0.5), rules at 0.

    Links touching a hidden variable are redrawn until |lambda| >= 0.01: at
    lambda = 0 a hidden unit is independent of everything and the
    iteration stalls at that saddle.
    """
    rng = rng_stream(seed, "init")
    hidden = {v.index for v in m.variables if v.hidden}
    lam = np.zeros(m.d)
    for r, t in enumerate(m.terms):
        if not isinstance(t, Link):
            continue
        lam[r] = rng.uniform(-0.5, 0.5)
        while t.involved & hidden and abs(lam[r]) < 0.01:
            lam[r] = rng.uniform(-0.5, 0.5)
    return lam


def hardwire(m: MaxEntModel, rules: np.ndarray) -> MaxEntModel:
    """Set the rule lambdas so every rule holds exactly given the other lambdas."""
    if rules.size == 0:
        return m
    rest = [r for r in range(m.d) if r not in set(rules.tolist())]
    offset = MaxEntModel(m.variables, [m.terms[r] for r in rest], m.lam[rest])
    fitted, _ = fit_maxent_exact(m.variables, [m.terms[r] for r in rules], offset=offset,
                                 lam0=m.lam[rules])
    lam = m.lam.copy()
    lam[rules] = fitted.lam
    return m.with_lambda(lam)


def completed_loglik(m: MaxEntModel, X) -> float:
    """Full log-likelihood of a completed sample; NaN above the enumeration limit."""
    if m.k > enumeration_limit():
        return math.nan
    return full_loglik(m, X)


def run_sem(model: MaxEntModel, blocks: Sequence[SampleBlock], cfg: FitConfig,
            init_lambda=None, check_invariants: bool = True) -> FitReport:
    """Alternate E- and M-steps until lambda is stationary.

    Stationarity: the mean over the last ``stationarity_window`` iterations
    of max_r |lambda_r(t) - lambda_r(t-1)| drops below ``stationarity_tol``.
    """
    lam0 = initial_lambda(model, cfg.seed) if init_lambda is None else np.asarray(init_lambda, float)
    m = model.with_lambda(lam0)
    rules = rule_indices(m) if cfg.hardwire_rules else np.zeros(0, dtype=np.int64)
    if rules.size:
        m = hardwire(m, rules)
    s = pool(blocks, cfg.replication_factor)
    mc_state = new_mc_state(m, cfg) if cfg.m_step == FULL_MC else None
    truncated = [bi for bi, b in enumerate(s.blocks) if b.truncation is not None]

    traj, lls, rows, deltas, exts = [m.lam.copy()], [], [], [], []
    clipped = converged = False
    t = 0
    for t in range(cfg.max_iterations):
        s = e_step(m, s, cfg, t)
        if check_invariants:
            s.check_completions()
        X = s.completions
        if cfg.m_step == PSEUDO:
            lam, c = m_step_pseudolikelihood(X, m, cfg, t, frozen=rules if rules.size else None)
            clipped |= c
        else:
            lam, _ = m_step_fulllikelihood(X, m, cfg, t, frozen=rules if rules.size else None,
                                           mc_state=mc_state)
        new = m.with_lambda(lam)
        if rules.size:
            new = hardwire(new, rules)
        deltas.append(float(np.max(np.abs(new.lam - m.lam))) if m.d else 0.0)
        m = new
        traj.append(m.lam.copy())
        lls.append(completed_loglik(m, X))
        rows.append(len(X))
        exts.append([s.blocks[bi].extension_count for bi in truncated])
        W = cfg.stationarity_window
        if len(deltas) >= W and np.mean(deltas[-W:]) < cfg.stationarity_tol:
            converged = True
            break
    return FitReport(traj, lls, rows, deltas, exts, converged, t + 1, m, cfg.seed, cfg,
                     clipped, s)
