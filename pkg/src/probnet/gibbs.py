"""Single-site Gibbs sampling, free and clamped.

Random streams
--------------
Every generator is derived from ``SeedSequence(seed, spawn_key=(tag, *ids))``
where ``tag`` is the CRC-32 of a purpose string ("chain", "estep", ...)
and ``ids`` are chain / iteration / shard counters.  Work is split into
fixed-size shards, each with its own stream, so results do not depend on
how many worker threads process the shards.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import MaxEntModel

SHARD_SIZE = 64
DEFAULT_BURN_IN = 100
DEFAULT_THINNING = 2


def rng_stream(seed: int, purpose: str, *ids: int) -> np.random.Generator:
    tag = zlib.crc32(purpose.encode())
    ss = np.random.SeedSequence(int(seed), spawn_key=(tag, *(int(i) for i in ids)))
    return np.random.Generator(np.random.PCG64(ss))


def map_shards(fn, items: Sequence, workers: int = 1) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sweep_batch(m: MaxEntModel, X: np.ndarray, free: np.ndarray, rng: np.random.Generator,
                forbid: Optional[list] = None) -> None:
    """One sweep over a batch of chains, in place.

    ``X`` is ``(n, k)`` uint8, ``free`` the matching boolean mask of bits that
    may change.  Sites are visited in a fresh random permutation.  ``forbid``
    is a list of ``(row_mask, proposition)``: those rows are kept inside the
    region where the proposition is false.
    """
    n, k = X.shape
    for i in rng.permutation(k):
        u = rng.random(n)
        rows = free[:, i]
        if not rows.any():
            continue
        p1 = m.conditional_prob_batch(X, i)
        for mask, prop in forbid or ():
            if i not in prop.variables():
                continue
            sub = X[mask]
            hit1 = prop.evaluate(sub, (i, 1))
            hit0 = prop.evaluate(sub, (i, 0))
            p1[mask] = np.where(hit1, 0.0, np.where(hit0, 1.0, p1[mask]))
        X[:, i] = np.where(rows, u < p1, X[:, i])


@dataclass
class GibbsChain:
    state: np.ndarray
    clamp_mask: np.ndarray
    rng: np.random.Generator

    def __post_init__(self):
        self.state = np.array(self.state, dtype=np.uint8)
        self.clamp_mask = np.asarray(self.clamp_mask, dtype=bool)
        if self.state.shape != self.clamp_mask.shape:
            raise ValueError("state and clamp mask lengths differ")


def gibbs_sweep(m: MaxEntModel, chain: GibbsChain) -> GibbsChain:
    """Resample every unclamped bit once; the chain is advanced in place and returned."""
    if len(chain.state) != m.k:
        raise ValueError(f"chain state has length {len(chain.state)}, model has k={m.k}")
    X = chain.state[None, :]
    sweep_batch(m, X, ~chain.clamp_mask[None, :], chain.rng)
    chain.state = X[0]
    return chain


def _run_shard(m, init, free, n_steps, burn_in, thinning, rng):
    X = init.copy()
    for _ in range(burn_in):
        sweep_batch(m, X, free, rng)
    out = np.empty((n_steps,) + X.shape, dtype=np.uint8)
    for s in range(n_steps):
        for _ in range(thinning + 1):
            sweep_batch(m, X, free, rng)
        out[s] = X
    return out


def run_chain(m: MaxEntModel, init=None, clamps=None, n_samples: int = 1000,
              burn_in: int = DEFAULT_BURN_IN, thinning: int = DEFAULT_THINNING, seed: int = 0,
              chain_id: int = 0, n_chains: int = 1, workers: int = 1) -> np.ndarray:
    """Draw ``n_samples`` worlds from ``n_chains`` parallel chains.

    Each chain is burned in for ``burn_in`` sweeps and then records its state
    every ``thinning + 1`` sweeps.  Rows are ordered step-major (all chains
    at step 0, then step 1, ...) and the result is truncated to
    ``n_samples``.  ``init`` is a ``(k,)`` or ``(n_chains, k)`` start (random
    if omitted); ``clamps`` is a boolean ``(k,)`` mask of bits held at their
    ``init`` values.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if burn_in < 0 or thinning < 0:
        raise ValueError("burn_in and thinning must be non-negative")
    k = m.k
    clamps = np.zeros(k, dtype=bool) if clamps is None else np.asarray(clamps, dtype=bool)
    if clamps.any() and init is None:
        raise ValueError("clamped bits need an initial state")
    n_steps = -(-n_samples // n_chains)
    starts = range(0, n_chains, SHARD_SIZE)

    def job(shard):
        start = starts[shard]
        size = min(SHARD_SIZE, n_chains - start)
        rng = rng_stream(seed, "chain", chain_id, shard)
        x0 = rng.integers(0, 2, size=(size, k), dtype=np.uint8)
        if init is not None:
            given = np.broadcast_to(np.asarray(init, dtype=np.uint8), (n_chains, k))
            x0 = given[start:start + size].copy()
        free = np.broadcast_to(~clamps, (size, k))
        return _run_shard(m, x0, free, n_steps, burn_in, thinning, rng)

    parts = map_shards(job, list(range(len(starts))), workers)
    samples = np.concatenate(parts, axis=1)
    return samples.reshape(-1, k)[:n_samples]


def impute_batch(m: MaxEntModel, observed: np.ndarray, warm_start: Optional[np.ndarray],
                 sweeps: int, rng: np.random.Generator, forbid: Optional[list] = None) -> np.ndarray:
    """Clamped imputation for a block of records.

    ``observed`` is ``(n, k)`` int8 with -1 marking a missing bit.  Missing
    bits start from ``warm_start`` where given, else uniformly at random;
    observed bits are copied through untouched.
    """
    observed = np.asarray(observed)
    missing = observed < 0
    init = rng.integers(0, 2, size=observed.shape, dtype=np.uint8)
    if warm_start is not None:
        init = np.asarray(warm_start, dtype=np.uint8).copy()
    X = np.where(missing, init, observed).astype(np.uint8)
    for _ in range(sweeps):
        sweep_batch(m, X, missing, rng, forbid)
    return X


def impute_record(m: MaxEntModel, observed: Sequence, warm_start=None, sweeps: int = DEFAULT_BURN_IN,
                  rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Fill the missing entries (``None`` or -1) of one record by clamped Gibbs sampling."""
    if len(observed) != m.k:
        raise ValueError(f"record has length {len(observed)}, model has k={m.k}")
    obs = np.array([-1 if v is None else int(v) for v in observed], dtype=np.int8)
    rng = rng if rng is not None else rng_stream(0, "impute")
    warm = None if warm_start is None else np.asarray(warm_start, dtype=np.uint8)[None, :]
    return impute_batch(m, obs[None, :], warm, sweeps, rng)[0]


def empirical_distribution(samples: np.ndarray) -> np.ndarray:
    """Frequencies of the 2**k worlds, in :func:`probnet.core.all_worlds` order."""
    samples = np.asarray(samples, dtype=np.int64)
    k = samples.shape[1]
    idx = samples @ (1 << np.arange(k - 1, -1, -1, dtype=np.int64))
    return np.bincount(idx, minlength=2 ** k) / len(samples)
