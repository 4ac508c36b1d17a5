import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from probnet.core import Atom, Link
from probnet.gibbs import (
    GibbsChain,
    empirical_distribution,
    gibbs_sweep,
    impute_batch,
    impute_record,
    rng_stream,
    run_chain,
)
from probnet.model import MaxEntModel, exact_distribution, query_probability, total_variation
from probnet.netspec import compile_spec, load_fixture, parse_spec

from .helpers import random_model, variables


def within_3sigma(est, p, n):
    return abs(est - p) <= 3 * math.sqrt(p * (1 - p) / n) + 1e-12


def test_uniform_marginals():
    m = MaxEntModel(variables(4), [])
    X = run_chain(m, n_samples=20_000, n_chains=64, burn_in=5, seed=1)
    for i in range(4):
        assert within_3sigma(X[:, i].mean(), 0.5, len(X))


def test_all_clamped_sweep_is_noop():
    m = random_model(np.random.default_rng(0), 4, 5)
    c = GibbsChain(np.array([1, 0, 1, 1]), np.ones(4, bool), rng_stream(0, "t"))
    before = c.state.copy()
    for _ in range(5):
        gibbs_sweep(m, c)
    assert np.array_equal(before, c.state)


def test_sweep_rejects_wrong_length():
    m = MaxEntModel(variables(3), [])
    with pytest.raises(ValueError):
        gibbs_sweep(m, GibbsChain(np.zeros(2), np.zeros(2, bool), rng_stream(0, "t")))


def test_single_link_joint():
    m = MaxEntModel(variables(2), [Link(0, 1)], [1.0])
    X = run_chain(m, n_samples=40_000, n_chains=64, seed=3)
    p = math.e / (3 + math.e)
    assert p == pytest.approx(0.4754, abs=1e-4)
    # thinned samples are close to independent, so a 3 sigma band with some slack
    assert within_3sigma(float(np.mean(X.all(axis=1))), p, len(X) / 1.5)


def test_run_chain_is_deterministic():
    m = random_model(np.random.default_rng(1), 5, 6)
    a = run_chain(m, n_samples=500, n_chains=70, seed=11)
    b = run_chain(m, n_samples=500, n_chains=70, seed=11)
    c = run_chain(m, n_samples=500, n_chains=70, seed=12)
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_run_chain_independent_of_worker_count():
    m = random_model(np.random.default_rng(2), 5, 6)
    a = run_chain(m, n_samples=800, n_chains=200, seed=4, workers=1)
    b = run_chain(m, n_samples=800, n_chains=200, seed=4, workers=3)
    assert np.array_equal(a, b)


def test_distinct_chain_ids_give_distinct_streams():
    m = MaxEntModel(variables(6), [])
    prefixes = {run_chain(m, n_samples=64, seed=0, chain_id=c, burn_in=0).tobytes() for c in range(8)}
    assert len(prefixes) == 8


def test_run_chain_argument_checks():
    m = MaxEntModel(variables(2), [])
    with pytest.raises(ValueError):
        run_chain(m, n_samples=0)
    with pytest.raises(ValueError):
        run_chain(m, burn_in=-1)
    with pytest.raises(ValueError):
        run_chain(m, clamps=[True, False])


def test_clamped_chain_matches_conditional_query():
    rng = np.random.default_rng(7)
    m = random_model(rng, 4, 6)
    X = run_chain(m, init=[1, 0, 0, 0], clamps=[True, False, False, False],
                  n_samples=30_000, n_chains=64, seed=5)
    assert np.all(X[:, 0] == 1)
    p = query_probability(m, Atom(1), Atom(0))
    assert within_3sigma(X[:, 1].mean(), p, len(X) / 1.5)


@pytest.mark.parametrize("seed", range(3))
def test_empirical_distribution_converges(seed):
    rng = np.random.default_rng(40 + seed)
    k = int(rng.integers(2, 7))
    m = random_model(rng, k, 6, scale=1.0)
    X = run_chain(m, n_samples=200_000, n_chains=256, seed=seed)
    assert total_variation(empirical_distribution(X), exact_distribution(m).probabilities) < 0.02


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 20), st.integers(1, 5))
def test_clamped_bits_are_preserved(k, seed, sweeps):
    rng = np.random.default_rng(seed)
    m = random_model(rng, k, 4, scale=3.0)
    obs = rng.integers(0, 2, size=(7, k)).astype(np.int8)
    obs[rng.random((7, k)) < 0.5] = -1
    out = impute_batch(m, obs, None, sweeps, rng_stream(seed, "imp"))
    known = obs >= 0
    assert np.array_equal(out[known], obs[known])
    assert set(np.unique(out)) <= {0, 1}


def test_fully_observed_record_is_unchanged():
    m = random_model(np.random.default_rng(3), 4, 5)
    assert list(impute_record(m, [1, 0, 1, 1])) == [1, 0, 1, 1]


def test_all_missing_uniform_imputation():
    m = MaxEntModel(variables(3), [])
    obs = -np.ones((5000, 3), dtype=np.int8)
    X = impute_batch(m, obs, None, 3, rng_stream(2, "imp"))
    for i in range(3):
        assert within_3sigma(X[:, i].mean(), 0.5, len(X))


def test_example_row_keeps_observed_bits():
    model, _ = compile_spec(parse_spec(load_fixture("paass_s3")))
    model = model.with_lambda(np.random.default_rng(0).uniform(-1, 1, model.d))
    rng = rng_stream(0, "row")
    for _ in range(50):
        x = impute_record(model, [1, 1, None, 0, None], sweeps=10, rng=rng)
        assert (x[0], x[1], x[3]) == (1, 1, 0)


def test_warm_start_is_used_for_missing_bits():
    m = MaxEntModel(variables(3), [])
    x = impute_record(m, [1, None, None], warm_start=[0, 1, 1], sweeps=0)
    assert list(x) == [1, 1, 1]


def test_forbidden_region_is_avoided():
    # rows flagged in the mask must stay in "not (x1 and x2)"
    m = MaxEntModel(variables(3), [Link(0, 1)], [4.0])
    B = Atom(0) & Atom(1)
    obs = -np.ones((500, 3), dtype=np.int8)
    start = np.zeros((500, 3), dtype=np.uint8)
    mask = np.ones(500, bool)
    X = impute_batch(m, obs, start, 20, rng_stream(1, "f"), forbid=[(mask, B)])
    assert not B.evaluate(X).any()
