"""
Gibbs sampling against exact enumeration
========================================

Each bit is resampled from its conditional given the rest, which only
needs the terms touching that bit.  For a small random model the sampled
frequencies can be compared with the exact table.
"""
import numpy as np

from probnet import Atom, Link, Marginal, MaxEntModel, exact_distribution, query_probability, run_chain
from probnet.core import AtomicVariable
from probnet.gibbs import empirical_distribution
from probnet.model import total_variation

variables = [AtomicVariable(i, f"x{i + 1}") for i in range(4)]
terms = [Marginal(Atom(0), 0.5), Link(0, 1), Link(1, 2), Link(2, 3), Link(0, 3)]
m = MaxEntModel(variables, terms, [0.4, 1.2, -0.8, 0.9, -0.5])

print("Markov blanket of x1:", sorted(m.markov_blanket(0)))

exact = exact_distribution(m).probabilities
for n in (1_000, 10_000, 100_000):
    X = run_chain(m, n_samples=n, n_chains=100, seed=0)
    tv = total_variation(empirical_distribution(X), exact)
    print(f"{n:>7} samples: total variation to the exact table {tv:.4f}")

# Clamping: hold x1 at 1 and sample the rest.
X = run_chain(m, init=[1, 0, 0, 0], clamps=[True, False, False, False], n_samples=50_000,
              n_chains=100, seed=1)
print(f"\nclamped x1=1: sampled P(x2=1) = {X[:, 1].mean():.4f}, "
      f"exact P(x2 | x1) = {query_probability(m, Atom(1), Atom(0)):.4f}")

# Same seed, same draws.
a = run_chain(m, n_samples=200, seed=5)
b = run_chain(m, n_samples=200, seed=5)
print("same seed reproduces the sample:", np.array_equal(a, b))
