"""Random structures shared by the test modules."""

from probnet.core import And, Atom, AtomicVariable, Conditional, Link, Marginal, Not, Or
from probnet.model import MaxEntModel


def variables(k, hidden=()):
    return [AtomicVariable(i, f"x{i + 1}", i in hidden) for i in range(k)]


def random_proposition(rng, k, depth=2):
    if depth == 0 or rng.random() < 0.3:
        a = Atom(int(rng.integers(k)))
        return Not(a) if rng.random() < 0.4 else a
    kind = rng.integers(3)
    if kind == 0:
        return Not(random_proposition(rng, k, depth - 1))
    parts = tuple(random_proposition(rng, k, depth - 1) for _ in range(int(rng.integers(2, 4))))
    return And(parts) if kind == 1 else Or(parts)


def random_term(rng, k):
    kind = rng.integers(3) if k > 1 else 1
    if kind == 0:
        i, j = rng.choice(k, size=2, replace=False)
        return Link(int(i), int(j))
    q = float(rng.uniform())
    if kind == 1:
        return Marginal(random_proposition(rng, k), q)
    return Conditional(random_proposition(rng, k), random_proposition(rng, k), q)


def random_model(rng, k, d, scale=1.5):
    terms = [random_term(rng, k) for _ in range(d)]
    return MaxEntModel(variables(k), terms, rng.uniform(-scale, scale, size=d))
