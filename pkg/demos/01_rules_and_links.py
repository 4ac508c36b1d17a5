"""
Rules and links as terms of one log-linear model
================================================

A rule such as "P(x4 | x1 and x2) = 0.3" and an associative link between
two variables both end up as a feature b_r(x) with a weight lambda_r.
This script builds a few of them, enumerates the resulting distribution
and fits the weights of a rule set exactly.
"""
import math

import numpy as np

from probnet import (Atom, Conditional, Link, Marginal, MaxEntModel, exact_distribution,
                     fit_maxent_exact, query_probability)
from probnet.core import AtomicVariable

names = ["x1", "x2", "x3"]
variables = [AtomicVariable(i, n) for i, n in enumerate(names)]
x1, x2, x3 = (Atom(i) for i in range(3))

# A conditional rule is zero outside its condition and takes the values
# 1 - q and -q inside it, so its target expectation is 0.
rule = Conditional(x3, x1 & x2, 0.3)
for world in ([1, 1, 1], [1, 1, 0], [0, 1, 1]):
    print(f"b(rule) at {world}: {rule.value(np.array(world)):+.1f}")

# One link with weight 1 between x1 and x2: world (1, 1) gets weight e.
m = MaxEntModel(variables, [Link(0, 1)], [1.0])
table = exact_distribution(m)
print(f"\nP(x1 and x2) = {query_probability(m, x1 & x2):.4f}  (e/(3+e) = {math.e / (3 + math.e):.4f})")
print(f"log Z = {table.log_partition:.4f}, entropy = {table.entropy:.4f} nats")

# Hardwiring: choose lambda so the rules hold exactly, with maximal entropy.
rules = [Marginal(x1, 0.8), Conditional(x3, x1 & x2, 0.3)]
fitted, report = fit_maxent_exact(variables, rules)
print(f"\nfitted lambda = {np.round(fitted.lam, 4)}  (ln 4 = {math.log(4):.4f})")
print(f"P(x1) = {query_probability(fitted, x1):.6f}")
print(f"P(x3 | x1 and x2) = {query_probability(fitted, x3, x1 & x2):.6f}")
print(f"max residual {report.max_residual:.1e} after {report.iterations} iterations")
# Nothing constrains x2, so maximum entropy leaves it at one half.
print(f"P(x2) = {query_probability(fitted, x2):.6f}")
