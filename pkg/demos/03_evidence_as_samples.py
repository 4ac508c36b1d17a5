"""
Evidence as samples with missing values
=======================================

Rules become imaginary samples whose size n says how much the rule is
trusted.  A conditional rule only describes records where its condition
holds, so its sample is truncated and the unseen part is estimated as the
fit goes.  Data blocks cover a subset of the variables; everything not
covered is missing.
"""
import numpy as np

from probnet import compile_spec, load_fixture, parse_spec, pool
from probnet.evidence import blocks_to_csv, estimate_truncated_extension
from probnet.gibbs import impute_record, rng_stream

spec = parse_spec(load_fixture("paass_s3"))
model, blocks = compile_spec(spec)
print(load_fixture("paass_s3"))

# The three blocks as CSV, one row per distinct record; '?' marks a missing bit.
print(blocks_to_csv(blocks, model.names))

s1, s2, s3 = blocks
print(f"{s2.id} is truncated to '{s2.truncation.to_text(model.names)}', n = {s2.n}")

# Suppose the current completions put half of all records inside x1 and x2.
completions = np.array([[1, 1, 0, 0, 0]] * 20 + [[0, 1, 0, 0, 0]] * 20, dtype=np.uint8)
s2_ext = estimate_truncated_extension(s2, completions)
print(f"estimated unseen part of {s2.id}: {s2_ext.extension_count} records")
print(f"pooled sample size: {pool([s1, s2_ext, s3]).size}")

# Filling in the row "1 1 ? 0 ?" keeps its observed bits.
m = model.with_lambda([1.0, -0.5, 0.8, 0.8, -0.6])
rng = rng_stream(0, "demo")
for _ in range(3):
    print(impute_record(m, [1, 1, None, 0, None], sweeps=20, rng=rng))
