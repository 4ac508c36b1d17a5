"""Probabilistic rules and hidden-unit networks as one maximum-entropy model,
fitted to pooled, partially missing evidence by stochastic EM."""

from .core import (
    And,
    Atom,
    AtomicVariable,
    Conditional,
    ConstraintTerm,
    Link,
    Marginal,
    Not,
    Or,
    Proposition,
    StructureError,
    all_worlds,
    b_value,
    delta_b,
    eval_proposition,
    parse_proposition,
    target_value,
)
from .evidence import (
    EvidenceRecord,
    PooledSample,
    SampleBlock,
    estimate_truncated_extension,
    materialize_data_sample,
    materialize_rule_sample,
    pool,
)
from .gibbs import GibbsChain, gibbs_sweep, impute_record, rng_stream, run_chain
from .model import (
    CapacityError,
    ExactTable,
    MaxEntModel,
    conditional_prob,
    exact_distribution,
    exact_expectation,
    fit_maxent_exact,
    log_score,
    query_probability,
    total_variation,
)
from .netspec import SpecError, compile_spec, format_spec, load_fixture, parse_spec
from .sem import (
    FitConfig,
    FitReport,
    e_step,
    m_step_fulllikelihood,
    m_step_pseudolikelihood,
    run_sem,
)

__version__ = "0.1.0"
