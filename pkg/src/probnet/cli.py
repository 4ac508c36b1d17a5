"""Command-line front end: ``probnet <command> ...``.

Exit status: 0 success, 1 input diagnostics, 2 numerical failure (for
example a fit that did not reach stationarity).  Data goes to stdout or the
``--out`` directory; messages go to stderr.  Every ``--out`` directory gets
a ``manifest.json`` recording the command line, input hashes and resolved
configuration, enough to reproduce it.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import secrets
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .core import StructureError, parse_proposition
from .evidence import ASSOCIATIVE, blocks_to_csv, pool
from .gibbs import run_chain
from .model import (
    CapacityError,
    DegenerateConditionError,
    MaxEntModel,
    exact_distribution,
    fit_maxent_exact,
    model_from_dict,
    model_to_dict,
    query_probability,
    total_variation,
)
from .netspec import SpecError, check_spec, compile_spec
from .oracle import finite_difference_gradient, relative_error
from .sem import (
    FULL_EXACT,
    FULL_MC,
    PSEUDO,
    FitConfig,
    e_step,
    full_gradient,
    full_loglik,
    pseudo_gradient,
    pseudo_loglik,
    rule_indices,
    run_sem,
)

EXIT_OK, EXIT_DIAGNOSTICS, EXIT_NUMERICAL = 0, 1, 2
M_STEP_NAMES = {"pseudo": PSEUDO, "full-exact": FULL_EXACT, "full-mc": FULL_MC}
PSEUDO_GRAD_TOL, FULL_GRAD_TOL = 1e-5, 1e-6


class _Failure(Exception):
    def __init__(self, status, message):
        super().__init__(message)
        self.status = status


def _err(msg):
    print(msg, file=sys.stderr)


def _read_spec(path):
    text = Path(path).read_text(encoding="utf-8")
    spec, diags = check_spec(text)
    if diags:
        raise _Failure(EXIT_DIAGNOSTICS, "\n".join(f"{path}:{d}" for d in diags))
    return spec


def _compile(path, soft=False):
    spec = _read_spec(path)
    try:
        return spec, *compile_spec(spec, soft=soft)
    except SpecError as e:
        raise _Failure(EXIT_DIAGNOSTICS, "\n".join(f"{path}:{d}" for d in e.diagnostics))


def _read_model(path) -> MaxEntModel:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return model_from_dict(data.get("final_model", data))


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(32)
    return args.seed


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Outputs:
    """Collects files for an ``--out`` directory and writes the manifest last."""

    def __init__(self, args, inputs, config=None):
        self.dir = Path(args.out) if getattr(args, "out", None) else None
        self.args, self.inputs, self.config = args, inputs, config
        self.names = []
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def write(self, name, text):
        if self.dir is None:
            return
        (self.dir / name).write_text(text, encoding="utf-8")
        self.names.append(name)

    def close(self):
        if self.dir is None:
            return
        manifest = {
            "command": self.args.command,
            "argv": self.args.argv,
            "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in self.inputs],
            "config": self.config,
            "seed": getattr(self.args, "seed", None),
            "version": __version__,
            "outputs": sorted(self.names),
        }
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                                encoding="utf-8")


def _fit_config(args, **over) -> FitConfig:
    cfg = dict(seed=_seed(args), m_step=M_STEP_NAMES[args.m_step], step_size=args.step_size,
               step_decay=args.step_decay, e_step_sweeps=args.e_step_sweeps,
               gradient_steps_per_m=args.gradient_steps, replication_factor=args.replication,
               max_iterations=args.max_iterations, stationarity_window=args.window,
               stationarity_tol=args.tol, mc_expectation_samples=args.mc_samples,
               workers=args.workers)
    cfg.update(over)
    return FitConfig(**cfg)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_validate(args):
    spec, model, blocks = _compile(args.spec)
    print(f"variables: {len(spec.variables)} ({len(spec.hidden)} hidden)")
    print(f"rules: {len(spec.rules)}  links: {len(spec.links)}  data blocks: {len(spec.data)}")
    for b in blocks:
        print(f"  {b.id}: {b.kind}, n={b.n}, {len(b.records)} distinct records")
    return EXIT_OK


def cmd_fit(args):
    spec, model, blocks = _compile(args.spec, soft=args.soft)
    cfg = _fit_config(args, hardwire_rules=args.hardwire)
    if not blocks:
        raise _Failure(EXIT_DIAGNOSTICS, f"{args.spec}: no evidence to fit")
    out = _Outputs(args, [args.spec], asdict(cfg))
    rep = run_sem(model, blocks, cfg)
    out.write("report.json", rep.to_json() + "\n")
    out.write("model.json", json.dumps(model_to_dict(rep.final_model), indent=1) + "\n")
    out.write("lambda_trace.csv", rep.lambda_csv())
    out.write("loglik_trace.csv", rep.loglik_csv())
    out.write("evidence.csv", blocks_to_csv(rep.final_sample.blocks, model.names))
    out.close()
    print(json.dumps({"converged": rep.converged, "iterations": rep.iterations_used,
                      "lambda": [float(v) for v in rep.final_model.lam]}))
    if not rep.converged:
        _err(f"not stationary after {rep.iterations_used} iterations")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_fit_exact(args):
    spec, model, _ = _compile(args.spec)
    rules = [model.terms[r] for r in rule_indices(model)]
    if len(rules) < model.d:
        _err("fit-exact: link terms carry no target and are left out")
    out = _Outputs(args, [args.spec], {"step": args.step, "tol": args.tol,
                                       "max_iter": args.max_iter})
    fitted, report = fit_maxent_exact(model.variables, rules, step=args.step, tol=args.tol,
                                      max_iter=args.max_iter)
    result = {"model": model_to_dict(fitted), "residuals": [float(r) for r in report.residuals],
              "max_residual": report.max_residual, "iterations": report.iterations,
              "converged": report.converged, "consistent": report.consistent}
    out.write("model.json", json.dumps(model_to_dict(fitted), indent=1) + "\n")
    out.write("residuals.json", json.dumps(result, indent=1) + "\n")
    out.close()
    print(json.dumps(result))
    if not report.converged:
        _err(f"constraints not met (max residual {report.max_residual:.3g}); flagged inconsistent")
        return EXIT_NUMERICAL
    return EXIT_OK


def _clamps(model, items):
    lookup = {n: i for i, n in enumerate(model.names)}
    init = np.zeros(model.k, dtype=np.uint8)
    mask = np.zeros(model.k, dtype=bool)
    for item in items or ():
        name, _, val = item.partition("=")
        if name not in lookup or val not in ("0", "1"):
            raise _Failure(EXIT_DIAGNOSTICS, f"bad clamp {item!r}; expected NAME=0 or NAME=1")
        init[lookup[name]] = int(val)
        mask[lookup[name]] = True
    return init, mask


def cmd_sample(args):
    model = _read_model(args.model)
    init, mask = _clamps(model, args.clamp)
    seed = _seed(args)
    out = _Outputs(args, [args.model], {"n": args.n, "burn_in": args.burn_in,
                                        "thinning": args.thinning, "chains": args.chains,
                                        "clamp": args.clamp or []})
    rng_init = init if mask.any() else None
    X = run_chain(model, rng_init, mask, args.n, args.burn_in, args.thinning, seed,
                  n_chains=args.chains, workers=args.workers)
    text = ",".join(model.names) + "\n" + "".join(",".join(map(str, row)) + "\n" for row in X)
    if out.dir is None:
        sys.stdout.write(text)
    out.write("samples.csv", text)
    out.close()
    return EXIT_OK


def cmd_table(args):
    model = _read_model(args.model)
    text = exact_distribution(model).to_csv(model.names)
    out = _Outputs(args, [args.model])
    if out.dir is None:
        sys.stdout.write(text)
    out.write("distribution.csv", text)
    out.close()
    return EXIT_OK


def mc_query(model, c, given, n, seed, workers=1, chains=200):
    X = run_chain(model, None, None, n, seed=seed, n_chains=chains, workers=workers)
    hit = c.evaluate(X)
    cond = np.ones(len(X), dtype=bool) if given is None else given.evaluate(X)
    n_cond = int(cond.sum())
    if n_cond == 0:
        raise DegenerateConditionError("conditioning event never sampled")
    p = float((hit & cond).sum()) / n_cond
    return p, float(np.sqrt(max(p * (1 - p), 1e-300) / n_cond)), n_cond


def cmd_query(args):
    model = _read_model(args.model)
    try:
        c = parse_proposition(args.event, model.names)
        given = parse_proposition(args.given, model.names) if args.given else None
    except StructureError as e:
        raise _Failure(EXIT_DIAGNOSTICS, str(e))
    if args.mc:
        p, se, n = mc_query(model, c, given, args.samples, _seed(args), args.workers)
        result = {"probability": p, "stderr": se, "samples": n, "method": "mc", "seed": args.seed}
    else:
        result = {"probability": query_probability(model, c, given), "method": "exact"}
    print(json.dumps(result))
    return EXIT_OK


def _rule_probabilities(model: MaxEntModel, spec):
    """P(C | B) (or P(C)) under ``model`` for every rule of ``spec``."""
    full, _ = compile_spec(spec)
    table = exact_distribution(model)
    worlds = table.worlds()
    out = []
    for t in full.terms[:len(spec.rules)]:
        cond = getattr(t, "B", None)
        hit = t.C.evaluate(worlds)
        mask = np.ones(len(worlds), bool) if cond is None else cond.evaluate(worlds)
        out.append(float(table.probabilities[hit & mask].sum() / table.probabilities[mask].sum()))
    return out


def compare(spec, cfg: FitConfig):
    """Fit the soft and hardwired versions of ``spec``; returns a result dict and both tables."""
    soft_model, soft_blocks = compile_spec(spec, soft=True)
    hard_model, blocks = compile_spec(spec)
    data_blocks = [b for b in blocks if b.kind == ASSOCIATIVE]
    soft = run_sem(soft_model, soft_blocks, cfg)
    if data_blocks:
        hard = run_sem(hard_model, data_blocks, FitConfig(**{**asdict(cfg), "hardwire_rules": True}))
        hard_fit, hard_converged = hard.final_model, hard.converged
    else:
        rules = [hard_model.terms[r] for r in rule_indices(hard_model)]
        fitted, rep = fit_maxent_exact(hard_model.variables, rules)
        lam = np.zeros(hard_model.d)
        lam[rule_indices(hard_model)] = fitted.lam
        hard_fit, hard_converged = hard_model.with_lambda(lam), rep.converged
    p_soft = _rule_probabilities(soft.final_model, spec)
    p_hard = _rule_probabilities(hard_fit, spec)
    rows = []
    for idx, (r, ps, ph) in enumerate(zip(spec.rules, p_soft, p_hard)):
        text = str(r.consequent) + (" | " + " and ".join(map(str, r.condition)) if r.condition else "")
        rows.append({"rule": f"P({text})", "q": r.q, "p_soft": ps, "p_hard": ph,
                     "soft_discrepancy": abs(ps - r.q), "hard_discrepancy": abs(ph - r.q)})
    t_soft = exact_distribution(soft.final_model)
    t_hard = exact_distribution(hard_fit)
    visible = [i for i, v in enumerate(hard_model.variables) if not v.hidden]
    result = {
        "rules": rows,
        "total_variation": total_variation(t_soft.probabilities, t_hard.probabilities),
        "total_variation_visible": total_variation(_marginal(t_soft, visible),
                                                   _marginal(t_hard, visible)),
        "soft_converged": soft.converged,
        "hard_converged": hard_converged,
        "soft_model": model_to_dict(soft.final_model),
        "hard_model": model_to_dict(hard_fit),
    }
    return result, t_soft, t_hard, hard_model.names


def _marginal(table, keep):
    worlds = table.worlds()[:, keep].astype(np.int64)
    idx = worlds @ (1 << np.arange(len(keep) - 1, -1, -1, dtype=np.int64))
    return np.bincount(idx, weights=table.probabilities, minlength=2 ** len(keep))


def cmd_compare(args):
    spec = _read_spec(args.spec)
    try:
        compile_spec(spec)
    except SpecError as e:
        raise _Failure(EXIT_DIAGNOSTICS, "\n".join(f"{args.spec}:{d}" for d in e.diagnostics))
    cfg = _fit_config(args)
    out = _Outputs(args, [args.spec], asdict(cfg))
    result, t_soft, t_hard, names = compare(spec, cfg)
    out.write("compare.json", json.dumps(result, indent=1, sort_keys=True) + "\n")
    out.write("soft_distribution.csv", t_soft.to_csv(names))
    out.write("hard_distribution.csv", t_hard.to_csv(names))
    out.close()
    print(f"{'rule':<28}{'q':>8}{'P_soft':>10}{'|soft-q|':>11}{'P_hard':>10}{'|hard-q|':>11}")
    for r in result["rules"]:
        print(f"{r['rule']:<28}{r['q']:>8.4f}{r['p_soft']:>10.4f}{r['soft_discrepancy']:>11.2e}"
              f"{r['p_hard']:>10.4f}{r['hard_discrepancy']:>11.2e}")
    print(f"total variation (all variables): {result['total_variation']:.4f}")
    print(f"total variation (visible only):  {result['total_variation_visible']:.4f}")
    if not (result["soft_converged"] and result["hard_converged"]):
        _err("at least one fit did not reach stationarity")
        return EXIT_NUMERICAL
    return EXIT_OK


def gradcheck(model: MaxEntModel, blocks, seed: int, instances: int = 5):
    """Max relative errors of both M-step gradients against central differences."""
    rng = np.random.default_rng(seed)
    worst_pl = worst_fl = 0.0
    for inst in range(instances):
        m = model.with_lambda(rng.uniform(-2, 2, size=model.d))
        cfg = FitConfig(seed=seed + inst, replication_factor=1, initial_sweeps=20)
        X = e_step(m, pool(blocks, 1), cfg, 0).completions
        g, _ = pseudo_gradient(m, X)
        fd = finite_difference_gradient(lambda lam: pseudo_loglik(m, X, lam), m.lam)
        worst_pl = max(worst_pl, relative_error(g, fd))
        g = full_gradient(m, X)
        fd = finite_difference_gradient(lambda lam: full_loglik(m, X, lam), m.lam)
        worst_fl = max(worst_fl, relative_error(g, fd))
    return worst_pl, worst_fl


def cmd_gradcheck(args):
    spec, model, blocks = _compile(args.spec)
    if not blocks:
        raise _Failure(EXIT_DIAGNOSTICS, f"{args.spec}: no evidence to build completions from")
    pl, fl = gradcheck(model, blocks, _seed(args), args.instances)
    print(f"pseudo-likelihood max relative error: {pl:.3e} (tolerance {PSEUDO_GRAD_TOL:g})")
    print(f"full-likelihood   max relative error: {fl:.3e} (tolerance {FULL_GRAD_TOL:g})")
    return EXIT_OK if pl < PSEUDO_GRAD_TOL and fl < FULL_GRAD_TOL else EXIT_NUMERICAL


# ---------------------------------------------------------------------------

def _fit_options(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--m-step", choices=sorted(M_STEP_NAMES), default="pseudo")
    p.add_argument("--step-size", type=float, default=FitConfig.step_size)
    p.add_argument("--step-decay", type=float, default=FitConfig.step_decay)
    p.add_argument("--e-step-sweeps", type=int, default=FitConfig.e_step_sweeps)
    p.add_argument("--gradient-steps", type=int, default=FitConfig.gradient_steps_per_m)
    p.add_argument("--replication", type=int, default=FitConfig.replication_factor)
    p.add_argument("--max-iterations", type=int, default=FitConfig.max_iterations)
    p.add_argument("--window", type=int, default=FitConfig.stationarity_window)
    p.add_argument("--tol", type=float, default=FitConfig.stationarity_tol)
    p.add_argument("--mc-samples", type=int, default=FitConfig.mc_expectation_samples)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--workers", type=int, default=1,
                        help="threads for imputation and sampling (results do not depend on it)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse a .pnet file and report diagnostics")
    p.add_argument("spec")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("fit", help="stochastic EM fit")
    p.add_argument("spec")
    p.add_argument("--out")
    p.add_argument("--soft", action="store_true", help="rules as evidence only")
    p.add_argument("--hardwire", action="store_true", help="enforce rules exactly while fitting links")
    _fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("fit-exact", help="exact maximum-entropy fit of the rules")
    p.add_argument("spec")
    p.add_argument("--out")
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=50_000)
    p.set_defaults(func=cmd_fit_exact)

    p = sub.add_parser("sample", help="Gibbs samples from a fitted model as CSV")
    p.add_argument("model")
    p.add_argument("--out")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--thinning", type=int, default=2)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--clamp", action="append", metavar="NAME=0|1")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("table", help="exact distribution of a fitted model as CSV")
    p.add_argument("model")
    p.add_argument("--out")
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("query", help="probability of an event, optionally conditional")
    p.add_argument("model")
    p.add_argument("event")
    p.add_argument("--given")
    p.add_argument("--mc", action="store_true", help="Monte-Carlo estimate instead of enumeration")
    p.add_argument("--samples", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("compare", help="soft versus hardwired rules on one spec")
    p.add_argument("spec")
    p.add_argument("--out")
    _fit_options(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="check M-step gradients against finite differences")
    p.add_argument("spec")
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except _Failure as e:
        _err(str(e))
        return e.status
    except (CapacityError, DegenerateConditionError, FloatingPointError) as e:
        _err(f"error: {e}")
        return EXIT_NUMERICAL
    except (OSError, StructureError, json.JSONDecodeError, KeyError) as e:
        _err(f"error: {e}")
        return EXIT_DIAGNOSTICS


if __name__ == "__main__":
    sys.exit(main())
