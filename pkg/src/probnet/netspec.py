"""Text format for networks of rules, links and data (``.pnet`` files).

Grammar (``#`` starts a comment; statements end with ``;``)::

    var NAME+ ;
    hidden NAME+ ;
    rule P(LIT) = FLOAT n=INT ;
    rule P(LIT | LIT (and LIT)*) = FLOAT n=INT ;
    link NAME ~ NAME ;
    data (NAME+) { BITS : INT ; ... }

``LIT`` is ``NAME`` or ``!NAME``.  Names may end in ``+``/``-`` so labels
such as ``Taxes+`` work unchanged.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

from .core import And, AtomicVariable, Conditional, Link, Marginal, literal
from .evidence import EvidenceError, materialize_data_sample, materialize_rule_sample
from .model import MaxEntModel

UNKNOWN_DIRECTIVE = "PN001"
UNKNOWN_VARIABLE = "PN002"
PROBABILITY_RANGE = "PN003"
DUPLICATE = "PN004"
MALFORMED_COUNT = "PN005"
SYNTAX = "PN006"
HIDDEN_IN_EVIDENCE = "PN007"
UNSUPPORTED_SHAPE = "PN008"


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    line: int
    column: int
    token: str = ""

    def __str__(self):
        return f"{self.line}:{self.column}: {self.code} {self.message}"


class SpecError(ValueError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Lit:
    name: str
    positive: bool = True

    def __str__(self):
        return self.name if self.positive else "!" + self.name


@dataclass(frozen=True)
class RuleDecl:
    consequent: Lit
    condition: tuple  # of Lit; empty for a marginal rule
    q: float
    n: int
    pos: tuple = field(default=(0, 0), compare=False)

    @property
    def kind(self) -> str:
        return "conditional" if self.condition else "marginal"


@dataclass(frozen=True)
class LinkDecl:
    a: str
    b: str
    pos: tuple = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class DataDecl:
    names: tuple
    rows: tuple  # of (bits tuple, count)
    pos: tuple = field(default=(0, 0), compare=False)


@dataclass
class NetworkSpec:
    variables: list = field(default_factory=list)
    hidden: set = field(default_factory=set)
    rules: list = field(default_factory=list)
    links: list = field(default_factory=list)
    data: list = field(default_factory=list)
    # rules and data blocks in source order, as ("rule" | "data", index)
    evidence_order: list = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, NetworkSpec):
            return NotImplemented
        return (self.variables == other.variables and self.hidden == other.hidden
                and self.rules == other.rules and self.links == other.links
                and self.data == other.data and self.evidence_order == other.evidence_order)


_TOKEN = re.compile(r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<number>[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_.]*[+\-]*)
  | (?P<punct>[;(){}|=~!:])
  | (?P<bad>.)
""", re.VERBOSE)

_RESERVED = ("var", "hidden", "rule", "link", "data", "and")


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list:
    out = []
    line, line_start = 1, 0
    for m in _TOKEN.finditer(text):
        kind = m.lastgroup
        tok = m.group()
        if kind != "ws":
            out.append(_Tok(kind, tok, line, m.start() - line_start + 1))
        nl = tok.count("\n")
        if nl:
            line += nl
            line_start = m.start() + tok.rfind("\n") + 1
    out.append(_Tok("eof", "", line, len(text) - line_start + 1))
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.at = 0
        self.diags: list = []
        self.spec = NetworkSpec()

    # -- token helpers -----------------------------------------------------
    def peek(self, off=0) -> _Tok:
        return self.toks[min(self.at + off, len(self.toks) - 1)]

    def take(self) -> _Tok:
        tok = self.peek()
        if tok.kind != "eof":
            self.at += 1
        return tok

    def error(self, code, message, tok: _Tok):
        self.diags.append(Diagnostic(code, message, tok.line, tok.col, tok.text))

    def expect(self, text) -> _Tok:
        tok = self.peek()
        if tok.text != text:
            raise _Abort(SYNTAX, f"expected {text!r}, found {tok.text or 'end of input'!r}", tok)
        return self.take()

    def name(self) -> _Tok:
        tok = self.peek()
        if tok.kind != "name":
            raise _Abort(SYNTAX, f"expected a name, found {tok.text or 'end of input'!r}", tok)
        return self.take()

    def sync(self, closers=(";",)):
        while self.peek().kind != "eof":
            if self.take().text in closers:
                return

    # -- grammar -----------------------------------------------------------
    def parse(self) -> NetworkSpec:
        while self.peek().kind != "eof":
            tok = self.peek()
            try:
                if tok.text in ("var", "hidden"):
                    self.declare()
                elif tok.text == "rule":
                    self.rule()
                elif tok.text == "link":
                    self.link()
                elif tok.text == "data":
                    self.data_block()
                else:
                    self.error(UNKNOWN_DIRECTIVE, f"unknown directive {tok.text!r}", tok)
                    self.sync()
            except _Abort as e:
                self.error(e.code, e.message, e.tok)
                self.sync(("}",) if tok.text == "data" else (";",))
        return self.spec

    def resolve(self, tok: _Tok) -> Optional[str]:
        if tok.text not in self.spec.variables:
            self.error(UNKNOWN_VARIABLE, f"unknown variable {tok.text!r}", tok)
            return None
        return tok.text

    def declare(self):
        hidden = self.take().text == "hidden"
        names = [self.name()]
        while self.peek().text != ";":
            names.append(self.name())
        self.expect(";")
        for tok in names:
            if tok.text in self.spec.variables or tok.text in _RESERVED:
                self.error(DUPLICATE, f"duplicate or reserved name {tok.text!r}", tok)
                continue
            self.spec.variables.append(tok.text)
            if hidden:
                self.spec.hidden.add(tok.text)

    def literal(self) -> tuple:
        positive = True
        if self.peek().text == "!":
            self.take()
            positive = False
        tok = self.name()
        return Lit(tok.text, positive), tok

    def evidence_var(self, tok) -> bool:
        if self.resolve(tok) is None:
            return False
        if tok.text in self.spec.hidden:
            self.error(HIDDEN_IN_EVIDENCE, f"hidden variable {tok.text!r} cannot be observed", tok)
            return False
        return True

    def rule(self):
        start = self.take()
        head = self.name()
        if head.text != "P":
            raise _Abort(SYNTAX, f"expected 'P(...)', found {head.text!r}", head)
        self.expect("(")
        cons, ctok = self.literal()
        lits = [(cons, ctok)]
        cond = []
        if self.peek().text == "|":
            self.take()
            lit, tok = self.literal()
            cond.append(lit)
            lits.append((lit, tok))
            while self.peek().text == "and":
                self.take()
                lit, tok = self.literal()
                cond.append(lit)
                lits.append((lit, tok))
        self.expect(")")
        self.expect("=")
        qtok = self.take()
        if qtok.kind != "number":
            raise _Abort(SYNTAX, f"expected a probability, found {qtok.text!r}", qtok)
        ntok = self.name()
        if ntok.text != "n":
            raise _Abort(SYNTAX, f"expected 'n=', found {ntok.text!r}", ntok)
        self.expect("=")
        count = self.take()
        self.expect(";")
        ok = all([self.evidence_var(tok) for _, tok in lits])
        q = float(qtok.text)
        if not 0.0 <= q <= 1.0:
            self.error(PROBABILITY_RANGE, f"probability {qtok.text} outside [0, 1]", qtok)
            ok = False
        n = _count(count)
        if n is None:
            self.error(MALFORMED_COUNT, f"sample size must be a positive integer, got {count.text!r}",
                       count)
            ok = False
        if ok:
            self.spec.evidence_order.append(("rule", len(self.spec.rules)))
            self.spec.rules.append(RuleDecl(cons, tuple(cond), q, n, (start.line, start.col)))

    def link(self):
        start = self.take()
        a = self.name()
        self.expect("~")
        b = self.name()
        self.expect(";")
        if self.resolve(a) is None or self.resolve(b) is None:
            return
        if a.text == b.text:
            self.error(SYNTAX, "a link needs two distinct variables", b)
            return
        pair = {a.text, b.text}
        if any({l.a, l.b} == pair for l in self.spec.links):
            self.error(DUPLICATE, f"duplicate link {a.text} ~ {b.text}", start)
            return
        self.spec.links.append(LinkDecl(a.text, b.text, (start.line, start.col)))

    def data_block(self):
        start = self.take()
        self.expect("(")
        names = [self.name()]
        while self.peek().text != ")":
            names.append(self.name())
        self.expect(")")
        self.expect("{")
        ok = all([self.evidence_var(tok) for tok in names])
        if len({t.text for t in names}) != len(names):
            self.error(DUPLICATE, "variable listed twice in data header", names[0])
            ok = False
        rows = []
        while self.peek().text != "}":
            bits = self.take()
            self.expect(":")
            count = self.take()
            self.expect(";")
            if bits.kind != "number" or set(bits.text) - {"0", "1"} or len(bits.text) != len(names):
                self.error(SYNTAX, f"expected {len(names)} bits, found {bits.text!r}", bits)
                ok = False
                continue
            c = _count(count)
            if c is None:
                self.error(MALFORMED_COUNT, f"count must be a positive integer, got {count.text!r}",
                           count)
                ok = False
                continue
            rows.append((tuple(int(ch) for ch in bits.text), c))
        self.expect("}")
        if self.peek().text == ";":
            self.take()
        if ok:
            self.spec.evidence_order.append(("data", len(self.spec.data)))
            self.spec.data.append(DataDecl(tuple(t.text for t in names), tuple(rows),
                                           (start.line, start.col)))


class _Abort(Exception):
    def __init__(self, code, message, tok):
        super().__init__(message)
        self.code, self.message, self.tok = code, message, tok


def _count(tok: _Tok) -> Optional[int]:
    if tok.kind != "number" or not tok.text.isdigit():
        return None
    v = int(tok.text)
    return v if v >= 1 else None


def check_spec(text: str) -> tuple:
    """Parse without raising; returns ``(spec, diagnostics)``."""
    p = _Parser(text)
    spec = p.parse()
    return spec, p.diags


def parse_spec(text: str) -> NetworkSpec:
    spec, diags = check_spec(text)
    if diags:
        raise SpecError(diags)
    return spec


def format_spec(spec: NetworkSpec) -> str:
    """Canonical text for ``spec``; parsing it gives back an equal spec."""
    lines = []
    # declaration order decides variable indices, so keep runs in order
    run, kind = [], None
    for v in spec.variables:
        k = "hidden" if v in spec.hidden else "var"
        if k != kind and run:
            lines.append(f"{kind} {' '.join(run)};")
            run = []
        kind = k
        run.append(v)
    if run:
        lines.append(f"{kind} {' '.join(run)};")
    for kind, idx in spec.evidence_order:
        if kind == "rule":
            r = spec.rules[idx]
            inner = str(r.consequent)
            if r.condition:
                inner += " | " + " and ".join(str(l) for l in r.condition)
            lines.append(f"rule P({inner}) = {r.q!r} n={r.n};")
        else:
            d = spec.data[idx]
            body = " ".join(f"{''.join(map(str, bits))} : {c};" for bits, c in d.rows)
            lines.append(f"data ({' '.join(d.names)}) {{ {body} }}")
    for l in spec.links:
        lines.append(f"link {l.a} ~ {l.b};")
    return "\n".join(lines) + "\n"


def compile_spec(spec: NetworkSpec, soft: bool = False):
    """Build ``(model, blocks)`` from a validated spec.

    Terms are rules then links, each in declaration order; ``soft`` leaves
    the rule terms out of the model so rules act as evidence only.  Blocks
    are named S1, S2, ... in source order.
    """
    index = {name: i for i, name in enumerate(spec.variables)}
    k = len(spec.variables)
    variables = [AtomicVariable(i, name, name in spec.hidden) for i, name in enumerate(spec.variables)]
    diags = []

    def lit(l: Lit):
        return literal(index[l.name], l.positive)

    rule_terms = []
    for r in spec.rules:
        for l in (r.consequent,) + r.condition:
            if l.name in spec.hidden:
                diags.append(Diagnostic(HIDDEN_IN_EVIDENCE, f"rule over hidden variable {l.name!r}",
                                        *r.pos))
        c = lit(r.consequent)
        if r.condition:
            cond = [lit(l) for l in r.condition]
            b = cond[0] if len(cond) == 1 else And(tuple(cond))
            rule_terms.append(Conditional(c, b, r.q))
        else:
            rule_terms.append(Marginal(c, r.q))
    link_terms = [Link(index[l.a], index[l.b]) for l in spec.links]

    blocks = []
    for kind, idx in spec.evidence_order:
        bid = f"S{len(blocks) + 1}"
        try:
            if kind == "rule":
                r = spec.rules[idx]
                blocks.append(materialize_rule_sample(rule_terms[idx], r.q, r.n, k, bid))
            else:
                d = spec.data[idx]
                blocks.append(materialize_data_sample([index[nm] for nm in d.names], list(d.rows),
                                                      k, bid))
        except EvidenceError as e:
            pos = (spec.rules[idx] if kind == "rule" else spec.data[idx]).pos
            diags.append(Diagnostic(UNSUPPORTED_SHAPE, str(e), *pos))
    if diags:
        raise SpecError(diags)
    terms = link_terms if soft else rule_terms + link_terms
    return MaxEntModel(variables, terms), blocks


def load_fixture(name: str) -> str:
    """Text of a bundled ``.pnet`` file (``paass_s3`` or ``economy``, suffix optional)."""
    return fixture_path(name).read_text(encoding="utf-8")


def fixture_path(name: str):
    if not name.endswith(".pnet"):
        name += ".pnet"
    return resources.files("probnet.data").joinpath(name)
