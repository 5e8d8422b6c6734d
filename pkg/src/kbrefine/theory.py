"""Propositional domain theories: parsing, evaluation, printing and synthesis.

Rule files use a small Prolog-like subset::

    % comment
    input d.
    output a.
    a :- b, c.
    b :- not d, e, f.

Symbols that are referenced but never defined (and not declared) are inputs.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from graphlib import CycleError as _GraphCycle
from graphlib import TopologicalSorter
from typing import Iterable, Mapping

import numpy as np


class TheoryError(ValueError):
    """Raised for rule sets that violate the domain-theory invariants."""


class RuleSyntaxError(TheoryError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class CyclicTheoryError(TheoryError):
    pass


IDENT = r"[A-Za-z_][A-Za-z0-9_\-=+'<>]*"
_IDENT_RE = re.compile(IDENT + r"\Z")
_KEYWORDS = {"not", "input", "output"}


@dataclass(frozen=True)
class Literal:
    symbol: str
    negated: bool = False

    def __post_init__(self):
        if not _IDENT_RE.match(self.symbol) or self.symbol in _KEYWORDS:
            raise TheoryError(f"invalid symbol {self.symbol!r}")

    def __str__(self):
        return f"not {self.symbol}" if self.negated else self.symbol


@dataclass(frozen=True)
class Rule:
    consequent: str
    antecedents: tuple[Literal, ...]

    def __post_init__(self):
        object.__setattr__(self, "antecedents", tuple(self.antecedents))
        if not _IDENT_RE.match(self.consequent) or self.consequent in _KEYWORDS:
            raise TheoryError(f"invalid consequent {self.consequent!r}")
        if not self.antecedents:
            raise TheoryError(f"rule for {self.consequent!r} has no antecedents")
        if any(lit.symbol == self.consequent for lit in self.antecedents):
            raise TheoryError(f"{self.consequent!r} appears in its own antecedents")

    @property
    def positives(self) -> int:
        return sum(not lit.negated for lit in self.antecedents)

    def __str__(self):
        return f"{self.consequent} :- {', '.join(map(str, self.antecedents))}."


@dataclass(frozen=True)
class RuleSet:
    """An acyclic propositional theory.

    ``inputs`` and ``outputs`` are ordered tuples; declared symbols come first,
    the rest follow in order of first appearance.
    """

    rules: tuple[Rule, ...] = ()
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    order: tuple[str, ...] = field(default=(), compare=False, repr=False)

    @classmethod
    def build(
        cls,
        rules: Iterable[Rule],
        inputs: Iterable[str] = (),
        outputs: Iterable[str] = (),
    ) -> "RuleSet":
        """Resolve roles and validate; ``inputs``/``outputs`` are declarations."""
        rules = tuple(rules)
        declared_in = list(dict.fromkeys(inputs))
        declared_out = list(dict.fromkeys(outputs))
        consequents = list(dict.fromkeys(r.consequent for r in rules))
        cset = set(consequents)
        used = list(dict.fromkeys(lit.symbol for r in rules for lit in r.antecedents))
        uset = set(used)

        bad = cset.intersection(declared_in)
        if bad:
            raise TheoryError(f"declared input(s) defined by rules: {sorted(bad)}")
        both = set(declared_in).intersection(declared_out)
        if both:
            raise TheoryError(f"symbol(s) declared both input and output: {sorted(both)}")

        ins = declared_in + [s for s in used if s not in cset and s not in declared_in
                             and s not in declared_out]
        outs = declared_out + [c for c in consequents if c not in uset and c not in declared_out]
        undefined_outputs = [o for o in declared_out if o in uset and o not in cset]
        if undefined_outputs:
            raise TheoryError(f"output(s) used as antecedent but never defined: {undefined_outputs}")

        # ordered predecessor lists keep the order independent of string hashing
        graph: dict[str, dict[str, None]] = {c: {} for c in consequents}
        for r in rules:
            graph[r.consequent].update(dict.fromkeys(l.symbol for l in r.antecedents
                                                     if l.symbol in cset))
        try:
            order = tuple(TopologicalSorter(graph).static_order())
        except _GraphCycle as exc:
            raise CyclicTheoryError(f"cyclic dependency: {' -> '.join(exc.args[1])}") from None
        return cls(rules, tuple(ins), tuple(outs), order)

    @property
    def consequents(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(r.consequent for r in self.rules))

    def rules_for(self, symbol: str) -> list[Rule]:
        return [r for r in self.rules if r.consequent == symbol]

    def evaluation_order(self) -> tuple[str, ...]:
        if self.order or not self.rules:
            return self.order
        return RuleSet.build(self.rules, self.inputs, self.outputs).order

    def __len__(self):
        return len(self.rules)


# --------------------------------------------------------------------- parsing

_TOKEN_RE = re.compile(
    rf"(?P<ws>[ \t\r\n]+)|(?P<comment>%[^\n]*)|(?P<neck>:-)|(?P<comma>,)|(?P<dot>\.)"
    rf"|(?P<ident>{IDENT})"
)


def _tokenize(text: str):
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise RuleSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            yield kind, m.group(), line, pos - line_start + 1
        newlines = m.group().count("\n")
        if newlines:
            line += newlines
            line_start = m.start() + m.group().rfind("\n") + 1
        pos = m.end()
    yield "eof", "", line, pos - line_start + 1


def parse_rules(text: str) -> RuleSet:
    """Parse rule source text into a validated :class:`RuleSet`."""
    tokens = list(_tokenize(text))
    i = 0

    def expect(kind):
        nonlocal i
        tok = tokens[i]
        if tok[0] != kind:
            what = "end of input" if tok[0] == "eof" else repr(tok[1])
            raise RuleSyntaxError(f"expected {kind}, found {what}", tok[2], tok[3])
        i += 1
        return tok

    def ident():
        tok = expect("ident")
        if tok[1] in _KEYWORDS:
            raise RuleSyntaxError(f"keyword {tok[1]!r} used as a symbol", tok[2], tok[3])
        return tok[1]

    rules, inputs, outputs = [], [], []
    while tokens[i][0] != "eof":
        head = tokens[i]
        if head[0] == "ident" and head[1] in ("input", "output") and tokens[i + 1][0] == "ident":
            i += 1
            name = ident()
            expect("dot")
            (inputs if head[1] == "input" else outputs).append(name)
            continue
        consequent = ident()
        expect("neck")
        lits = []
        while True:
            negated = tokens[i][0] == "ident" and tokens[i][1] == "not" and tokens[i + 1][0] == "ident"
            if negated:
                i += 1
            lits.append(Literal(ident(), negated))
            if tokens[i][0] == "comma":
                i += 1
                continue
            expect("dot")
            break
        try:
            rules.append(Rule(consequent, tuple(lits)))
        except TheoryError as exc:
            raise RuleSyntaxError(str(exc), head[2], head[3]) from None
    return RuleSet.build(rules, inputs, outputs)


def load_rules(path) -> RuleSet:
    with open(path, encoding="utf-8") as fh:
        return parse_rules(fh.read())


def format_rules(rules: RuleSet) -> str:
    """Print a rule set so that ``parse_rules`` reproduces it exactly."""
    lines = [f"input {s}." for s in rules.inputs]
    lines += [f"output {s}." for s in rules.outputs]
    lines += [str(r) for r in rules.rules]
    return "\n".join(lines) + ("\n" if lines else "")


# ------------------------------------------------------------------ evaluation

def evaluate(rules: RuleSet, assignment: Mapping[str, bool]) -> dict[str, bool]:
    """Negation-by-failure evaluation in topological order."""
    missing = [s for s in rules.inputs if s not in assignment]
    if missing:
        raise TheoryError(f"missing input assignment for {missing}")
    values = {s: bool(assignment[s]) for s in rules.inputs}
    by_head: dict[str, list[Rule]] = {}
    for r in rules.rules:
        by_head.setdefault(r.consequent, []).append(r)
    for sym in rules.evaluation_order():
        values[sym] = any(
            all(values.get(l.symbol, False) != l.negated for l in r.antecedents)
            for r in by_head.get(sym, ())
        )
    for out in rules.outputs:
        values.setdefault(out, False)
    return values


def truth_table(rules: RuleSet) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """All 2^n input assignments (rows, inputs in ``rules.inputs`` order) and symbol values."""
    n = len(rules.inputs)
    X = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.float64).reshape(-1, n)
    columns: dict[str, list[bool]] = {}
    for row in X:
        vals = evaluate(rules, dict(zip(rules.inputs, row.astype(bool))))
        for k, v in vals.items():
            columns.setdefault(k, []).append(v)
    return X, {k: np.array(v) for k, v in columns.items()}


# ------------------------------------------------------------------- synthesis

@dataclass(frozen=True)
class SynthesisParams:
    input_count: int = 12
    intermediate_count: int = 4
    rules_per_consequent: tuple[int, int] = (1, 3)
    antecedents_per_rule: tuple[int, int] = (2, 4)
    negation_prob: float = 0.2
    corrupt_drop_rule_prob: float = 0.2
    corrupt_drop_antecedent_prob: float = 0.15
    corrupt_add_antecedent_prob: float = 0.1
    seed: int = 0
    max_depth: int = 3
    retries: int = 100

    def __post_init__(self):
        if self.input_count < 1 or self.intermediate_count < 0 or self.max_depth < 1:
            raise ValueError("input_count >= 1, intermediate_count >= 0, max_depth >= 1 required")
        for lo, hi in (self.rules_per_consequent, self.antecedents_per_rule):
            if lo < 1 or hi < lo:
                raise ValueError("ranges must be nonempty with lower bound >= 1")
        for p in (self.negation_prob, self.corrupt_drop_rule_prob,
                  self.corrupt_drop_antecedent_prob, self.corrupt_add_antecedent_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")


def _prune(rules: list[Rule], inputs, output: str) -> list[Rule]:
    """Drop rules unreachable from the output and resolve rule-less intermediates.

    A consequent left without rules is false, so rules that need it are removed
    and ``not`` literals on it (always satisfied) are dropped. A rule whose body
    would become empty is removed too, since the grammar has no empty bodies;
    that is the one case where pruning changes what the output computes.
    """
    inputs = set(inputs)
    while True:
        defined = {r.consequent for r in rules}
        dead = {l.symbol for r in rules for l in r.antecedents} - defined - inputs
        if not dead:
            break
        out = []
        for r in rules:
            if any(l.symbol in dead and not l.negated for l in r.antecedents):
                continue
            lits = tuple(l for l in r.antecedents if l.symbol not in dead)
            if lits:
                out.append(Rule(r.consequent, lits))
        rules = out
    reach, frontier = {output}, [output]
    while frontier:
        sym = frontier.pop()
        for r in rules:
            if r.consequent == sym:
                for l in r.antecedents:
                    if l.symbol not in reach:
                        reach.add(l.symbol)
                        frontier.append(l.symbol)
    return [r for r in rules if r.consequent in reach]


def synthesize_theory(params: SynthesisParams) -> tuple[RuleSet, RuleSet]:
    """Draw a random layered target theory and an impoverished copy of it.

    Returns ``(target, impoverished)``; both declare every input and the single
    output ``out`` so they share a feature space.
    """
    rng = np.random.default_rng(params.seed)
    inputs = [f"x{i}" for i in range(params.input_count)]
    depth = {f"h{i}": int(rng.integers(2, params.max_depth + 1)) if params.max_depth > 1 else None
             for i in range(params.intermediate_count)}
    hidden = [h for h, d in depth.items() if d is not None]
    depth["out"] = 1

    def draw_rule(head):
        d = depth[head]
        pool = inputs + [h for h in hidden if depth[h] > d]
        lo, hi = params.antecedents_per_rule
        k = min(int(rng.integers(lo, hi + 1)), len(pool))
        syms = rng.choice(len(pool), size=k, replace=False)
        return Rule(head, tuple(Literal(pool[s], bool(rng.random() < params.negation_prob))
                                for s in syms))

    target_rules = []
    for head in ["out"] + sorted(hidden, key=lambda h: depth[h]):
        lo, hi = params.rules_per_consequent
        for _ in range(int(rng.integers(lo, hi + 1))):
            target_rules.append(draw_rule(head))
    target_rules = _prune(target_rules, inputs, "out")
    target = RuleSet.build(target_rules, inputs, ["out"])

    for _ in range(params.retries):
        corrupted = []
        for r in target.rules:
            if rng.random() < params.corrupt_drop_rule_prob:
                continue
            keep = [l for l in r.antecedents if rng.random() >= params.corrupt_drop_antecedent_prob]
            if not keep:
                keep = [r.antecedents[int(rng.integers(len(r.antecedents)))]]
            if rng.random() < params.corrupt_add_antecedent_prob:
                present = {l.symbol for l in keep}
                free = [s for s in inputs if s not in present]
                if free:
                    keep.append(Literal(free[int(rng.integers(len(free)))],
                                        bool(rng.random() < params.negation_prob)))
            corrupted.append(Rule(r.consequent, tuple(keep)))
        corrupted = _prune(corrupted, inputs, "out")
        if any(r.consequent == "out" for r in corrupted):
            return target, RuleSet.build(corrupted, inputs, ["out"])
    raise TheoryError("corruption removed every rule for the output (retry budget exhausted)")
