"""Textual rule language for concept/category logic rules.

One rule per line::

    # comment
    c0 <-> y0
    conf=0.8 c1 XOR c2
    NOT (c3 AND c4) OR y1

Operator precedence, loosest first: ``<->``, ``OR``, ``XOR``, ``AND``,
``NOT``.  ``AND``/``OR`` chain into n-ary nodes; ``XOR`` and ``<->`` are
strictly binary, so ``a XOR b XOR c`` is rejected and must be parenthesised.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, Union

CONCEPT = "c"
CATEGORY = "y"

AND = "AND"
OR = "OR"
XOR = "XOR"
IFF = "IFF"
NOT = "NOT"

CONCEPT_CONCEPT = "concept-concept"
CATEGORY_CONCEPT = "category-concept"

MAX_ARITY = 4

# binding strength; larger binds tighter
_PRECEDENCE = {IFF: 1, OR: 2, XOR: 3, AND: 4, NOT: 5}
_SYMBOL = {AND: "AND", OR: "OR", XOR: "XOR", IFF: "<->"}
_COMMUTATIVE = frozenset({AND, OR, XOR, IFF})


class RuleError(ValueError):
    """Base class for rule parsing and validation failures."""


class RuleSyntaxError(RuleError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ConnectiveArityError(RuleSyntaxError):
    pass


class EmptyRuleSetError(RuleError):
    pass


class IndexOutOfRangeError(RuleError):
    pass


class DuplicateRuleError(RuleError):
    pass


class DegenerateRuleError(RuleError):
    pass


class ArityError(RuleError):
    pass


@dataclass(frozen=True)
class Literal:
    kind: str
    index: int
    negated: bool = False

    def __post_init__(self):
        if self.kind not in (CONCEPT, CATEGORY):
            raise ValueError(f"unknown literal kind {self.kind!r}")
        if self.index < 0:
            raise ValueError("literal index must be non-negative")

    @property
    def var(self) -> tuple[str, int]:
        return (self.kind, self.index)


@dataclass(frozen=True)
class Connective:
    op: str
    args: tuple["Formula", ...]

    def __post_init__(self):
        n = len(self.args)
        if self.op == NOT and n != 1:
            raise ValueError("NOT takes exactly one operand")
        if self.op in (XOR, IFF) and n != 2:
            raise ValueError(f"{self.op} takes exactly two operands")
        if self.op in (AND, OR) and n < 2:
            raise ValueError(f"{self.op} needs at least two operands")
        if self.op not in _PRECEDENCE:
            raise ValueError(f"unknown connective {self.op!r}")


Formula = Union[Literal, Connective]


def negate(f: Formula) -> Formula:
    """Logical negation, folding into literals where possible."""
    if isinstance(f, Literal):
        return replace(f, negated=not f.negated)
    return Connective(NOT, (f,))


def variables(f: Formula) -> tuple[tuple[str, int], ...]:
    """Distinct variables of a formula, concepts first, then by index."""
    found: set[tuple[str, int]] = set()
    stack = [f]
    while stack:
        node = stack.pop()
        if isinstance(node, Literal):
            found.add(node.var)
        else:
            stack.extend(node.args)
    return tuple(sorted(found, key=lambda v: (v[0] != CONCEPT, v[1])))


def evaluate(f: Formula, env) -> bool:
    """Truth value of ``f``; ``env`` maps ``(kind, index)`` to a bool."""
    if isinstance(f, Literal):
        return bool(env[f.var]) != f.negated
    op = f.op
    if op == NOT:
        return not evaluate(f.args[0], env)
    if op == AND:
        return all(evaluate(a, env) for a in f.args)
    if op == OR:
        return any(evaluate(a, env) for a in f.args)
    left = evaluate(f.args[0], env)
    right = evaluate(f.args[1], env)
    if op == XOR:
        return left != right
    return left == right


def truth_table(f: Formula, vars_: Sequence[tuple[str, int]] | None = None) -> list[bool]:
    """Truth values over all 2^n assignments; bit j of the row index is ``vars_[j]``."""
    vars_ = tuple(variables(f) if vars_ is None else vars_)
    rows = []
    for row in range(1 << len(vars_)):
        env = {v: (row >> j) & 1 for j, v in enumerate(vars_)}
        rows.append(evaluate(f, env))
    return rows


def canonical_key(f: Formula):
    """Hashable key equal for formulas that differ only by operand order."""
    if isinstance(f, Literal):
        return ("L", f.kind, f.index, f.negated)
    keys = [canonical_key(a) for a in f.args]
    if f.op in _COMMUTATIVE:
        keys.sort(key=repr)
    return (f.op, tuple(keys))


@dataclass(frozen=True)
class Rule:
    id: int
    formula: Formula
    family: str = field(default="")
    confidence: float | None = None

    def __post_init__(self):
        if not self.family:
            object.__setattr__(self, "family", infer_family(self.formula))
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise RuleError(f"rule {self.id}: confidence {self.confidence} outside [0, 1]")

    @property
    def variables(self) -> tuple[tuple[str, int], ...]:
        return variables(self.formula)

    @property
    def arity(self) -> int:
        return len(self.variables)


RuleSet = tuple  # tuple[Rule, ...]


def infer_family(f: Formula) -> str:
    if any(kind == CATEGORY for kind, _ in variables(f)):
        return CATEGORY_CONCEPT
    return CONCEPT_CONCEPT


@dataclass(frozen=True)
class RuleSchema:
    num_concepts: int
    num_categories: int
    concept_names: tuple[str, ...] | None = None
    category_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.num_concepts < 1:
            raise ValueError("need at least one concept")
        if self.num_categories < 2:
            raise ValueError("need at least two categories")
        for names, n, what in (
            (self.concept_names, self.num_concepts, "concept"),
            (self.category_names, self.num_categories, "category"),
        ):
            if names is None:
                continue
            if len(names) != n:
                raise ValueError(f"expected {n} {what} names, got {len(names)}")
            if len(set(names)) != len(names):
                raise ValueError(f"{what} names are not unique")


# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<lit>[cy][0-9]+)
  | (?P<iff><->)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)
_CONF_RE = re.compile(r"\s*conf=([^\s]+)\s+")
_KEYWORDS = {"NOT": NOT, "AND": AND, "OR": OR, "XOR": XOR}


@dataclass
class _Token:
    kind: str
    text: str
    col: int


def _tokenize(text: str, line: int, offset: int) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise RuleSyntaxError(f"unexpected character {text[pos]!r}", line, offset + pos + 1)
        kind = m.lastgroup
        if kind == "word":
            word = m.group()
            if word not in _KEYWORDS:
                raise RuleSyntaxError(f"unknown token {word!r}", line, offset + pos + 1)
            tokens.append(_Token(_KEYWORDS[word], word, offset + pos + 1))
        elif kind == "iff":
            tokens.append(_Token(IFF, m.group(), offset + pos + 1))
        elif kind != "ws":
            tokens.append(_Token(kind, m.group(), offset + pos + 1))
        pos = m.end()
    tokens.append(_Token("eol", "", offset + len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], line: int):
        self.tokens = tokens
        self.pos = 0
        self.line = line

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def take(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, message: str, tok: _Token | None = None):
        tok = tok or self.peek()
        where = "end of line" if tok.kind == "eol" else repr(tok.text)
        raise RuleSyntaxError(f"{message} at {where}", self.line, tok.col)

    def parse(self) -> Formula:
        f = self.iff()
        if self.peek().kind != "eol":
            self.fail("expected end of rule")
        return f

    def iff(self) -> Formula:
        left = self.disjunction()
        if self.peek().kind == IFF:
            self.take()
            right = self.disjunction()
            if self.peek().kind == IFF:
                raise ConnectiveArityError(
                    "'<->' is binary; parenthesise chained equivalences", self.line, self.peek().col
                )
            return Connective(IFF, (left, right))
        return left

    def disjunction(self) -> Formula:
        args = [self.exclusive()]
        while self.peek().kind == OR:
            self.take()
            args.append(self.exclusive())
        return args[0] if len(args) == 1 else Connective(OR, tuple(args))

    def exclusive(self) -> Formula:
        left = self.conjunction()
        if self.peek().kind == XOR:
            self.take()
            right = self.conjunction()
            if self.peek().kind == XOR:
                raise ConnectiveArityError(
                    "XOR is binary; parenthesise chained XOR", self.line, self.peek().col
                )
            return Connective(XOR, (left, right))
        return left

    def conjunction(self) -> Formula:
        args = [self.unary()]
        while self.peek().kind == AND:
            self.take()
            args.append(self.unary())
        return args[0] if len(args) == 1 else Connective(AND, tuple(args))

    def unary(self) -> Formula:
        if self.peek().kind == NOT:
            self.take()
            return negate(self.unary())
        return self.atom()

    def atom(self) -> Formula:
        tok = self.peek()
        if tok.kind == "lit":
            self.take()
            return Literal(tok.text[0], int(tok.text[1:]))
        if tok.kind == "lparen":
            self.take()
            inner = self.iff()
            if self.peek().kind != "rparen":
                self.fail("expected ')'")
            self.take()
            return inner
        self.fail("expected literal or '('")


def parse_formula(text: str, line: int = 1) -> Formula:
    return _Parser(_tokenize(text, line, 0), line).parse()


def parse_rules(text: str, allow_empty: bool = False) -> RuleSet:
    """Parse rule-language source into rules with ids 0..N-1 in file order."""
    rules = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        confidence = None
        offset = 0
        m = _CONF_RE.match(body)
        if m:
            try:
                confidence = float(m.group(1))
            except ValueError:
                raise RuleSyntaxError(f"bad confidence {m.group(1)!r}", lineno, m.start(1) + 1)
            if not 0.0 <= confidence <= 1.0:
                raise RuleSyntaxError(f"confidence {confidence} outside [0, 1]", lineno, m.start(1) + 1)
            offset = m.end()
        elif body.lstrip().startswith("conf="):
            col = body.index("conf=") + 1
            raise RuleSyntaxError("confidence prefix without a rule", lineno, col)
        tokens = _tokenize(body[offset:], lineno, offset)
        formula = _Parser(tokens, lineno).parse()
        rules.append(Rule(len(rules), formula, confidence=confidence))
    if not rules and not allow_empty:
        raise EmptyRuleSetError("rule source contains no rules")
    return tuple(rules)


# ---------------------------------------------------------------------------
# formatting

def format_formula(f: Formula) -> str:
    if isinstance(f, Literal):
        return ("NOT " if f.negated else "") + f"{f.kind}{f.index}"
    if f.op == NOT:
        return f"NOT ({format_formula(f.args[0])})"
    prec = _PRECEDENCE[f.op]
    parts = []
    for arg in f.args:
        s = format_formula(arg)
        # same-op children must keep their grouping; looser children need it
        if isinstance(arg, Connective) and arg.op != NOT and _PRECEDENCE[arg.op] <= prec:
            s = f"({s})"
        parts.append(s)
    return f" {_SYMBOL[f.op]} ".join(parts)


def format_rule(rule: Rule) -> str:
    prefix = "" if rule.confidence is None else f"conf={rule.confidence!r} "
    return prefix + format_formula(rule.formula)


def format_rules(rules: Iterable[Rule]) -> str:
    return "".join(format_rule(r) + "\n" for r in rules)


# ---------------------------------------------------------------------------
# validation

def is_degenerate(f: Formula) -> str | None:
    """Return "tautology"/"contradiction" if ``f`` is constant, else None."""
    rows = truth_table(f)
    if all(rows):
        return "tautology"
    if not any(rows):
        return "contradiction"
    return None


def validate_rules(
    rules: Sequence[Rule],
    schema: RuleSchema,
    dedupe: bool = False,
    max_arity: int = MAX_ARITY,
) -> RuleSet:
    """Check rules against ``schema``.

    Duplicates (equal up to operand order of commutative connectives) raise
    :class:`DuplicateRuleError` unless ``dedupe`` is set, in which case later
    copies are dropped and ids renumbered.
    """
    seen: dict = {}
    kept = []
    for rule in rules:
        for kind, idx in rule.variables:
            bound = schema.num_concepts if kind == CONCEPT else schema.num_categories
            if idx >= bound:
                raise IndexOutOfRangeError(
                    f"rule {rule.id}: {kind}{idx} out of range (have {bound})"
                )
        if not 1 <= rule.arity <= max_arity:
            raise ArityError(f"rule {rule.id}: arity {rule.arity} exceeds {max_arity}")
        kind = is_degenerate(rule.formula)
        if kind:
            raise DegenerateRuleError(f"rule {rule.id} is a {kind}: {format_formula(rule.formula)}")
        key = canonical_key(rule.formula)
        if key in seen:
            if not dedupe:
                raise DuplicateRuleError(f"rule {rule.id} duplicates rule {seen[key]}")
            continue
        seen[key] = rule.id
        kept.append(rule)
    return tuple(replace(r, id=i) for i, r in enumerate(kept))


def binary_rule_forms(a: Literal, b: Literal) -> list[Formula]:
    """The eight two-variable AND/OR rules over literal polarities of ``a`` and ``b``."""
    forms = []
    for op in (AND, OR):
        for na, nb in itertools.product((False, True), repeat=2):
            forms.append(Connective(op, (replace(a, negated=na), replace(b, negated=nb))))
    return forms
