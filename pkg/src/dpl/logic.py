"""Rule language for indirect supervision.

A rule attaches a weight to one of three bodies, each grounded per instance,
per group or per linked pair::

    2.1972: vote(+kb_match)
    learn(1.0): vote(-lf_table_noise)
    hard: at_least_one(group_id)
    0.5: agree(coref)

Weights are natural log-odds. ``hard`` marks a constraint.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

FIELD_TYPES = ("bool", "real", "key", "pairs")


class RuleSyntaxError(ValueError):
    """Malformed rule text. Carries a 1-based line and column."""

    def __init__(self, message: str, line: int = 1, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ProgramError(ValueError):
    pass


@dataclass(eq=False)
class Weight:
    """A fixed, learnable or hard rule weight.

    ``value`` is the current value; for learnable weights it starts at
    ``init`` and is refined by the EM loop. Equality ignores ``value``.
    """

    kind: str
    init: float = 0.0
    value: float = field(default=0.0)

    def __post_init__(self):
        if self.kind not in ("fixed", "learnable", "hard"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind == "hard":
            self.init = self.value = math.inf
        else:
            self.init = float(self.init)
            if not math.isfinite(self.init):
                raise ValueError("weight must be finite")
            self.value = self.init

    @classmethod
    def fixed(cls, value: float) -> "Weight":
        return cls("fixed", value)

    @classmethod
    def learnable(cls, init: float) -> "Weight":
        return cls("learnable", init)

    @classmethod
    def hard(cls) -> "Weight":
        return cls("hard")

    @property
    def is_hard(self) -> bool:
        return self.kind == "hard"

    @property
    def is_learnable(self) -> bool:
        return self.kind == "learnable"

    def __eq__(self, other):
        if not isinstance(other, Weight):
            return NotImplemented
        return self.kind == other.kind and (self.is_hard or self.init == other.init)

    def __repr__(self):
        if self.is_hard:
            return "Weight.hard()"
        if self.is_learnable:
            return f"Weight.learnable({self.init!r}, value={self.value!r})"
        return f"Weight.fixed({self.init!r})"


@dataclass(frozen=True)
class Vote:
    source: str
    polarity: str  # "+" or "-"

    @property
    def target(self) -> int:
        return 1 if self.polarity == "+" else 0


@dataclass(frozen=True)
class AtLeastOne:
    group_field: str


@dataclass(frozen=True)
class Agree:
    pair_field: str


RuleBody = Union[Vote, AtLeastOne, Agree]


@dataclass(eq=True)
class Rule:
    name: str
    weight: Weight
    head: RuleBody
    tags: tuple = ()


@dataclass(frozen=True)
class Program:
    rules: tuple
    schema: Mapping[str, str]

    def rule(self, name: str) -> Rule:
        for r in self.rules:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def learnable(self) -> list:
        return [r for r in self.rules if r.weight.is_learnable]

    def weight_values(self) -> dict:
        return {r.name: r.weight.value for r in self.rules if r.weight.is_learnable}

    def subset(self, tags: Iterable[str]) -> "Program":
        """Rules carrying at least one of ``tags``, in program order."""
        tags = set(tags)
        return Program(tuple(r for r in self.rules if tags & set(r.tags)), self.schema)


_NUM = r"[+-]?(?:\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|inf|nan|infinity)"
_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_WEIGHT_RE = re.compile(rf"\s*(?:learn\(\s*(?P<learn>{_NUM})\s*\)|(?P<hard>hard)|(?P<fixed>{_NUM}))\s*", re.I)
_BODY_RE = re.compile(
    rf"\s*(?:vote\(\s*(?P<pol>[+-])\s*(?P<vfield>{_IDENT})\s*\)"
    rf"|at_least_one\(\s*(?P<gfield>{_IDENT})\s*\)"
    rf"|agree\(\s*(?P<pfield>{_IDENT})\s*\))\s*$"
)


def _parse_real(tok: str, line: int, col: int) -> float:
    value = float(tok)
    if not math.isfinite(value):
        raise RuleSyntaxError(f"non-finite weight literal {tok!r}", line, col)
    return value


def parse_rule(text: str, name: str | None = None, line: int = 1, tags=()) -> Rule:
    """Parse one rule line. ``name`` defaults to the rendered body."""
    text = text.split("#", 1)[0].rstrip()
    colon = text.find(":")
    if colon < 0:
        raise RuleSyntaxError("expected ':' between weight and body", line, len(text) + 1)

    wtext = text[:colon]
    m = _WEIGHT_RE.fullmatch(wtext)
    if m is None:
        col = len(wtext) - len(wtext.lstrip()) + 1
        raise RuleSyntaxError(f"unknown weight token {wtext.strip()!r}", line, col)
    if m["hard"]:
        weight = Weight.hard()
    elif m["learn"] is not None:
        weight = Weight.learnable(_parse_real(m["learn"], line, m.start("learn") + 1))
    else:
        weight = Weight.fixed(_parse_real(m["fixed"], line, m.start("fixed") + 1))

    btext = text[colon + 1:]
    b = _BODY_RE.match(btext)
    if b is None:
        col = colon + 2 + len(btext) - len(btext.lstrip())
        raise RuleSyntaxError(f"cannot parse rule body {btext.strip()!r}", line, col)
    if b["pol"]:
        head = Vote(b["vfield"], b["pol"])
    elif b["gfield"]:
        head = AtLeastOne(b["gfield"])
    else:
        head = Agree(b["pfield"])
    return Rule(name or render_body(head), weight, head, tuple(tags))


def render_body(head: RuleBody) -> str:
    if isinstance(head, Vote):
        return f"vote({head.polarity}{head.source})"
    if isinstance(head, AtLeastOne):
        return f"at_least_one({head.group_field})"
    return f"agree({head.pair_field})"


def render_weight(weight: Weight) -> str:
    if weight.is_hard:
        return "hard"
    if weight.is_learnable:
        return f"learn({weight.init!r})"
    return repr(weight.init)


def render_rule(rule: Rule) -> str:
    # learnable weights render their init so a program file stays a config
    return f"{render_weight(rule.weight)}: {render_body(rule.head)}"


_TAG_RE = re.compile(r"#\s*tag\s*:\s*(.+)$", re.I)


def parse_rules(text: str) -> list:
    """Parse a program file body.

    A ``# tag: A, B`` comment line tags every following rule until the next
    tag line. Rules sharing a body get ``#2``, ``#3`` suffixes in their names.
    """
    rules = []
    tags: tuple = ()
    seen: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            t = _TAG_RE.match(stripped)
            if t:
                tags = tuple(s.strip() for s in t.group(1).split(",") if s.strip())
            continue
        rule = parse_rule(raw, line=lineno, tags=tags)
        seen[rule.name] = seen.get(rule.name, 0) + 1
        if seen[rule.name] > 1:
            rule.name = f"{rule.name}#{seen[rule.name]}"
        rules.append(rule)
    return rules


def render_program(program: Program) -> str:
    lines = []
    tags = ()
    for r in program.rules:
        if r.tags != tags:
            lines.append(f"# tag: {', '.join(r.tags)}")
            tags = r.tags
        lines.append(render_rule(r))
    return "\n".join(lines) + "\n"


_REQUIRED = {Vote: "bool", AtLeastOne: "key", Agree: "pairs"}


def _field_of(head: RuleBody) -> str:
    if isinstance(head, Vote):
        return head.source
    if isinstance(head, AtLeastOne):
        return head.group_field
    return head.pair_field


def validate_program(rules: Iterable[Rule], schema: Mapping[str, str]) -> Program:
    rules = tuple(rules)
    names = set()
    for r in rules:
        if r.name in names:
            raise ProgramError(f"duplicate name {r.name!r}")
        names.add(r.name)
        fname = _field_of(r.head)
        if fname not in schema:
            raise ProgramError(f"rule {r.name!r}: unknown field {fname!r}")
        need = _REQUIRED[type(r.head)]
        if schema[fname] != need:
            raise ProgramError(
                f"rule {r.name!r}: field-type mismatch, {fname!r} is {schema[fname]!r}, needs {need!r}"
            )
    return Program(rules, dict(schema))


def load_program(path, schema: Mapping[str, str]) -> Program:
    with open(path, encoding="utf-8") as fh:
        return validate_program(parse_rules(fh.read()), schema)
