"""Syntax of mu-formulas: AST, parser, printer, and static analysis.

Formulas are built from propositions (lowercase identifiers), fixpoint
variables (uppercase identifiers), falsum, the intuitionistic connectives
&, |, ->, the modalities [] and <>, and the binders mu/nu.  Two extra
connectives exist only internally -- the local diamond (printed ``<^>``),
which asserts a formula at some R-successor, and the implication query
``(phi ? psi)`` used as an auxiliary game position.  The parser never
produces them.

Static analysis (`analyze`) renames bound variables apart and checks the
well-naming conditions: every sentence must bind each variable once, use
it at most once, guard the use under a modality, and use it positively.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache


# ---------------------------------------------------------------------------
# AST


class Formula:
    """Base class for formula AST nodes. Nodes are immutable and hashable."""

    __slots__ = ()

    def __str__(self):
        return pretty(self)

    def __repr__(self):
        return f"{type(self).__name__}({pretty(self)!r})"


@dataclass(frozen=True, repr=False)
class Prop(Formula):
    name: str


@dataclass(frozen=True, repr=False)
class Var(Formula):
    name: str


@dataclass(frozen=True, repr=False)
class Bottom(Formula):
    pass


@dataclass(frozen=True, repr=False)
class And(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True, repr=False)
class Or(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True, repr=False)
class Implies(Formula):
    left: Formula
    right: Formula


@dataclass(frozen=True, repr=False)
class Box(Formula):
    body: Formula


@dataclass(frozen=True, repr=False)
class Dia(Formula):
    body: Formula


@dataclass(frozen=True, repr=False)
class Mu(Formula):
    var: str
    body: Formula


@dataclass(frozen=True, repr=False)
class Nu(Formula):
    var: str
    body: Formula


@dataclass(frozen=True, repr=False)
class LocalDia(Formula):
    """Internal: some R-successor satisfies the body. Not persistent."""

    body: Formula


@dataclass(frozen=True, repr=False)
class Query(Formula):
    """Internal: auxiliary implication position (antecedent? consequent)."""

    left: Formula
    right: Formula


TRUE = Implies(Bottom(), Bottom())

_BINARY = (And, Or, Implies, Query)
_UNARY = (Box, Dia, LocalDia)
_BINDER = (Mu, Nu)


def children(f: Formula) -> tuple[Formula, ...]:
    if isinstance(f, _BINARY):
        return (f.left, f.right)
    if isinstance(f, _UNARY):
        return (f.body,)
    if isinstance(f, _BINDER):
        return (f.body,)
    return ()


def size(f: Formula) -> int:
    """Number of AST nodes."""
    return 1 + sum(size(c) for c in children(f))


def subformulas(f: Formula) -> set[Formula]:
    out = {f}
    for c in children(f):
        out |= subformulas(c)
    return out


def free_vars(f: Formula) -> frozenset[str]:
    if isinstance(f, Var):
        return frozenset((f.name,))
    if isinstance(f, _BINDER):
        return free_vars(f.body) - {f.var}
    out = frozenset()
    for c in children(f):
        out |= free_vars(c)
    return out


def props(f: Formula) -> frozenset[str]:
    if isinstance(f, Prop):
        return frozenset((f.name,))
    out = frozenset()
    for c in children(f):
        out |= props(c)
    return out


# ---------------------------------------------------------------------------
# Parsing


class ParseError(ValueError):
    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


_PUNCT = ("->", "[]", "<>", "<^>", "&", "|", "~", "(", ")", ".", "?")
_KEYWORDS = ("mu", "nu", "false", "true")


def _tokenize(text: str, internal: bool):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        matched = False
        for p in _PUNCT:
            if text.startswith(p, i):
                if p in ("<^>", "?") and not internal:
                    raise ParseError(f"unknown token {p!r}", i)
                tokens.append((p, p, i))
                i += len(p)
                matched = True
                break
        if matched:
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            if word in _KEYWORDS:
                tokens.append((word, word, i))
            elif word[0].isupper():
                tokens.append(("uident", word, i))
            else:
                tokens.append(("lident", word, i))
            i = j
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    tokens.append(("eof", "", n))
    return tokens


class _Parser:
    def __init__(self, text, internal=False):
        self.tokens = _tokenize(text, internal)
        self.pos = 0
        self.internal = internal

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind):
        tok = self.next()
        if tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[1] or 'end of input'!r}", tok[2])
        return tok

    def formula(self):
        left = self.disjunction()
        kind, _, _ = self.peek()
        if kind == "->":
            self.next()
            return Implies(left, self.formula())
        if kind == "?" and self.internal:
            self.next()
            return Query(left, self.formula())
        return left

    def disjunction(self):
        f = self.conjunction()
        while self.peek()[0] == "|":
            self.next()
            f = Or(f, self.conjunction())
        return f

    def conjunction(self):
        f = self.unary()
        while self.peek()[0] == "&":
            self.next()
            f = And(f, self.unary())
        return f

    def unary(self):
        kind, _, _ = self.peek()
        if kind == "[]":
            self.next()
            return Box(self.unary())
        if kind == "<>":
            self.next()
            return Dia(self.unary())
        if kind == "<^>":
            self.next()
            return LocalDia(self.unary())
        if kind == "~":
            self.next()
            return Implies(self.unary(), Bottom())
        return self.atom()

    def atom(self):
        kind, value, where = self.next()
        if kind == "false":
            return Bottom()
        if kind == "true":
            return TRUE
        if kind == "lident":
            return Prop(value)
        if kind == "uident":
            return Var(value)
        if kind == "(":
            f = self.formula()
            self.expect(")")
            return f
        if kind in ("mu", "nu"):
            var = self.expect("uident")[1]
            self.expect(".")
            body = self.formula()
            return Mu(var, body) if kind == "mu" else Nu(var, body)
        raise ParseError(f"expected a formula, found {value or 'end of input'!r}", where)


def parse(text: str) -> Formula:
    """Parse the concrete syntax into a Formula.

    ``~f`` is expanded to ``f -> false`` and ``true`` to ``false -> false``.
    Raises ParseError with a position on bad input.
    """
    p = _Parser(text)
    f = p.formula()
    tok = p.peek()
    if tok[0] != "eof":
        raise ParseError(f"unexpected trailing token {tok[1]!r}", tok[2])
    return f


def _parse_internal(text: str) -> Formula:
    # Accepts the internal connectives <^> and ?; used by artifact loaders.
    p = _Parser(text, internal=True)
    f = p.formula()
    tok = p.peek()
    if tok[0] != "eof":
        raise ParseError(f"unexpected trailing token {tok[1]!r}", tok[2])
    return f


# ---------------------------------------------------------------------------
# Printing

# Precedence levels: 0 = -> / mu / nu / ?, 1 = |, 2 = &, 3 = unary, 4 = atom.


def pretty(f: Formula) -> str:
    """Render a formula; parse(pretty(f)) == f for parser-producible ASTs."""
    return _pretty(f, 0)


def _pretty(f, level):
    if isinstance(f, Prop) or isinstance(f, Var):
        return f.name
    if isinstance(f, Bottom):
        return "false"
    if f == TRUE:
        return "true"
    if isinstance(f, Implies):
        if isinstance(f.right, Bottom):
            return _wrap("~" + _pretty(f.left, 3), 3, level)
        return _wrap(_pretty(f.left, 1) + " -> " + _pretty(f.right, 0), 0, level)
    if isinstance(f, Query):
        return _wrap(_pretty(f.left, 1) + " ? " + _pretty(f.right, 0), 0, level)
    if isinstance(f, Or):
        return _wrap(_pretty(f.left, 1) + " | " + _pretty(f.right, 2), 1, level)
    if isinstance(f, And):
        return _wrap(_pretty(f.left, 2) + " & " + _pretty(f.right, 3), 2, level)
    if isinstance(f, Box):
        return _wrap("[]" + _pretty(f.body, 3), 3, level)
    if isinstance(f, Dia):
        return _wrap("<>" + _pretty(f.body, 3), 3, level)
    if isinstance(f, LocalDia):
        return _wrap("<^>" + _pretty(f.body, 3), 3, level)
    if isinstance(f, Mu):
        return _wrap("mu " + f.var + ". " + _pretty(f.body, 0), 0, level)
    if isinstance(f, Nu):
        return _wrap("nu " + f.var + ". " + _pretty(f.body, 0), 0, level)
    raise TypeError(f"not a formula: {f!r}")


def _wrap(s, produced, required):
    return s if produced >= required else "(" + s + ")"


# ---------------------------------------------------------------------------
# Polarity


class Polarity(enum.Enum):
    """Polarity of a variable in a formula.

    POSITIVE / NEGATIVE: every free occurrence sits under an even / odd
    number of implication antecedents.  BOTH: the vacuous case where the
    variable has no free occurrence, so it counts as positive and negative
    at once.  ABSENT: occurrences of both polarities exist, so the variable
    is neither uniformly positive nor uniformly negative.
    """

    POSITIVE = "positive"
    NEGATIVE = "negative"
    BOTH = "both"
    ABSENT = "absent"


def _polarity_pair(f: Formula, x: str) -> tuple[bool, bool]:
    # (is-positive, is-negative) by structural induction.
    if isinstance(f, Var):
        if f.name == x:
            return (True, False)
        return (True, True)
    if isinstance(f, (Prop, Bottom)):
        return (True, True)
    if isinstance(f, (And, Or)):
        lp, ln = _polarity_pair(f.left, x)
        rp, rn = _polarity_pair(f.right, x)
        return (lp and rp, ln and rn)
    if isinstance(f, (Box, Dia, LocalDia)):
        return _polarity_pair(f.body, x)
    if isinstance(f, (Implies, Query)):
        lp, ln = _polarity_pair(f.left, x)
        rp, rn = _polarity_pair(f.right, x)
        return (ln and rp, lp and rn)
    if isinstance(f, _BINDER):
        if f.var == x:
            return (True, True)
        return _polarity_pair(f.body, x)
    raise TypeError(f"not a formula: {f!r}")


def polarity(f: Formula, x: str) -> Polarity:
    """Classify the variable x in f as POSITIVE, NEGATIVE, BOTH or ABSENT."""
    pos, neg = _polarity_pair(f, x)
    if pos and neg:
        return Polarity.BOTH
    if pos:
        return Polarity.POSITIVE
    if neg:
        return Polarity.NEGATIVE
    return Polarity.ABSENT


def is_positive_in(f: Formula, x: str) -> bool:
    """The binder side condition: x occurs only positively in f."""
    return _polarity_pair(f, x)[0]


# ---------------------------------------------------------------------------
# Well-naming analysis


class NotASentence(ValueError):
    pass


class UnguardedVariable(ValueError):
    def __init__(self, var):
        super().__init__(f"bound variable {var} is not guarded by a modality")
        self.var = var


class NonPositiveVariable(ValueError):
    def __init__(self, var):
        super().__init__(f"bound variable {var} does not occur only positively")
        self.var = var


class MultipleOccurrences(ValueError):
    def __init__(self, var):
        super().__init__(f"bound variable {var} occurs more than once")
        self.var = var


@dataclass(frozen=True)
class WellNamedSentence:
    """An analyzed sentence: bound variables renamed apart and validated.

    binders maps each bound variable to its (unique) binding fixpoint
    subformula; subsumption_order lists the fixpoint subformulas in
    non-increasing size, so an outer binder never follows one of its
    subformulas.  binder_roles gives the game role held by player I at the
    binder, determined by the parity of implication antecedents crossed on
    the syntactic path from the root.
    """

    formula: Formula
    binders: dict[str, Formula]
    subsumption_order: tuple[Formula, ...]
    binder_roles: dict[str, str]  # var -> "V" | "R"

    def binder_index(self, var: str) -> int:
        """1-based position of var's binder in subsumption order."""
        return self.subsumption_order.index(self.binders[var]) + 1

    @property
    def num_binders(self) -> int:
        return len(self.subsumption_order)

    def closure(self) -> set[Formula]:
        return closure(self)

    def __str__(self):
        return pretty(self.formula)


def _rename_apart(f: Formula, taken: set[str], env: dict[str, str]) -> Formula:
    if isinstance(f, Var):
        return Var(env.get(f.name, f.name))
    if isinstance(f, (Prop, Bottom)):
        return f
    if isinstance(f, _BINDER):
        name = f.var
        if name in taken:
            base, k = name, 1
            while f"{base}{k}" in taken:
                k += 1
            name = f"{base}{k}"
        taken.add(name)
        body = _rename_apart(f.body, taken, {**env, f.var: name})
        return type(f)(name, body)
    if isinstance(f, _BINARY):
        return type(f)(_rename_apart(f.left, taken, env), _rename_apart(f.right, taken, env))
    if isinstance(f, _UNARY):
        return type(f)(_rename_apart(f.body, taken, env))
    raise TypeError(f"not a formula: {f!r}")


def _count_occurrences(f: Formula, x: str) -> int:
    if isinstance(f, Var):
        return 1 if f.name == x else 0
    if isinstance(f, _BINDER) and f.var == x:
        return 0
    return sum(_count_occurrences(c, x) for c in children(f))


def _is_guarded(f: Formula, x: str, under_modality: bool) -> bool:
    if isinstance(f, Var):
        return under_modality or f.name != x
    if isinstance(f, _UNARY):
        return _is_guarded(f.body, x, True)
    if isinstance(f, _BINDER):
        if f.var == x:
            return True
        return _is_guarded(f.body, x, under_modality)
    return all(_is_guarded(c, x, under_modality) for c in children(f))


def analyze(f: Formula) -> WellNamedSentence:
    """Validate and normalize a sentence for games and proof search.

    Renames bound variables so each binder is unique, then checks that every
    bound variable occurs at most once, guarded under a modality, and only
    positively in its binder's body.
    """
    if isinstance(f, (LocalDia, Query)) or any(
        isinstance(g, (LocalDia, Query)) for g in subformulas(f)
    ):
        raise ValueError("internal connectives are not allowed in input sentences")
    if free_vars(f):
        raise NotASentence(f"free variables: {', '.join(sorted(free_vars(f)))}")
    g = _rename_apart(f, set(), {})

    binders: dict[str, Formula] = {}
    roles: dict[str, str] = {}

    def walk(h: Formula, flips: int):
        if isinstance(h, _BINDER):
            x = h.var
            if _count_occurrences(h.body, x) > 1:
                raise MultipleOccurrences(x)
            if not is_positive_in(h.body, x):
                raise NonPositiveVariable(x)
            if not _is_guarded(h.body, x, False):
                raise UnguardedVariable(x)
            binders[x] = h
            roles[x] = "V" if flips % 2 == 0 else "R"
            walk(h.body, flips)
        elif isinstance(h, (Implies, Query)):
            walk(h.left, flips + 1)
            walk(h.right, flips)
        else:
            for c in children(h):
                walk(c, flips)

    walk(g, 0)
    order = tuple(sorted(binders.values(), key=lambda b: (-size(b), pretty(b))))
    return WellNamedSentence(formula=g, binders=binders, subsumption_order=order, binder_roles=roles)


def closure(s: WellNamedSentence) -> set[Formula]:
    """Subformulas plus the induced local-diamond and query formulas."""
    subs = subformulas(s.formula)
    extra = set()
    for g in subs:
        if isinstance(g, Dia):
            extra.add(LocalDia(g.body))
        elif isinstance(g, Implies):
            extra.add(Query(g.left, g.right))
    return subs | extra


@lru_cache(maxsize=512)
def analyzed(text: str) -> WellNamedSentence:
    """Parse-and-analyze helper for text inputs."""
    return analyze(parse(text))
