"""Cyclic labeled sequent proof search with countermodel extraction.

Sequents carry relational atoms (x<=y for the intuitionistic preorder,
xRy for the modal relation) next to labeled formulas.  Proof search
saturates sequents under the inference rules; branches close as axioms,
as back-edges to a subsuming ancestor (yielding a regular non-wellfounded
proof), or end in a saturated sequent from which a countermodel is read
off.  A finished graph is a proof iff every infinite path of its
unraveling carries a progressing trace: some trace whose outermost
infinitely-regenerated binder is a nu regenerated on the right or a mu
regenerated on the left.  That condition is decided by composing per-edge
trace relations, annotated with regeneration priorities, to a closure and
inspecting idempotent cycle relations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from ckmu.denotational import eval_mask
from ckmu.game import PLAYER_II, build_arena, solve
from ckmu.model import LogicVariant, Model, ValidationFailed, close, validate
from ckmu.syntax import (
    And,
    Bottom,
    Box,
    Dia,
    Formula,
    Implies,
    LocalDia,
    Mu,
    Nu,
    Or,
    Prop,
    Var,
    WellNamedSentence,
    _parse_internal,
    pretty,
)

LEFT = "L"
RIGHT = "R"


class PrincipalMissing(ValueError):
    pass


class FreshnessViolation(ValueError):
    pass


class RuleNotInVariant(ValueError):
    pass


class SequentNotSaturated(ValueError):
    pass


class ExtractionUnsound(RuntimeError):
    pass


class MalformedTraceMap(ValueError):
    pass


# ---------------------------------------------------------------------------
# Sequents


@dataclass(frozen=True)
class Sequent:
    """Relational atoms plus labeled formula sets (left |- right)."""

    pre: frozenset[tuple[str, str]]
    rel: frozenset[tuple[str, str]]
    left: frozenset[tuple[str, Formula]]
    right: frozenset[tuple[str, Formula]]

    @staticmethod
    def root(label: str, goal: Formula) -> "Sequent":
        return Sequent(frozenset(), frozenset(), frozenset(), frozenset([(label, goal)]))

    def labels(self) -> set[str]:
        out = set()
        for a, b in self.pre:
            out.add(a)
            out.add(b)
        for a, b in self.rel:
            out.add(a)
            out.add(b)
        for x, _ in self.left:
            out.add(x)
        for x, _ in self.right:
            out.add(x)
        return out

    def extend(self, pre=(), rel=(), left=(), right=()) -> "Sequent":
        return Sequent(
            self.pre | frozenset(pre),
            self.rel | frozenset(rel),
            self.left | frozenset(left),
            self.right | frozenset(right),
        )

    def side(self, side: str) -> frozenset[tuple[str, Formula]]:
        return self.left if side == LEFT else self.right

    def rename(self, rho: dict[str, str]) -> "Sequent":
        r = lambda x: rho.get(x, x)
        return Sequent(
            frozenset((r(a), r(b)) for a, b in self.pre),
            frozenset((r(a), r(b)) for a, b in self.rel),
            frozenset((r(x), f) for x, f in self.left),
            frozenset((r(x), f) for x, f in self.right),
        )

    def subsumes_into(self, other: "Sequent", rho: dict[str, str]) -> bool:
        """True if the rho-image of this sequent is contained in `other`."""
        s = self.rename(rho)
        return (
            s.pre <= other.pre and s.rel <= other.rel and s.left <= other.left and s.right <= other.right
        )

    def render(self) -> str:
        atoms = [f"{a}<={b}" for a, b in sorted(self.pre)] + [
            f"{a} R {b}" for a, b in sorted(self.rel)
        ]
        lhs = [f"{x}:{pretty(f)}" for x, f in sorted(self.left, key=lambda t: (t[0], str(t[1])))]
        rhs = [f"{x}:{pretty(f)}" for x, f in sorted(self.right, key=lambda t: (t[0], str(t[1])))]
        return f"{', '.join(atoms)} ; {', '.join(lhs)} |- {', '.join(rhs)}"

    @staticmethod
    def parse(text: str) -> "Sequent":
        try:
            rels, rest = text.split(";", 1)
            lhs, rhs = rest.split("|-", 1)
        except ValueError:
            raise MalformedTraceMap(f"bad sequent text: {text!r}") from None
        pre, rel = set(), set()
        for atom in filter(None, (a.strip() for a in rels.split(","))):
            if "<=" in atom:
                a, b = atom.split("<=")
                pre.add((a.strip(), b.strip()))
            elif " R " in atom:
                a, b = atom.split(" R ")
                rel.add((a.strip(), b.strip()))
            else:
                raise MalformedTraceMap(f"bad relational atom: {atom!r}")
        def formulas(chunk):
            out = set()
            for item in filter(None, (i.strip() for i in chunk.split(","))):
                label, ftext = item.split(":", 1)
                out.add((label.strip(), _parse_internal(ftext.strip())))
            return out
        return Sequent(frozenset(pre), frozenset(rel), frozenset(formulas(lhs)), frozenset(formulas(rhs)))

    def __str__(self):
        return self.render()


# ---------------------------------------------------------------------------
# Rules

CK_RULES = (
    "pres", "trans",
    "and_l", "and_r", "or_l", "or_r", "imp_l", "imp_r",
    "box_l", "box_r", "dia_l", "dia_r", "ldia_r",
    "eta_l", "eta_r", "regen_l", "regen_r",
    "wk",
)
IK_RULES = CK_RULES + ("fwd", "bwd")
GK_RULES = IK_RULES + ("lin",)

AXIOMS = ("ax_id", "ax_bot", "ax_dia_n")


def rules_for(variant: LogicVariant):
    if variant is LogicVariant.CK:
        return CK_RULES
    if variant is LogicVariant.IK:
        return IK_RULES
    return GK_RULES


@dataclass(frozen=True)
class RuleInstance:
    """One rule application: name, the principal it acts on, extra labels.

    principal is a labeled formula (label, Formula) for logical rules and
    None for the structural rules; args carries the rule's other labels
    (e.g. the target of a heredity copy, the atoms of a transitivity step);
    fresh lists the eigenvariables introduced by the premises.
    """

    name: str
    principal: tuple[str, Formula] | None = None
    args: tuple[str, ...] = ()
    fresh: tuple[str, ...] = ()


@dataclass(frozen=True)
class TracePoint:
    side: str
    label: str
    formula: Formula

    def __str__(self):
        return f"{self.side}:{self.label}:{pretty(self.formula)}"


def _require(cond, exc, msg):
    if not cond:
        raise exc(msg)


def premises_with_minors(
    s: Sequent, r: RuleInstance, sentence: WellNamedSentence, variant: LogicVariant
) -> list[tuple[Sequent, tuple[TracePoint, ...]]]:
    """Premises of the rule instance, each with its minor trace points."""
    name = r.name
    _require(name in rules_for(variant), RuleNotInVariant, f"rule {name} not in {variant.value}")
    labels = s.labels()
    for y in r.fresh:
        _require(y not in labels, FreshnessViolation, f"eigenvariable {y} occurs in the conclusion")
    if len(set(r.fresh)) != len(r.fresh):
        raise FreshnessViolation("eigenvariables must be distinct")

    def has_left(x, f):
        return (x, f) in s.left

    def has_right(x, f):
        return (x, f) in s.right

    if name == "pres":
        x, f = r.principal
        (y,) = r.args
        _require(has_left(x, f), PrincipalMissing, f"{x}:{f} not on the left")
        _require((x, y) in s.pre, PrincipalMissing, f"{x}<={y} not present")
        return [(s.extend(left=[(y, f)]), (TracePoint(LEFT, y, f),))]
    if name == "trans":
        x, y, z = r.args
        _require((x, y) in s.pre and (y, z) in s.pre, PrincipalMissing, "transitivity atoms missing")
        return [(s.extend(pre=[(x, z)]), ())]
    if name == "and_l":
        x, f = r.principal
        _require(has_left(x, f) and isinstance(f, And), PrincipalMissing, "need a left conjunction")
        return [
            (
                s.extend(left=[(x, f.left), (x, f.right)]),
                (TracePoint(LEFT, x, f.left), TracePoint(LEFT, x, f.right)),
            )
        ]
    if name == "and_r":
        x, f = r.principal
        _require(has_right(x, f) and isinstance(f, And), PrincipalMissing, "need a right conjunction")
        return [
            (s.extend(right=[(x, f.left)]), (TracePoint(RIGHT, x, f.left),)),
            (s.extend(right=[(x, f.right)]), (TracePoint(RIGHT, x, f.right),)),
        ]
    if name == "or_l":
        x, f = r.principal
        _require(has_left(x, f) and isinstance(f, Or), PrincipalMissing, "need a left disjunction")
        return [
            (s.extend(left=[(x, f.left)]), (TracePoint(LEFT, x, f.left),)),
            (s.extend(left=[(x, f.right)]), (TracePoint(LEFT, x, f.right),)),
        ]
    if name == "or_r":
        x, f = r.principal
        _require(has_right(x, f) and isinstance(f, Or), PrincipalMissing, "need a right disjunction")
        return [
            (
                s.extend(right=[(x, f.left), (x, f.right)]),
                (TracePoint(RIGHT, x, f.left), TracePoint(RIGHT, x, f.right)),
            )
        ]
    if name == "imp_l":
        x, f = r.principal
        _require(has_left(x, f) and isinstance(f, Implies), PrincipalMissing, "need a left implication")
        return [
            (s.extend(right=[(x, f.left)]), (TracePoint(RIGHT, x, f.left),)),
            (s.extend(left=[(x, f.right)]), (TracePoint(LEFT, x, f.right),)),
        ]
    if name == "imp_r":
        x, f = r.principal
        (y,) = r.fresh
        _require(has_right(x, f) and isinstance(f, Implies), PrincipalMissing, "need a right implication")
        return [
            (
                s.extend(pre=[(x, y)], left=[(y, f.left)], right=[(y, f.right)]),
                (TracePoint(LEFT, y, f.left), TracePoint(RIGHT, y, f.right)),
            )
        ]
    if name == "box_l":
        x, f = r.principal
        _require(has_left(x, f) and isinstance(f, Box), PrincipalMissing, "need a left box")
        added = [(y, f.body) for (x2, y) in s.rel if x2 == x]
        return [
            (s.extend(left=added), tuple(TracePoint(LEFT, y, g) for y, g in sorted(added, key=str)))
        ]
    if name == "box_r":
        x, f = r.principal
        y, z = r.fresh
        _require(has_right(x, f) and isinstance(f, Box), PrincipalMissing, "need a right box")
        return [
            (
                s.extend(pre=[(x, y)], rel=[(y, z)], right=[(z, f.body)]),
                (TracePoint(RIGHT, z, f.body),),
            )
        ]
    if name == "dia_l":
        x, f = r.principal
        (y,) = r.fresh
        _require(has_left(x, f) and isinstance(f, Dia), PrincipalMissing, "need a left diamond")
        return [
            (s.extend(rel=[(x, y)], left=[(y, f.body)]), (TracePoint(LEFT, y, f.body),))
        ]
    if name == "dia_r":
        x, f = r.principal
        (y,) = r.fresh
        _require(has_right(x, f) and isinstance(f, Dia), PrincipalMissing, "need a right diamond")
        return [
            (
                s.extend(pre=[(x, y)], right=[(y, LocalDia(f.body))]),
                (TracePoint(RIGHT, y, LocalDia(f.body)),),
            )
        ]
    if name == "ldia_r":
        x, f = r.principal
        _require(has_right(x, f) and isinstance(f, LocalDia), PrincipalMissing, "need a right local diamond")
        added = [(y, f.body) for (x2, y) in s.rel if x2 == x]
        return [
            (s.extend(right=added), tuple(TracePoint(RIGHT, y, g) for y, g in sorted(added, key=str)))
        ]
    if name in ("eta_l", "eta_r"):
        x, f = r.principal
        side = LEFT if name == "eta_l" else RIGHT
        _require(
            (x, f) in s.side(side) and isinstance(f, (Mu, Nu)),
            PrincipalMissing,
            f"need a fixpoint on the {side} side",
        )
        add = [(x, f.body)]
        if side == LEFT:
            return [(s.extend(left=add), (TracePoint(LEFT, x, f.body),))]
        return [(s.extend(right=add), (TracePoint(RIGHT, x, f.body),))]
    if name in ("regen_l", "regen_r"):
        x, f = r.principal
        side = LEFT if name == "regen_l" else RIGHT
        _require(
            (x, f) in s.side(side) and isinstance(f, Var),
            PrincipalMissing,
            f"need a variable on the {side} side",
        )
        binder = sentence.binders[f.name]
        add = [(x, binder)]
        if side == LEFT:
            return [(s.extend(left=add), (TracePoint(LEFT, x, binder),))]
        return [(s.extend(right=add), (TracePoint(RIGHT, x, binder),))]
    if name == "fwd":
        x, x2, y = r.args
        (y2,) = r.fresh
        _require((x, x2) in s.pre and (x, y) in s.rel, PrincipalMissing, "fwd atoms missing")
        return [(s.extend(pre=[(y, y2)], rel=[(x2, y2)]), ())]
    if name == "bwd":
        x, y, y2 = r.args
        (x2,) = r.fresh
        _require((x, y) in s.rel and (y, y2) in s.pre, PrincipalMissing, "bwd atoms missing")
        return [(s.extend(pre=[(x, x2)], rel=[(x2, y2)]), ())]
    if name == "lin":
        x, y, z = r.args
        _require((x, y) in s.pre and (x, z) in s.pre, PrincipalMissing, "lin atoms missing")
        return [(s.extend(pre=[(y, z)]), ()), (s.extend(pre=[(z, y)]), ())]
    if name == "wk":
        raise ValueError("weakening premises come from back-edge targets")
    raise ValueError(f"unknown rule {name!r}")


def apply_rule(
    s: Sequent, r: RuleInstance, sentence: WellNamedSentence, variant: LogicVariant = LogicVariant.CK
) -> list[Sequent]:
    """The premise sequents of one rule application (axioms: empty list)."""
    if r.name in AXIOMS:
        _require(axiom_name(s, variant) == r.name, PrincipalMissing, f"sequent is not a {r.name} axiom")
        return []
    return [p for p, _ in premises_with_minors(s, r, sentence, variant)]


def axiom_name(s: Sequent, variant: LogicVariant) -> str | None:
    rights_by_label: dict[str, set[Formula]] = {}
    for x, f in s.right:
        rights_by_label.setdefault(x, set()).add(f)
    for x, f in s.left:
        if isinstance(f, Prop) and f in rights_by_label.get(x, ()):
            return "ax_id"
    for x, f in s.left:
        if isinstance(f, Bottom):
            if variant in (LogicVariant.IK, LogicVariant.GK):
                return "ax_dia_n"
            # falsum on the left closes against an atom on the right; a
            # right falsum also closes (a fallible world satisfies it).
            if any(isinstance(g, (Prop, Bottom)) for g in rights_by_label.get(x, ())):
                return "ax_bot"
    return None


# ---------------------------------------------------------------------------
# Saturation


@dataclass(frozen=True)
class SaturationWitness:
    """An unsatisfied closure condition, with the rule that discharges it."""

    clause: str  # numbered conditions "1".."18" minus "2", plus fwd/bwd/lin
    rule: RuleInstance
    branching: bool = False
    needs_fresh: bool = False

    def __str__(self):
        subj = ""
        if self.rule.principal:
            x, f = self.rule.principal
            subj = f" at {x}:{pretty(f)}"
        elif self.rule.args:
            subj = f" at {','.join(self.rule.args)}"
        return f"condition {self.clause} unsatisfied{subj}"


def saturation_witnesses(
    s: Sequent, sentence: WellNamedSentence, variant: LogicVariant, fresh_names=None
) -> list[SaturationWitness]:
    """All unsatisfied saturation conditions of the sequent.

    Existential conditions that the rules discharge with an eigenvariable
    (9, 11, 13, fwd, bwd) are read modulo reflexivity of the preorder,
    since countermodel extraction closes it reflexively.  Condition 2
    (transitivity of the modal relation) is deliberately absent: no
    inference rule derives it and adding it would change the logic.
    """
    fresh_names = fresh_names or (lambda k: tuple(f"y{i}" for i in range(k)))
    out = []
    pre, rel = s.pre, s.rel
    left, right = s.left, s.right
    left_by_label: dict[str, set[Formula]] = {}
    for x, f in left:
        left_by_label.setdefault(x, set()).add(f)
    right_by_label: dict[str, set[Formula]] = {}
    for x, f in right:
        right_by_label.setdefault(x, set()).add(f)
    pre_succ: dict[str, set[str]] = {}
    for a, b in pre:
        pre_succ.setdefault(a, set()).add(b)
    rel_succ: dict[str, set[str]] = {}
    for a, b in rel:
        rel_succ.setdefault(a, set()).add(b)

    def up(x):
        # preorder successors modulo reflexivity
        return pre_succ.get(x, set()) | {x}

    # 1: transitivity of the preorder atoms
    for x, y in pre:
        for z in pre_succ.get(y, ()):
            if (x, z) not in pre:
                out.append(
                    SaturationWitness("1", RuleInstance("trans", args=(x, y, z)))
                )
    # 3: heredity of left formulas along the preorder
    for x, f in left:
        for y in pre_succ.get(x, ()):
            if f not in left_by_label.get(y, ()):
                out.append(SaturationWitness("3", RuleInstance("pres", (x, f), args=(y,))))
    for x, f in left:
        if isinstance(f, And):
            if f.left not in left_by_label.get(x, ()) or f.right not in left_by_label.get(x, ()):
                out.append(SaturationWitness("4", RuleInstance("and_l", (x, f))))
        elif isinstance(f, Or):
            if f.left not in left_by_label.get(x, ()) and f.right not in left_by_label.get(x, ()):
                out.append(SaturationWitness("6", RuleInstance("or_l", (x, f)), branching=True))
        elif isinstance(f, Implies):
            if f.left not in right_by_label.get(x, ()) and f.right not in left_by_label.get(x, ()):
                out.append(SaturationWitness("8", RuleInstance("imp_l", (x, f)), branching=True))
        elif isinstance(f, Box):
            missing = [y for y in rel_succ.get(x, ()) if f.body not in left_by_label.get(y, ())]
            if missing:
                out.append(SaturationWitness("10", RuleInstance("box_l", (x, f))))
        elif isinstance(f, Dia):
            if not any(f.body in left_by_label.get(y, ()) for y in rel_succ.get(x, ())):
                out.append(
                    SaturationWitness(
                        "12", RuleInstance("dia_l", (x, f), fresh=fresh_names(1)), needs_fresh=True
                    )
                )
        elif isinstance(f, (Mu, Nu)):
            if f.body not in left_by_label.get(x, ()):
                out.append(SaturationWitness("15", RuleInstance("eta_l", (x, f))))
        elif isinstance(f, Var):
            if sentence.binders[f.name] not in left_by_label.get(x, ()):
                out.append(SaturationWitness("17", RuleInstance("regen_l", (x, f))))
    for x, f in right:
        if isinstance(f, And):
            if f.left not in right_by_label.get(x, ()) and f.right not in right_by_label.get(x, ()):
                out.append(SaturationWitness("5", RuleInstance("and_r", (x, f)), branching=True))
        elif isinstance(f, Or):
            if f.left not in right_by_label.get(x, ()) or f.right not in right_by_label.get(x, ()):
                out.append(SaturationWitness("7", RuleInstance("or_r", (x, f))))
        elif isinstance(f, Implies):
            if not any(
                f.left in left_by_label.get(y, ()) and f.right in right_by_label.get(y, ())
                for y in up(x)
            ):
                out.append(
                    SaturationWitness(
                        "9", RuleInstance("imp_r", (x, f), fresh=fresh_names(1)), needs_fresh=True
                    )
                )
        elif isinstance(f, Box):
            if not any(
                f.body in right_by_label.get(z, ())
                for y in up(x)
                for z in rel_succ.get(y, ())
            ):
                out.append(
                    SaturationWitness(
                        "11", RuleInstance("box_r", (x, f), fresh=fresh_names(2)), needs_fresh=True
                    )
                )
        elif isinstance(f, Dia):
            if not any(LocalDia(f.body) in right_by_label.get(y, ()) for y in up(x)):
                out.append(
                    SaturationWitness(
                        "13", RuleInstance("dia_r", (x, f), fresh=fresh_names(1)), needs_fresh=True
                    )
                )
        elif isinstance(f, LocalDia):
            missing = [y for y in rel_succ.get(x, ()) if f.body not in right_by_label.get(y, ())]
            if missing:
                out.append(SaturationWitness("14", RuleInstance("ldia_r", (x, f))))
        elif isinstance(f, (Mu, Nu)):
            if f.body not in right_by_label.get(x, ()):
                out.append(SaturationWitness("16", RuleInstance("eta_r", (x, f))))
        elif isinstance(f, Var):
            if sentence.binders[f.name] not in right_by_label.get(x, ()):
                out.append(SaturationWitness("18", RuleInstance("regen_r", (x, f))))
    if variant in (LogicVariant.IK, LogicVariant.GK):
        for x, x2 in pre:
            if x == x2:
                continue
            for y in rel_succ.get(x, ()):
                if not any(y2 == y or (y, y2) in pre for y2 in rel_succ.get(x2, ())):
                    out.append(
                        SaturationWitness(
                            "fwd",
                            RuleInstance("fwd", args=(x, x2, y), fresh=fresh_names(1)),
                            needs_fresh=True,
                        )
                    )
        for x, y in rel:
            for y2 in pre_succ.get(y, ()):
                if y2 == y:
                    continue
                if not any(
                    (x2 == x or (x, x2) in pre) and y2 in rel_succ.get(x2, ())
                    for x2 in ({x} | pre_succ.get(x, set()))
                ):
                    out.append(
                        SaturationWitness(
                            "bwd",
                            RuleInstance("bwd", args=(x, y, y2), fresh=fresh_names(1)),
                            needs_fresh=True,
                        )
                    )
    if variant is LogicVariant.GK:
        for x in pre_succ:
            succs = sorted(pre_succ[x])
            for y, z in itertools.combinations(succs, 2):
                if y != z and (y, z) not in pre and (z, y) not in pre:
                    out.append(
                        SaturationWitness("lin", RuleInstance("lin", args=(x, y, z)), branching=True)
                    )
    return out


def is_saturated(
    s: Sequent, sentence: WellNamedSentence, variant: LogicVariant = LogicVariant.CK
) -> list[SaturationWitness]:
    """Unsatisfied saturation conditions; empty means saturated."""
    return saturation_witnesses(s, sentence, variant)


# ---------------------------------------------------------------------------
# Proof graphs


@dataclass(frozen=True)
class BackEdge:
    """Premise link to an ancestor, with the renaming into the bud.

    renaming maps the target node's labels to labels of the bud sequent;
    the bud weakens to the renamed target.
    """

    target: int
    renaming: tuple[tuple[str, str], ...]

    def rho(self) -> dict[str, str]:
        return dict(self.renaming)


@dataclass
class ProofNode:
    seq: Sequent
    rule: str | None = None  # axiom name, inference rule name, or "wk"
    instance: RuleInstance | None = None
    premises: list = field(default_factory=list)  # node ids or BackEdge
    parent: int | None = None


@dataclass
class ProofGraph:
    """Regular non-wellfounded pre-proof: a tree plus back-edges."""

    sentence: WellNamedSentence
    variant: LogicVariant
    nodes: list[ProofNode]
    root: int = 0

    def path_to(self, nid: int) -> list[int]:
        path = []
        cur = nid
        while cur is not None:
            path.append(cur)
            cur = self.nodes[cur].parent
        return list(reversed(path))


@dataclass
class ProgressResult:
    accepted: bool
    lasso_stem: list[int] | None = None
    lasso_cycle: list[int] | None = None

    def __bool__(self):
        return self.accepted


def _trace_points(seq: Sequent):
    for x, f in seq.left:
        yield TracePoint(LEFT, x, f)
    for x, f in seq.right:
        yield TracePoint(RIGHT, x, f)


def _regen_priority(sentence: WellNamedSentence, rule: str, var: Var) -> int:
    binder = sentence.binders[var.name]
    n = sentence.num_binders
    i = sentence.binder_index(var.name)
    good = (rule == "regen_l" and isinstance(binder, Mu)) or (
        rule == "regen_r" and isinstance(binder, Nu)
    )
    return 2 * (n - i) + 2 if good else 2 * (n - i) + 1


def _principal_side(rule: str) -> str:
    return LEFT if rule in ("pres", "and_l", "or_l", "imp_l", "box_l", "dia_l", "eta_l", "regen_l") else RIGHT


def _rule_edge_relation(sentence, node: ProofNode, minors, prio: int) -> frozenset:
    rel = set()
    for tp in _trace_points(node.seq):
        rel.add((tp, 0, tp))
    if node.instance is not None and node.instance.principal is not None:
        x, f = node.instance.principal
        src = TracePoint(_principal_side(node.rule), x, f)
        for m in minors:
            rel.add((src, prio, m))
    return frozenset(rel)


def _wk_edge_relation(bud_seq: Sequent, target_seq: Sequent, rho: dict[str, str]) -> frozenset:
    rel = set()
    for tp in _trace_points(target_seq):
        src = TracePoint(tp.side, rho.get(tp.label, tp.label), tp.formula)
        rel.add((src, 0, tp))
    return frozenset(rel)


def _compose(r1: frozenset, r2: frozenset) -> frozenset:
    by_src = {}
    for s, p, d in r2:
        by_src.setdefault(s, []).append((p, d))
    out = set()
    for s, p, mid in r1:
        for p2, d in by_src.get(mid, ()):
            out.add((s, max(p, p2), d))
    return frozenset(out)


def _good_diagonal(rel: frozenset) -> bool:
    return any(s == d and p > 0 and p % 2 == 0 for s, p, d in rel)


def _idempotent_power(rel: frozenset, cap: int = 64) -> frozenset:
    seen = {}
    cur = rel
    for k in range(1, cap + 1):
        if _compose(cur, cur) == cur:
            return cur
        if cur in seen:
            # entered the cycle of the cyclic semigroup; walk it for an idempotent
            period_start = seen[cur]
            powers = [cur]
            nxt = _compose(cur, rel)
            while nxt != cur:
                powers.append(nxt)
                nxt = _compose(nxt, rel)
            for q in powers:
                if _compose(q, q) == q:
                    return q
            raise RuntimeError("no idempotent power found")  # impossible in a finite semigroup
        seen[cur] = k
        cur = _compose(cur, rel)
    raise RuntimeError("idempotent power cap exceeded")


def _edge_relations_of_node(graph: ProofGraph, nid: int):
    """Yield (child_id, relation) for each premise edge of the node.

    Recomputes the premises from the stored rule instance and checks them
    against the recorded children (MalformedTraceMap on any mismatch).
    """
    node = graph.nodes[nid]
    if node.rule is None:
        raise MalformedTraceMap(f"node {nid} is unexpanded")
    if node.rule in AXIOMS:
        return
    if node.rule == "wk":
        (be,) = node.premises
        if not isinstance(be, BackEdge):
            raise MalformedTraceMap("weakening node must hold a back-edge")
        target = graph.nodes[be.target]
        rho = be.rho()
        if len(set(rho.values())) != len(rho):
            raise MalformedTraceMap("back-edge renaming is not injective")
        if not target.seq.subsumes_into(node.seq, rho):
            raise MalformedTraceMap("renamed back-edge target is not contained in the bud")
        yield be.target, _wk_edge_relation(node.seq, target.seq, rho)
        return
    expected = premises_with_minors(node.seq, node.instance, graph.sentence, graph.variant)
    if len(expected) != len(node.premises):
        raise MalformedTraceMap(f"node {nid}: premise count mismatch")
    prio = 0
    if node.rule in ("regen_l", "regen_r"):
        prio = _regen_priority(graph.sentence, node.rule, node.instance.principal[1])
    for (exp_seq, minors), child in zip(expected, node.premises):
        if isinstance(child, BackEdge):
            raise MalformedTraceMap("back-edges are only allowed under weakening nodes")
        if graph.nodes[child].seq != exp_seq:
            raise MalformedTraceMap(f"node {nid}: recorded premise differs from the rule's premise")
        yield child, _rule_edge_relation(graph.sentence, node, minors, prio)


def check_progress(graph: ProofGraph, max_relations: int = 200_000) -> ProgressResult:
    """Accept iff every infinite path of the unraveling has a progressing trace.

    Composes the per-edge trace relations (annotated with the maximal
    regeneration priority seen) into a closure; an idempotent cycle
    relation without a diagonal of positive even priority witnesses a
    lasso all of whose traces fail the progress condition.
    """
    edges = []
    for nid in range(len(graph.nodes)):
        for child, rel in _edge_relations_of_node(graph, nid):
            edges.append((nid, child, rel))

    stored: dict[tuple[int, int], dict[frozenset, tuple[int, ...]]] = {}
    outgoing: dict[int, list[tuple[int, frozenset, tuple[int, ...]]]] = {}
    incoming: dict[int, list[tuple[int, frozenset, tuple[int, ...]]]] = {}
    queue = []
    total = [0]

    def add(a, b, rel, path):
        slot = stored.setdefault((a, b), {})
        if rel in slot:
            return
        slot[rel] = path
        outgoing.setdefault(a, []).append((b, rel, path))
        incoming.setdefault(b, []).append((a, rel, path))
        queue.append((a, b, rel, path))
        total[0] += 1
        if total[0] > max_relations:
            raise RuntimeError("trace relation closure exceeded the size cap")

    for a, b, rel in edges:
        add(a, b, rel, (a, b))
    while queue:
        a, b, rel, path = queue.pop()
        for c, rel2, path2 in list(outgoing.get(b, ())):
            add(a, c, _compose(rel, rel2), path + path2[1:])
        for z, rel0, path0 in list(incoming.get(a, ())):
            add(z, b, _compose(rel0, rel), path0 + path[1:])

    for (a, b), rels in stored.items():
        if a != b:
            continue
        for rel, path in rels.items():
            if _compose(rel, rel) == rel and not _good_diagonal(rel):
                return ProgressResult(False, graph.path_to(a), list(path))
    return ProgressResult(True)


# ---------------------------------------------------------------------------
# Countermodel extraction


def _label_sort_key(label: str):
    digits = "".join(ch for ch in label if ch.isdigit())
    return (len(label) - len(digits), label[: len(label) - len(digits)], int(digits or 0))


def _extract_model(seq: Sequent, sentence: WellNamedSentence, designated: str):
    from ckmu.syntax import props as formula_props

    labels = sorted(seq.labels() | {designated}, key=_label_sort_key)
    fallible = [x for x, f in seq.left if isinstance(f, Bottom)]
    val = {p: set() for p in formula_props(sentence.formula)}
    for x, f in seq.left:
        if isinstance(f, Prop) and f.name in val:
            val[f.name].add(x)
    return close(
        labels,
        fallible,
        seq.pre,
        seq.rel,
        {p: sorted(ws) for p, ws in val.items()},
        variant=LogicVariant.CK,
    )


def extract_countermodel(
    seq: Sequent,
    sentence: WellNamedSentence,
    variant: LogicVariant = LogicVariant.CK,
    designated: str = "x0",
):
    """Read a countermodel off a saturated non-axiom sequent.

    Worlds are the sequent's labels; falsum-on-the-left marks fallible
    worlds; the valuation collects left propositions.  The raw structure is
    closed (reflexivity of the preorder, heredity, fallible closure) and
    then double-checked: the model must validate for the variant and the
    evaluator must refute the goal at the designated world, otherwise
    ExtractionUnsound is raised.
    """
    if axiom_name(seq, variant) is not None:
        raise SequentNotSaturated("the sequent is an axiom")
    witnesses = saturation_witnesses(seq, sentence, variant)
    if witnesses:
        raise SequentNotSaturated(f"unsatisfied conditions: {witnesses[0]}")
    model = _extract_model(seq, sentence, designated)
    bad = validate(model, variant)
    if bad:
        raise ExtractionUnsound(f"extracted model violates {variant.value}: {bad[0]}")
    if eval_mask(model, sentence.formula, {}) >> model.index[designated] & 1:
        raise ExtractionUnsound("extracted model does not refute the goal")
    return model, designated


def _quotient_sequent(seq: Sequent, rho: dict[str, str]):
    """Glue each renamed label back onto its preimage (regular unrolling)."""
    inverse = {v: k for k, v in rho.items() if v != k}

    def rep(x):
        seen = set()
        while x in inverse and x not in seen:
            seen.add(x)
            x = inverse[x]
        return x

    mapping = {x: rep(x) for x in seq.labels()}
    return seq.rename(mapping), mapping


# ---------------------------------------------------------------------------
# Verdicts


@dataclass
class Proved:
    graph: ProofGraph

    def __bool__(self):
        return True


@dataclass
class Refuted:
    model: Model
    world: str
    moves: dict[str, str]

    def __bool__(self):
        return False


@dataclass
class Unknown:
    reason: str
    expansions: int
    open_leaves: int

    def __bool__(self):
        return False


def _refuted_verdict(model: Model, world: str, sentence: WellNamedSentence) -> Refuted:
    arena = build_arena(model, sentence, world)
    sol = solve(arena)
    if sol.winner_at(arena.initial) != PLAYER_II:
        raise ExtractionUnsound("game solver does not confirm the countermodel")
    moves = {
        str(arena.positions[a]): str(arena.positions[b])
        for a, b in sorted(sol.strategy_ii.items())
        if sol.winner[a] == PLAYER_II
    }
    return Refuted(model=model, world=world, moves=moves)


# ---------------------------------------------------------------------------
# Proof search


_RULE_ORDER = {
    name: k
    for k, name in enumerate(
        [
            "trans", "pres", "and_l", "or_r", "eta_l", "eta_r", "regen_l", "regen_r",
            "box_l", "ldia_r",
            "and_r", "or_l", "imp_l", "lin",
            "imp_r", "dia_l", "dia_r", "box_r", "fwd", "bwd",
        ]
    )
}


def _witness_key(w: SaturationWitness):
    inst = w.rule
    label = inst.principal[0] if inst.principal else (inst.args[0] if inst.args else "")
    text = pretty(inst.principal[1]) if inst.principal else ",".join(inst.args)
    return (
        w.needs_fresh,
        w.branching,
        _RULE_ORDER.get(inst.name, 99),
        _label_sort_key(label),
        text,
    )


def _find_renamings(src: Sequent, dst: Sequent, cap: int = 400):
    """Injective label maps rho with rho(src) contained in dst."""
    src_labels = sorted(src.labels(), key=_label_sort_key)
    if not src_labels:
        yield {}
        return
    src_left: dict[str, set[Formula]] = {x: set() for x in src_labels}
    src_right: dict[str, set[Formula]] = {x: set() for x in src_labels}
    for x, f in src.left:
        src_left[x].add(f)
    for x, f in src.right:
        src_right[x].add(f)
    dst_labels = sorted(dst.labels(), key=_label_sort_key)
    dst_left: dict[str, set[Formula]] = {y: set() for y in dst_labels}
    dst_right: dict[str, set[Formula]] = {y: set() for y in dst_labels}
    for x, f in dst.left:
        dst_left[x].add(f)
    for x, f in dst.right:
        dst_right[x].add(f)
    candidates = {
        x: [
            y
            for y in dst_labels
            if src_left[x] <= dst_left[y] and src_right[x] <= dst_right[y]
        ]
        for x in src_labels
    }
    if any(not c for c in candidates.values()):
        return
    order = sorted(src_labels, key=lambda x: len(candidates[x]))
    budget = [cap]

    def ok_atoms(assign, x, y):
        for a, b in src.pre:
            if a == x and b in assign and (y, assign[b]) not in dst.pre:
                return False
            if b == x and a in assign and (assign[a], y) not in dst.pre:
                return False
            if a == x and b == x and (y, y) not in dst.pre:
                return False
        for a, b in src.rel:
            if a == x and b in assign and (y, assign[b]) not in dst.rel:
                return False
            if b == x and a in assign and (assign[a], y) not in dst.rel:
                return False
            if a == x and b == x and (y, y) not in dst.rel:
                return False
        return True

    def backtrack(i, assign, used):
        if budget[0] <= 0:
            return
        if i == len(order):
            yield dict(assign)
            return
        x = order[i]
        for y in candidates[x]:
            if y in used:
                continue
            budget[0] -= 1
            if budget[0] <= 0:
                return
            if not ok_atoms(assign, x, y):
                continue
            assign[x] = y
            used.add(y)
            yield from backtrack(i + 1, assign, used)
            del assign[x]
            used.discard(y)

    yield from backtrack(0, {}, set())


def prove(
    goal,
    variant: LogicVariant = LogicVariant.CK,
    max_nodes: int = 4000,
    max_labels: int = 20,
):
    """Bounded cyclic proof search; returns Proved, Refuted, or Unknown.

    Branches close as axioms or by back-edges to a subsuming ancestor when
    the resulting cycle carries a progressing trace.  A saturated non-axiom
    leaf yields a countermodel; a repeating non-progressing cycle yields
    one by gluing the repetition (checked against the evaluator before it
    is reported).  Exhausting the node or label budget returns Unknown.
    """
    from ckmu.syntax import analyze, parse

    if isinstance(goal, str):
        goal = analyze(parse(goal))
    elif not isinstance(goal, WellNamedSentence):
        goal = analyze(goal)
    sentence = goal

    counter = itertools.count(1)

    def fresh(k):
        return tuple(f"x{next(counter)}" for _ in range(k))

    graph = ProofGraph(sentence, variant, [ProofNode(Sequent.root("x0", sentence.formula))])
    open_leaves = [0]
    expansions = 0

    def unknown(reason):
        return Unknown(reason=reason, expansions=expansions, open_leaves=len(open_leaves))

    def edge_relation_to_child(nid: int, child_index: int):
        node = graph.nodes[nid]
        expected = premises_with_minors(node.seq, node.instance, sentence, variant)
        minors = expected[child_index][1]
        prio = 0
        if node.rule in ("regen_l", "regen_r"):
            prio = _regen_priority(sentence, node.rule, node.instance.principal[1])
        return _rule_edge_relation(sentence, node, minors, prio)

    def suffix_relations(leaf_id: int):
        """relation of the tree path ancestor -> leaf, per ancestor id."""
        path = graph.path_to(leaf_id)
        rels = {leaf_id: None}
        acc = None
        for i in range(len(path) - 2, -1, -1):
            nid, child = path[i], path[i + 1]
            child_index = graph.nodes[nid].premises.index(child)
            r = edge_relation_to_child(nid, child_index)
            acc = r if acc is None else _compose(r, acc)
            rels[nid] = acc
        return path, rels

    def try_refutation(seq: Sequent, rho: dict[str, str]):
        quotient, mapping = _quotient_sequent(seq, rho)
        if axiom_name(quotient, variant) is not None:
            return None
        designated = mapping.get("x0", "x0")
        try:
            model = _extract_model(quotient, sentence, designated)
        except ValidationFailed:
            return None
        if validate(model, variant):
            return None
        if eval_mask(model, sentence.formula, {}) >> model.index[designated] & 1:
            return None
        return _refuted_verdict(model, designated, sentence)

    while open_leaves:
        if expansions >= max_nodes:
            return unknown("node budget exhausted")
        nid = open_leaves.pop()
        node = graph.nodes[nid]
        seq = node.seq

        ax = axiom_name(seq, variant)
        if ax is not None:
            node.rule = ax
            node.instance = RuleInstance(ax)
            continue

        witnesses = saturation_witnesses(seq, sentence, variant)
        if not witnesses:
            model, designated = extract_countermodel(seq, sentence, variant)
            return _refuted_verdict(model, designated, sentence)

        # back-edge: a subsuming ancestor whose cycle has a progressing trace
        path, suffix = suffix_relations(nid)
        installed = False
        probes = []
        for aid in path[:-1]:
            anc = graph.nodes[aid].seq
            for rho in _find_renamings(anc, seq):
                wk_rel = _wk_edge_relation(seq, anc, rho)
                cycle = _compose(suffix[aid], wk_rel)
                idem = _idempotent_power(cycle)
                if _good_diagonal(idem):
                    node.rule = "wk"
                    node.instance = RuleInstance("wk")
                    node.premises = [BackEdge(aid, tuple(sorted(rho.items())))]
                    installed = True
                    break
                if any(k != v for k, v in rho.items()):
                    probes.append(rho)
            if installed:
                break
        if installed:
            continue
        for rho in probes[:8]:
            verdict = try_refutation(seq, rho)
            if verdict is not None:
                return verdict

        # expand by the first unsatisfied condition
        expansions += 1
        w = min(witnesses, key=_witness_key)
        inst = w.rule
        if inst.fresh:
            inst = RuleInstance(inst.name, inst.principal, inst.args, fresh(len(inst.fresh)))
        node.rule = inst.name
        node.instance = inst
        for premise, _ in premises_with_minors(seq, inst, sentence, variant):
            if len(premise.labels()) > max_labels:
                return unknown("label budget exhausted")
            cid = len(graph.nodes)
            graph.nodes.append(ProofNode(premise, parent=nid))
            node.premises.append(cid)
            open_leaves.append(cid)

    result = check_progress(graph)
    if result.accepted:
        return Proved(graph)
    # a rejected lasso: try to refute by gluing its cycle
    wk_nodes = [graph.nodes[nid] for nid in result.lasso_cycle or [] if graph.nodes[nid].rule == "wk"]
    for node in wk_nodes:
        (be,) = node.premises
        verdict = try_refutation(node.seq, be.rho())
        if verdict is not None:
            return verdict
    return unknown("search closed all branches but the progress check rejected the graph")


# ---------------------------------------------------------------------------
# Proof exchange format (one node per line)


def _instance_text(rule: str, inst: RuleInstance | None) -> str:
    if inst is None:
        return rule
    parts = []
    if inst.args:
        parts.append("args=" + ",".join(inst.args))
    if inst.fresh:
        parts.append("fresh=" + ",".join(inst.fresh))
    return rule + ("[" + ";".join(parts) + "]" if parts else "")


def proof_to_text(graph: ProofGraph) -> str:
    """Serialize; `proof_from_text` restores a graph check_progress accepts."""
    lines = [
        f'proof goal="{pretty(graph.sentence.formula)}" variant={graph.variant.value} root={graph.root}'
    ]
    for nid, node in enumerate(graph.nodes):
        if node.instance and node.instance.principal:
            x, f = node.instance.principal
            principal = f"{x}:{pretty(f)}"
        else:
            principal = "-"
        entries = []
        for p in node.premises:
            if isinstance(p, BackEdge):
                rho = ",".join(f"{a}={b}" for a, b in p.renaming)
                entries.append(f"^{p.target}({rho})")
            else:
                entries.append(str(p))
        lines.append(
            f"node {nid}: {_instance_text(node.rule, node.instance)} "
            f"principal={principal} premises=[{','.join(entries)}] seq=\"{node.seq.render()}\""
        )
    return "\n".join(lines) + "\n"


def proof_from_text(text: str) -> ProofGraph:
    from ckmu.syntax import analyze, parse

    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("proof "):
        raise MalformedTraceMap("missing proof header line")
    header = lines[0]
    try:
        goal_text = header.split('goal="', 1)[1].split('"', 1)[0]
        variant = LogicVariant.parse(header.split("variant=", 1)[1].split()[0])
        root = int(header.split("root=", 1)[1].split()[0])
    except (IndexError, ValueError) as exc:
        raise MalformedTraceMap(f"bad proof header: {header!r}") from exc
    sentence = analyze(parse(goal_text))
    nodes: dict[int, ProofNode] = {}
    for ln in lines[1:]:
        try:
            head, seq_text = ln.split(' seq="', 1)
            seq_text = seq_text.rstrip().rstrip('"')
            head, premises_text = head.split(" premises=[", 1)
            premises_text = premises_text.rstrip("]")
            head, principal_text = head.split(" principal=", 1)
            
            nid_text, rule_text = head.split(":", 1)
            nid = int(nid_text.split()[1])
            rule_text = rule_text.strip()
        except (IndexError, ValueError) as exc:
            raise MalformedTraceMap(f"bad proof line: {ln!r}") from exc
        args: tuple[str, ...] = ()
        fresh: tuple[str, ...] = ()
        rule = rule_text
        if "[" in rule_text:
            rule, bracket = rule_text.split("[", 1)
            for part in bracket.rstrip("]").split(";"):
                if part.startswith("args="):
                    args = tuple(filter(None, part[5:].split(",")))
                elif part.startswith("fresh="):
                    fresh = tuple(filter(None, part[6:].split(",")))
        principal = None
        if principal_text != "-":
            label, ftext = principal_text.split(":", 1)
            principal = (label, _parse_internal(ftext))
        premises: list = []
        for entry in filter(None, premises_text.split(",")) if "^" not in premises_text else []:
            premises.append(int(entry))
        if "^" in premises_text:
            target_text, rho_text = premises_text.lstrip("^").split("(", 1)
            renaming = tuple(
                tuple(kv.split("=")) for kv in filter(None, rho_text.rstrip(")").split(","))
            )
            premises = [BackEdge(int(target_text), renaming)]  # type: ignore[arg-type]
        nodes[nid] = ProofNode(
            seq=Sequent.parse(seq_text),
            rule=rule,
            instance=RuleInstance(rule, principal, args, fresh),
            premises=premises,
        )
    if root not in nodes:
        raise MalformedTraceMap("root node missing")
    ordered = [nodes[i] for i in sorted(nodes)]
    if sorted(nodes) != list(range(len(ordered))):
        raise MalformedTraceMap("node ids must be dense")
    for nid, node in enumerate(ordered):
        for p in node.premises:
            if isinstance(p, int):
                if p not in nodes:
                    raise MalformedTraceMap(f"node {nid} references missing premise {p}")
                ordered[p].parent = nid
    return ProofGraph(sentence=sentence, variant=variant, nodes=ordered, root=root)
