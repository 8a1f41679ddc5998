"""Denotational evaluation of mu-formulas on finite birelational models.

The clauses: falsum denotes the fallible worlds; implication and box
quantify over intuitionistic successors (box through the composed
relation pre;rel); diamond says every intuitionistic successor has an
R-successor in the body; the local diamond drops that intuitionistic
quantifier.  Fixpoints are computed by Kleene iteration from the empty
set (mu) or all worlds (nu), which stabilizes within |W| steps.

World sets are computed as bitmasks internally; the public entry points
wrap them in `WorldSet`.
"""

from __future__ import annotations

from dataclasses import dataclass

from ckmu.model import Model, compose_pre_rel_masks
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
    Query,
    Var,
    WellNamedSentence,
)


class UnboundVariable(ValueError):
    def __init__(self, name):
        super().__init__(f"free variable {name} not bound by the environment")
        self.name = name


# Test-only fault injection: when set, the diamond clause drops its
# intuitionistic quantifier (the differential harness must catch this).
_dia_mutation = False


@dataclass(frozen=True)
class WorldSet:
    """A subset of a specific model's worlds."""

    model: Model
    mask: int

    def __post_init__(self):
        if self.mask & ~self.model.full_mask:
            raise ValueError("mask contains bits outside the model's worlds")

    def __contains__(self, world):
        return bool(self.mask >> self.model.index[world] & 1)

    def __iter__(self):
        return iter(sorted(self.model.world_set(self.mask)))

    def __len__(self):
        return bin(self.mask).count("1")

    def __le__(self, other):
        self._check(other)
        return self.mask & ~other.mask == 0

    def __eq__(self, other):
        if isinstance(other, WorldSet):
            return self.model is other.model and self.mask == other.mask
        if isinstance(other, (set, frozenset)):
            return self.to_set() == other
        return NotImplemented

    def __hash__(self):
        return hash((id(self.model), self.mask))

    def _check(self, other):
        if other.model is not self.model:
            raise ValueError("world sets belong to different models")

    def to_set(self) -> frozenset[str]:
        return self.model.world_set(self.mask)

    def __repr__(self):
        return f"WorldSet({sorted(self.to_set())})"


def _env_masks(m: Model, env) -> dict[str, int]:
    out = {}
    for name, ws in (env or {}).items():
        if isinstance(ws, WorldSet):
            out[name] = ws.mask
        elif isinstance(ws, int):
            out[name] = ws
        else:
            out[name] = m.mask_of(ws)
    return out


def eval_mask(m: Model, f: Formula, env: dict[str, int], prerel=None) -> int:
    """Core evaluator over bitmasks. env maps free variables to masks."""
    full = m.full_mask
    if prerel is None:
        prerel = compose_pre_rel_masks(m)
    pre, rel = m.pre_masks, m.rel_masks

    def go(g: Formula, env: dict[str, int]) -> int:
        if isinstance(g, Prop):
            return m.prop_mask(g.name)
        if isinstance(g, Var):
            try:
                return env[g.name]
            except KeyError:
                raise UnboundVariable(g.name) from None
        if isinstance(g, Bottom):
            return m.fallible_mask
        if isinstance(g, And):
            return go(g.left, env) & go(g.right, env)
        if isinstance(g, Or):
            return go(g.left, env) | go(g.right, env)
        if isinstance(g, Implies):
            a, b = go(g.left, env), go(g.right, env)
            bad = a & ~b
            return _all_succ(pre, bad, m.n)
        if isinstance(g, Box):
            body = go(g.body, env)
            return _all_succ(prerel, ~body & full, m.n)
        if isinstance(g, Dia):
            body = go(g.body, env)
            local = _some_succ(rel, body, m.n)
            if _dia_mutation:
                return local
            return _all_succ(pre, ~local & full, m.n)
        if isinstance(g, LocalDia):
            return _some_succ(rel, go(g.body, env), m.n)
        if isinstance(g, (Mu, Nu)):
            acc = 0 if isinstance(g, Mu) else full
            while True:
                nxt = go(g.body, {**env, g.var: acc})
                if nxt == acc:
                    return acc
                acc = nxt
        if isinstance(g, Query):
            raise ValueError("implication queries have no denotation; they are game positions")
        raise TypeError(f"not a formula: {g!r}")

    return go(f, env)


def _all_succ(succ_masks, bad, n):
    # worlds whose successors avoid `bad` entirely
    out = 0
    for i in range(n):
        if not succ_masks[i] & bad:
            out |= 1 << i
    return out


def _some_succ(succ_masks, good, n):
    out = 0
    for i in range(n):
        if succ_masks[i] & good:
            out |= 1 << i
    return out


def eval(m: Model, f, env=None) -> WorldSet:
    """Evaluate a formula (or analyzed sentence) to the set of worlds where it holds.

    Every free variable of the formula must be mapped by env (to a WorldSet,
    an iterable of world names, or a mask).  Query nodes are rejected.
    """
    if isinstance(f, WellNamedSentence):
        f = f.formula
    return WorldSet(m, eval_mask(m, f, _env_masks(m, env)))


def holds(m: Model, f, world: str, env=None) -> bool:
    return world in eval(m, f, env)


def approximant(m: Model, binder, alpha: int, env=None) -> WorldSet:
    """The alpha-th approximant of a fixpoint formula.

    Index 0 is the empty set for mu and all worlds for nu; each successor
    index applies the binder's operator once.  At alpha = |W| the chain has
    stabilized to the fixpoint.
    """
    if not isinstance(binder, (Mu, Nu)):
        raise TypeError("approximants are defined for fixpoint formulas")
    if alpha < 0:
        raise ValueError("approximant index must be a natural number")
    envm = _env_masks(m, env)
    acc = 0 if isinstance(binder, Mu) else m.full_mask
    prerel = compose_pre_rel_masks(m)
    for _ in range(alpha):
        acc = eval_mask(m, binder.body, {**envm, binder.var: acc}, prerel)
    return WorldSet(m, acc)


def operator_gamma(m: Model, binder, env=None):
    """The one-step operator of a fixpoint binder, as WorldSet -> WorldSet."""
    if not isinstance(binder, (Mu, Nu)):
        raise TypeError("the operator is defined for fixpoint formulas")
    envm = _env_masks(m, env)
    prerel = compose_pre_rel_masks(m)

    def gamma(ws) -> WorldSet:
        mask = ws.mask if isinstance(ws, WorldSet) else m.mask_of(ws)
        return WorldSet(m, eval_mask(m, binder.body, {**envm, binder.var: mask}, prerel))

    return gamma
