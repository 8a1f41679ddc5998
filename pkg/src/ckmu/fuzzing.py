"""Randomized differential testing across the three engines.

Cases pair a random model with a random well-named formula; the
denotational evaluator and the game solver must agree on every world, and
prover verdicts must be consistent with the evaluator (a proved goal holds
everywhere on the sampled model, a refutation's countermodel is confirmed).
Discrepancies are shrunk by greedily dropping worlds before reporting.

`run_fuzz(..., mutate_dia=True)` turns on a deliberate bug in the diamond
clause of the evaluator to confirm the harness would notice one.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from ckmu import denotational
from ckmu.denotational import eval_mask
from ckmu.game import PLAYER_I, build_full_arena, solve, Position
from ckmu.model import LogicVariant, Model, ValidationFailed, close, random_model, validate
from ckmu.proofsys import Proved, Refuted, prove
from ckmu.syntax import (
    And,
    Bottom,
    Box,
    Dia,
    Implies,
    Mu,
    Nu,
    Or,
    Prop,
    Var,
    WellNamedSentence,
    analyze,
    pretty,
)


def random_formula(rng: random.Random, props=("p", "q"), max_depth: int = 5, fixpoints=True):
    """A random sentence that `analyze` accepts (well-named by construction).

    Each bound variable is used at most once (shared used-set across
    branches), only under a modality introduced inside its binder, and only
    at an even number of implication antecedents.
    """
    counter = [0]
    used: set[str] = set()

    # ctx entries: (name, guarded, antecedent_flips), copied per branch
    def gen(depth: int, ctx: tuple[tuple[str, bool, int], ...]):
        usable = [
            name for name, guarded, flips in ctx if name not in used and guarded and flips % 2 == 0
        ]
        atoms = ["prop", "false", "true"] + (["var"] * 2 if usable else [])
        if depth <= 0:
            choice = rng.choice(atoms)
        else:
            choice = rng.choice(
                atoms
                + ["and", "or", "imp", "imp", "box", "box", "dia", "dia", "neg"]
                + (["mu", "nu"] * 2 if fixpoints else [])
            )
        if choice == "prop":
            return Prop(rng.choice(props))
        if choice == "false":
            return Bottom()
        if choice == "true":
            return Implies(Bottom(), Bottom())
        if choice == "var":
            name = rng.choice(usable)
            used.add(name)
            return Var(name)
        if choice in ("box", "dia"):
            inner = tuple((n, True, fl) for n, _, fl in ctx)
            body = gen(depth - 1, inner)
            return Box(body) if choice == "box" else Dia(body)
        if choice == "neg":
            inner = tuple((n, g, fl + 1) for n, g, fl in ctx)
            return Implies(gen(depth - 1, inner), Bottom())
        if choice in ("and", "or", "imp"):
            if choice == "imp":
                left = gen(depth - 1, tuple((n, g, fl + 1) for n, g, fl in ctx))
            else:
                left = gen(depth - 1, ctx)
            right = gen(depth - 1, ctx)
            return {"and": And, "or": Or, "imp": Implies}[choice](left, right)
        name = f"X{counter[0]}"
        counter[0] += 1
        body = gen(depth - 1, ctx + ((name, False, 0),))
        return Mu(name, body) if choice == "mu" else Nu(name, body)

    return gen(max_depth, ())


@dataclass
class Discrepancy:
    kind: str
    formula: str
    model_doc: dict
    world: str
    detail: str = ""


@dataclass
class FuzzReport:
    variant: str
    cases: int = 0
    eval_game_checks: int = 0
    prover_checks: int = 0
    proved: int = 0
    refuted: int = 0
    unknown: int = 0
    discrepancies: list[Discrepancy] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.discrepancies


def _winner_bits(m: Model, sentence: WellNamedSentence) -> int:
    arena = build_full_arena(m, sentence)
    sol = solve(arena)
    bits = 0
    for i, w in enumerate(m.worlds):
        if sol.winner_at(arena.index[Position(w, sentence.formula, "V")]) == PLAYER_I:
            bits |= 1 << i
    return bits


def _shrink_model(m: Model, predicate) -> Model:
    """Greedy: drop worlds while the predicate still holds."""
    current = m
    changed = True
    while changed and current.n > 1:
        changed = False
        for drop in current.worlds:
            keep = [w for w in current.worlds if w != drop]
            try:
                cand = close(
                    keep,
                    [w for w in current.fallible if w != drop],
                    [(a, b) for a, b in current.pre if drop not in (a, b)],
                    [(a, b) for a, b in current.rel if drop not in (a, b)],
                    {p: [w for w in ws if w != drop] for p, ws in current.val.items()},
                )
            except ValidationFailed:
                continue
            if predicate(cand):
                current = cand
                changed = True
                break
    return current


def run_fuzz(
    seed: int,
    cases: int,
    variant: LogicVariant = LogicVariant.CK,
    *,
    check_prover: bool = True,
    prover_max_nodes: int = 300,
    prover_max_labels: int = 14,
    max_worlds: int = 4,
    mutate_dia: bool = False,
    max_reported: int = 10,
) -> FuzzReport:
    """Differential fuzz run; deterministic in the seed."""
    rng = random.Random(seed)
    report = FuzzReport(variant=variant.value)
    verdict_cache: dict[str, object] = {}
    old_mutation = denotational._dia_mutation
    denotational._dia_mutation = mutate_dia
    try:
        for _ in range(cases):
            report.cases += 1
            n = rng.randint(1, max_worlds)
            m = random_model(
                rng.randrange(2**31),
                n_worlds=n,
                pre_density=rng.choice([0.1, 0.25, 0.4]),
                rel_density=rng.choice([0.15, 0.3, 0.5]),
                fallible_density=rng.choice([0.0, 0.15]),
                props=("p", "q"),
                variant=variant,
            )
            f = random_formula(rng, max_depth=rng.randint(1, 5))
            sentence = analyze(f)
            denot = eval_mask(m, sentence.formula, {})
            game = _winner_bits(m, sentence)
            report.eval_game_checks += 1
            if denot != game:
                bad = _shrink_model(
                    m, lambda c: eval_mask(c, sentence.formula, {}) != _winner_bits(c, sentence)
                )
                report.discrepancies.append(
                    Discrepancy(
                        kind="eval/game",
                        formula=pretty(sentence.formula),
                        model_doc=bad.to_document(),
                        world="",
                        detail=f"eval={bin(eval_mask(bad, sentence.formula, {}))} game={bin(_winner_bits(bad, sentence))}",
                    )
                )
                if len(report.discrepancies) >= max_reported:
                    break
                continue
            if not check_prover:
                continue
            key = pretty(sentence.formula)
            if key not in verdict_cache:
                verdict_cache[key] = prove(
                    sentence, variant, max_nodes=prover_max_nodes, max_labels=prover_max_labels
                )
            verdict = verdict_cache[key]
            report.prover_checks += 1
            if isinstance(verdict, Proved):
                report.proved += 1
                if denot != m.full_mask:
                    bad = _shrink_model(m, lambda c: eval_mask(c, sentence.formula, {}) != c.full_mask)
                    report.discrepancies.append(
                        Discrepancy(
                            kind="proved-but-falsified",
                            formula=key,
                            model_doc=bad.to_document(),
                            world="",
                        )
                    )
            elif isinstance(verdict, Refuted):
                report.refuted += 1
                ok = (
                    not validate(verdict.model, variant)
                    and not eval_mask(verdict.model, sentence.formula, {})
                    >> verdict.model.index[verdict.world]
                    & 1
                )
                if not ok:
                    report.discrepancies.append(
                        Discrepancy(
                            kind="refutation-unconfirmed",
                            formula=key,
                            model_doc=verdict.model.to_document(),
                            world=verdict.world,
                        )
                    )
            else:
                report.unknown += 1
            if len(report.discrepancies) >= max_reported:
                break
    finally:
        denotational._dia_mutation = old_mutation
    return report
