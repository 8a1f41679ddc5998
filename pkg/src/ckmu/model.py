"""Finite birelational models for CK, IK, and GK.

A model carries a set of worlds, a fallible subset where falsum holds, an
intuitionistic preorder `pre`, a modal relation `rel`, and a valuation.
Relations are explicit pair sets over opaque world identifiers; internally
each world gets an index and relations are mirrored as successor bitmasks,
which everything downstream (evaluation, games) computes on.

The JSON document format is::

    {"worlds": ["w", "v"], "fallible": [], "pre": [["w", "v"]],
     "rel": [["v", "u"]], "val": {"p": ["v"]}}
"""

from __future__ import annotations

import enum
import itertools
import json
import random
from dataclasses import dataclass


class LogicVariant(enum.Enum):
    CK = "ck"
    IK = "ik"
    GK = "gk"

    @classmethod
    def parse(cls, name: str) -> "LogicVariant":
        return cls(name.lower())


@dataclass(frozen=True)
class Violation:
    condition: str
    worlds: tuple[str, ...]

    def __str__(self):
        if self.worlds:
            return f"{self.condition} at {', '.join(self.worlds)}"
        return self.condition


class ValidationFailed(ValueError):
    def __init__(self, violations):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = list(violations)


class GenerationBudgetExceeded(RuntimeError):
    pass


def _pairs_to_masks(n, index, pairs, what):
    masks = [0] * n
    for a, b in pairs:
        if a not in index or b not in index:
            raise ValueError(f"{what} mentions unknown world in pair ({a}, {b})")
        masks[index[a]] |= 1 << index[b]
    return masks


class Model:
    """Immutable finite birelational structure.

    Construction checks only that every reference points at a declared
    world; the semantic conditions (preorder, heredity, fallible closure,
    and the IK/GK frame conditions) are reported by `validate`.
    """

    __slots__ = (
        "worlds",
        "fallible",
        "pre",
        "rel",
        "val",
        "index",
        "n",
        "pre_masks",
        "rel_masks",
        "fallible_mask",
        "val_masks",
    )

    def __init__(self, worlds, fallible, pre, rel, val):
        worlds = tuple(worlds)
        if not worlds:
            raise ValueError("a model needs at least one world")
        if len(set(worlds)) != len(worlds):
            raise ValueError("duplicate world identifiers")
        self.worlds = worlds
        self.index = {w: i for i, w in enumerate(worlds)}
        self.n = len(worlds)
        for w in fallible:
            if w not in self.index:
                raise ValueError(f"fallible mentions unknown world {w!r}")
        self.fallible = frozenset(fallible)
        self.pre = frozenset((a, b) for a, b in pre)
        self.rel = frozenset((a, b) for a, b in rel)
        self.val = {p: frozenset(ws) for p, ws in val.items()}
        self.pre_masks = _pairs_to_masks(self.n, self.index, self.pre, "pre")
        self.rel_masks = _pairs_to_masks(self.n, self.index, self.rel, "rel")
        mask = 0
        for w in self.fallible:
            mask |= 1 << self.index[w]
        self.fallible_mask = mask
        self.val_masks = {}
        for prop, ws in self.val.items():
            m = 0
            for w in ws:
                if w not in self.index:
                    raise ValueError(f"val({prop}) mentions unknown world {w!r}")
                m |= 1 << self.index[w]
            self.val_masks[prop] = m

    # -- helpers -------------------------------------------------------------

    @property
    def full_mask(self) -> int:
        return (1 << self.n) - 1

    def world_set(self, mask: int) -> frozenset[str]:
        return frozenset(self.worlds[i] for i in range(self.n) if mask >> i & 1)

    def mask_of(self, worlds) -> int:
        m = 0
        for w in worlds:
            m |= 1 << self.index[w]
        return m

    def prop_mask(self, name: str) -> int:
        # Unmapped propositions take the least CK-legal valuation, W-bottom.
        return self.val_masks.get(name, self.fallible_mask)

    def __eq__(self, other):
        if not isinstance(other, Model):
            return NotImplemented
        return (
            self.worlds == other.worlds
            and self.fallible == other.fallible
            and self.pre == other.pre
            and self.rel == other.rel
            and self.val == other.val
        )

    def __hash__(self):
        return hash((self.worlds, self.fallible, self.pre, self.rel))

    def __repr__(self):
        return f"Model(worlds={list(self.worlds)}, fallible={sorted(self.fallible)}, pre={sorted(self.pre)}, rel={sorted(self.rel)}, val={ {p: sorted(ws) for p, ws in sorted(self.val.items())} })"

    def to_document(self) -> dict:
        return {
            "worlds": list(self.worlds),
            "fallible": sorted(self.fallible),
            "pre": sorted(map(list, self.pre)),
            "rel": sorted(map(list, self.rel)),
            "val": {p: sorted(ws) for p, ws in sorted(self.val.items())},
        }


# ---------------------------------------------------------------------------
# Validation


def validate(m: Model, variant: LogicVariant = LogicVariant.CK) -> list[Violation]:
    """Return every violated model condition for the variant; empty if valid."""
    out = []
    n = m.n
    pre, rel = m.pre_masks, m.rel_masks
    for i in range(n):
        if not pre[i] >> i & 1:
            out.append(Violation("pre not reflexive", (m.worlds[i],)))
    for i in range(n):
        for j in range(n):
            if pre[i] >> j & 1 and pre[j] & ~pre[i]:
                k = (pre[j] & ~pre[i]).bit_length() - 1
                out.append(Violation("pre not transitive", (m.worlds[i], m.worlds[j], m.worlds[k])))
    for prop, mask in sorted(m.val_masks.items()):
        for i in range(n):
            if mask >> i & 1 and pre[i] & ~mask:
                j = (pre[i] & ~mask).bit_length() - 1
                out.append(Violation(f"heredity fails for {prop}", (m.worlds[i], m.worlds[j])))
        if m.fallible_mask & ~mask:
            i = (m.fallible_mask & ~mask).bit_length() - 1
            out.append(Violation(f"fallible world not in val({prop})", (m.worlds[i],)))
    for i in range(n):
        if m.fallible_mask >> i & 1:
            for name, succ in (("pre", pre), ("rel", rel)):
                if succ[i] & ~m.fallible_mask:
                    j = (succ[i] & ~m.fallible_mask).bit_length() - 1
                    out.append(
                        Violation(f"fallible not closed under {name}", (m.worlds[i], m.worlds[j]))
                    )
    if variant in (LogicVariant.IK, LogicVariant.GK):
        if m.fallible:
            out.append(Violation("fallible worlds must be empty", tuple(sorted(m.fallible))))
        # forward confluence: w <= w' and w R v need v' with w' R v', v <= v'
        for w in range(n):
            for w2 in range(n):
                if not pre[w] >> w2 & 1:
                    continue
                for v in range(n):
                    if not rel[w] >> v & 1:
                        continue
                    if not any(rel[w2] >> v2 & 1 and pre[v] >> v2 & 1 for v2 in range(n)):
                        out.append(
                            Violation(
                                "not forward confluent", (m.worlds[w], m.worlds[w2], m.worlds[v])
                            )
                        )
        # backward confluence: w R v <= v' needs w' with w <= w' R v'
        for w in range(n):
            for v in range(n):
                if not rel[w] >> v & 1:
                    continue
                for v2 in range(n):
                    if not pre[v] >> v2 & 1:
                        continue
                    if not any(pre[w] >> w2 & 1 and rel[w2] >> v2 & 1 for w2 in range(n)):
                        out.append(
                            Violation(
                                "not backward confluent", (m.worlds[w], m.worlds[v], m.worlds[v2])
                            )
                        )
    if variant is LogicVariant.GK:
        for w in range(n):
            for v in range(n):
                for u in range(v + 1, n):
                    if pre[w] >> v & 1 and pre[w] >> u & 1:
                        if not (pre[v] >> u & 1 or pre[u] >> v & 1):
                            out.append(
                                Violation(
                                    "not locally linear", (m.worlds[w], m.worlds[v], m.worlds[u])
                                )
                            )
    return out


# ---------------------------------------------------------------------------
# Closure of raw documents


def _transitive_closure(masks):
    n = len(masks)
    masks = list(masks)
    changed = True
    while changed:
        changed = False
        for i in range(n):
            acc = masks[i]
            scan = acc
            while scan:
                j = scan & -scan
                acc |= masks[j.bit_length() - 1]
                scan &= scan - 1
            if acc != masks[i]:
                masks[i] = acc
                changed = True
    return masks


def close(
    worlds,
    fallible=(),
    pre=(),
    rel=(),
    val=None,
    *,
    close_pre: bool = True,
    close_heredity: bool = True,
    close_fallible: bool = True,
    variant: LogicVariant = LogicVariant.CK,
) -> Model:
    """Build a Model from raw components, applying convenience closures.

    In order: reflexive-transitive closure of pre, heredity closure of the
    valuation along pre, addition of fallible worlds to every valuation
    entry, closure of the fallible set under pre and rel.  The pass repeats
    until nothing changes, then the result is validated for the variant
    (ValidationFailed on residual violations, e.g. IK confluence, which is
    never closed automatically).
    """
    m = Model(worlds, fallible, pre, rel, val or {})
    n = m.n
    pre_masks = list(m.pre_masks)
    rel_masks = m.rel_masks
    fall = m.fallible_mask
    vals = dict(m.val_masks)

    if close_pre:
        for i in range(n):
            pre_masks[i] |= 1 << i
        pre_masks = _transitive_closure(pre_masks)

    changed = True
    while changed:
        changed = False
        if close_heredity:
            for p in vals:
                acc = vals[p]
                for i in range(n):
                    if acc >> i & 1:
                        acc |= pre_masks[i]
                if acc != vals[p]:
                    vals[p] = acc
                    changed = True
        if close_fallible:
            for p in vals:
                if fall & ~vals[p]:
                    vals[p] |= fall
                    changed = True
            acc = fall
            for i in range(n):
                if acc >> i & 1:
                    acc |= pre_masks[i] | rel_masks[i]
            if acc != fall:
                fall = acc
                changed = True

    def unmask(mask):
        return [m.worlds[i] for i in range(n) if mask >> i & 1]

    pre_pairs = [(m.worlds[i], w) for i in range(n) for w in unmask(pre_masks[i])]
    out = Model(m.worlds, unmask(fall), pre_pairs, m.rel, {p: unmask(v) for p, v in vals.items()})
    violations = validate(out, variant)
    if violations:
        raise ValidationFailed(violations)
    return out


def load_document(
    doc,
    *,
    close_pre: bool = False,
    close_heredity: bool = False,
    close_fallible: bool = False,
    variant: LogicVariant = LogicVariant.CK,
) -> Model:
    """Load a model from a JSON document (dict, JSON text, or file path).

    Closure flags default off for library use; the CLI turns them on.
    """
    if isinstance(doc, str):
        if doc.lstrip().startswith("{"):
            doc = json.loads(doc)
        else:
            with open(doc, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("model document must be a JSON object")
    unknown = set(doc) - {"worlds", "fallible", "pre", "rel", "val"}
    if unknown:
        raise ValueError(f"unknown model document keys: {sorted(unknown)}")
    return close(
        doc.get("worlds", []),
        doc.get("fallible", []),
        [tuple(p) for p in doc.get("pre", [])],
        [tuple(p) for p in doc.get("rel", [])],
        doc.get("val", {}),
        close_pre=close_pre,
        close_heredity=close_heredity,
        close_fallible=close_fallible,
        variant=variant,
    )


def compose_pre_rel(m: Model) -> frozenset[tuple[str, str]]:
    """The composed relation: w (pre;rel) u iff some v has w pre v rel u."""
    masks = compose_pre_rel_masks(m)
    return frozenset(
        (m.worlds[w], m.worlds[u]) for w in range(m.n) for u in range(m.n) if masks[w] >> u & 1
    )


def compose_pre_rel_masks(m: Model) -> list[int]:
    out = [0] * m.n
    for w in range(m.n):
        acc = 0
        scan = m.pre_masks[w]
        while scan:
            v = (scan & -scan).bit_length() - 1
            acc |= m.rel_masks[v]
            scan &= scan - 1
        out[w] = acc
    return out


# ---------------------------------------------------------------------------
# Enumeration


def _preorder_masks(n):
    """All reflexive-transitive successor-mask tuples over n worlds."""
    diag = [1 << i for i in range(n)]
    offdiag = [(i, j) for i in range(n) for j in range(n) if i != j]
    out = []
    for bits in range(1 << len(offdiag)):
        masks = list(diag)
        for k, (i, j) in enumerate(offdiag):
            if bits >> k & 1:
                masks[i] |= 1 << j
        ok = True
        for i in range(n):
            acc = masks[i]
            scan = acc
            while scan:
                acc |= masks[(scan & -scan).bit_length() - 1]
                scan &= scan - 1
            if acc != masks[i]:
                ok = False
                break
        if ok:
            out.append(tuple(masks))
    return out


def _masks_to_pairs(worlds, masks, skip_diag=False):
    return [
        (worlds[i], worlds[j])
        for i in range(len(worlds))
        for j in range(len(worlds))
        if masks[i] >> j & 1 and not (skip_diag and i == j)
    ]


def enumerate_model_masks(max_worlds: int, num_props: int, variant=LogicVariant.CK):
    """Yield (n, pre_masks, rel_masks, fallible_mask, val_masks_tuple).

    The compact form of `enumerate_models`, used by the exhaustive test
    sweeps; same order, no Model construction.
    """
    constrained = variant in (LogicVariant.IK, LogicVariant.GK)
    for n in range(1, max_worlds + 1):
        full = (1 << n) - 1
        rel_space = [
            tuple((bits >> (i * n)) & full for i in range(n)) for bits in range(1 << (n * n))
        ]
        for pre in _preorder_masks(n):
            if variant is LogicVariant.GK and not _locally_linear_masks(n, pre):
                continue
            up_sets = [
                s
                for s in range(1 << n)
                if all(not (s >> i & 1) or (pre[i] & ~s) == 0 for i in range(n))
            ]
            for rel in rel_space:
                if constrained:
                    if not _confluent_masks(n, pre, rel):
                        continue
                    fallible_choices = [0]
                else:
                    fallible_choices = [
                        fall
                        for fall in range(1 << n)
                        if all(
                            not (fall >> i & 1) or ((pre[i] | rel[i]) & ~fall) == 0
                            for i in range(n)
                        )
                    ]
                for fall in fallible_choices:
                    vals_space = [s for s in up_sets if (s & fall) == fall]
                    for vals in itertools.product(vals_space, repeat=num_props):
                        yield n, pre, rel, fall, vals


def _confluent_masks(n, pre, rel):
    for w in range(n):
        for w2 in range(n):
            if pre[w] >> w2 & 1:
                for v in range(n):
                    if rel[w] >> v & 1 and not (rel[w2] & pre[v]):
                        return False
    for w in range(n):
        for v in range(n):
            if rel[w] >> v & 1:
                for v2 in range(n):
                    if pre[v] >> v2 & 1:
                        if not any(
                            pre[w] >> w2 & 1 and rel[w2] >> v2 & 1 for w2 in range(n)
                        ):
                            return False
    return True


def _locally_linear_masks(n, pre):
    for w in range(n):
        for v in range(n):
            for u in range(v + 1, n):
                if pre[w] >> v & 1 and pre[w] >> u & 1:
                    if not (pre[v] >> u & 1 or pre[u] >> v & 1):
                        return False
    return True


def model_from_masks(n, pre, rel, fall, vals, prop_names):
    worlds = tuple(f"w{i}" for i in range(n))
    return Model(
        worlds,
        [worlds[i] for i in range(n) if fall >> i & 1],
        _masks_to_pairs(worlds, pre),
        _masks_to_pairs(worlds, rel),
        {p: [worlds[i] for i in range(n) if vals[k] >> i & 1] for k, p in enumerate(prop_names)},
    )


def enumerate_models(max_worlds: int, props, variant=LogicVariant.CK):
    """Yield every valid model (for the variant) with up to max_worlds worlds.

    No isomorphism reduction; deterministic order.  Worlds are named
    w0, w1, ...  Intended for exhaustive testing at small bounds.
    """
    props = list(props)
    for n, pre, rel, fall, vals in enumerate_model_masks(max_worlds, len(props), variant):
        yield model_from_masks(n, pre, rel, fall, vals, props)


# ---------------------------------------------------------------------------
# Random generation


def random_model(
    seed,
    n_worlds: int = 3,
    pre_density: float = 0.25,
    rel_density: float = 0.35,
    fallible_density: float = 0.15,
    props=("p",),
    variant=LogicVariant.CK,
    max_tries: int = 5000,
) -> Model:
    """Sample a valid model of the variant, reproducibly from the seed.

    Sampling draws raw edges and closes them; for IK/GK the draw is
    rejected until the confluence (and, for GK, local linearity) conditions
    hold.  Raises GenerationBudgetExceeded when max_tries rejections pass.
    """
    rng = random.Random(seed)
    worlds = [f"w{i}" for i in range(n_worlds)]
    constrained = variant in (LogicVariant.IK, LogicVariant.GK)
    for _ in range(max_tries):
        pre = [
            (a, b)
            for a in worlds
            for b in worlds
            if a != b and rng.random() < pre_density
        ]
        rel = [(a, b) for a in worlds for b in worlds if rng.random() < rel_density]
        fallible = (
            [] if constrained else [w for w in worlds if rng.random() < fallible_density]
        )
        val = {p: [w for w in worlds if rng.random() < 0.5] for p in props}
        try:
            m = close(worlds, fallible, pre, rel, val, variant=LogicVariant.CK)
        except ValidationFailed:
            continue
        if not constrained:
            return m
        if not validate(m, variant):
            return m
    raise GenerationBudgetExceeded(
        f"no valid {variant.value} model found in {max_tries} draws (seed {seed!r})"
    )
