import pytest

from ckmu.denotational import eval as deval, eval_mask
from ckmu.model import LogicVariant, enumerate_models, validate
from ckmu.proofsys import (
    BackEdge,
    ExtractionUnsound,
    FreshnessViolation,
    MalformedTraceMap,
    PrincipalMissing,
    ProofGraph,
    ProofNode,
    Proved,
    Refuted,
    RuleInstance,
    RuleNotInVariant,
    Sequent,
    SequentNotSaturated,
    Unknown,
    apply_rule,
    axiom_name,
    check_progress,
    extract_countermodel,
    is_saturated,
    premises_with_minors,
    proof_from_text,
    proof_to_text,
    prove,
)
from ckmu.syntax import And, Bottom, Box, Implies, Prop, analyzed, parse

CK, IK, GK = LogicVariant.CK, LogicVariant.IK, LogicVariant.GK
p, q = Prop("p"), Prop("q")


def seq(pre=(), rel=(), left=(), right=()):
    return Sequent(frozenset(pre), frozenset(rel), frozenset(left), frozenset(right))


GOAL = analyzed("[](p -> q) -> p")  # generic sentence for rule tests


# --- rules -------------------------------------------------------------------


def test_bot_axiom_zero_premises():
    s = seq(left=[("x", Bottom())], right=[("x", p)])
    assert axiom_name(s, CK) == "ax_bot"
    assert apply_rule(s, RuleInstance("ax_bot"), GOAL, CK) == []


def test_imp_r_premise():
    s = seq(right=[("x", Implies(p, q))])
    r = RuleInstance("imp_r", ("x", Implies(p, q)), fresh=("y",))
    [prem] = apply_rule(s, r, GOAL, CK)
    assert ("x", "y") in prem.pre
    assert ("y", p) in prem.left and ("y", q) in prem.right
    assert ("x", Implies(p, q)) in prem.right  # principal retained


def test_box_l_adds_all_successors():
    f = Box(p)
    s = seq(rel=[("x", "y1"), ("x", "y2")], left=[("x", f)])
    [prem] = apply_rule(s, RuleInstance("box_l", ("x", f)), GOAL, CK)
    assert ("y1", p) in prem.left and ("y2", p) in prem.left


def test_premises_contain_conclusion():
    # invertibility in the weakening sense: every rule is cumulative
    f = parse("[](p -> q)")
    s = seq(
        pre=[("x", "y")],
        rel=[("x", "z")],
        left=[("x", f), ("x", parse("p & q")), ("x", parse("p | q"))],
        right=[("y", parse("p -> q")), ("y", parse("<>p")), ("x", p)],
    )
    sent = analyzed("[](p->q) & (p & q) & (p | q) -> ((p -> q) | <>p | p)")
    rules = [
        RuleInstance("pres", ("x", f), args=("y",)),
        RuleInstance("and_l", ("x", parse("p & q"))),
        RuleInstance("or_l", ("x", parse("p | q"))),
        RuleInstance("box_l", ("x", f)),
        RuleInstance("imp_r", ("y", parse("p -> q")), fresh=("w",)),
        RuleInstance("dia_r", ("y", parse("<>p")), fresh=("w",)),
    ]
    for r in rules:
        for prem in apply_rule(s, r, sent, CK):
            assert s.pre <= prem.pre and s.rel <= prem.rel
            assert s.left <= prem.left and s.right <= prem.right


def test_principal_missing():
    s = seq(right=[("x", p)])
    with pytest.raises(PrincipalMissing):
        apply_rule(s, RuleInstance("imp_r", ("x", Implies(p, q)), fresh=("y",)), GOAL, CK)


def test_freshness_violation():
    s = seq(right=[("x", Implies(p, q))])
    with pytest.raises(FreshnessViolation):
        apply_rule(s, RuleInstance("imp_r", ("x", Implies(p, q)), fresh=("x",)), GOAL, CK)


def test_rule_not_in_variant():
    s = seq(pre=[("x", "y"), ("x", "z")])
    with pytest.raises(RuleNotInVariant):
        apply_rule(s, RuleInstance("lin", args=("x", "y", "z")), GOAL, IK)
    # and fine in GK
    assert len(apply_rule(s, RuleInstance("lin", args=("x", "y", "z")), GOAL, GK)) == 2


# --- saturation ----------------------------------------------------------------


def test_saturation_clause_4():
    s = seq(left=[("x", And(p, q))])
    witnesses = is_saturated(s, GOAL, CK)
    assert any(w.clause == "4" for w in witnesses)


def test_saturation_clause_1():
    s = seq(pre=[("x", "y"), ("y", "z")])
    witnesses = is_saturated(s, GOAL, CK)
    assert any(w.clause == "1" for w in witnesses)


def test_empty_sequent_saturated():
    assert is_saturated(seq(), GOAL, CK) == []


def test_modal_relation_transitivity_not_required():
    s = seq(rel=[("x", "y"), ("y", "z")])
    assert is_saturated(s, GOAL, CK) == []


# --- prove: theorems ------------------------------------------------------------


def test_prove_false_implies_p():
    assert isinstance(prove("false -> p"), Proved)


def test_prove_k_box():
    v = prove("[](p->q) -> ([]p -> []q)")
    assert isinstance(v, Proved)
    assert check_progress(v.graph).accepted


def test_prove_nu_box_has_backedge():
    v = prove("nu X. []X")
    assert isinstance(v, Proved)
    assert any(n.rule == "wk" for n in v.graph.nodes)
    assert check_progress(v.graph).accepted


def test_prove_gk_linearity_only_in_gk():
    assert isinstance(prove("(p->q) | (q->p)", GK), Proved)
    v = prove("(p->q) | (q->p)", IK)
    assert isinstance(v, Refuted)
    assert len(v.model.worlds) == 3  # the fork countermodel
    assert validate(v.model, IK) == []


def test_prove_dia_distribution_ik_vs_ck():
    assert isinstance(prove("<>(p|q) -> (<>p | <>q)", IK), Proved)
    v = prove("<>(p|q) -> (<>p | <>q)", CK)
    assert isinstance(v, Refuted)


# --- prove: refutations -----------------------------------------------------------


def test_refute_excluded_middle():
    v = prove("p | ~p")
    assert isinstance(v, Refuted)
    assert len(v.model.worlds) == 2
    assert v.world not in deval(v.model, parse("p | ~p"))
    assert v.moves  # a refuter move table comes along


def test_refute_mu_box_via_cycle():
    v = prove("mu X. []X")
    assert isinstance(v, Refuted)
    assert v.world not in deval(v.model, parse("mu X. []X"))


def test_refutations_are_eval_checked():
    for text, variant in [
        ("p", CK),
        ("false", CK),
        ("<>false -> false", CK),
        ("~~p -> p", CK),
        ("((p->q)->p)->p", CK),
        ("mu X. p | <>X", CK),
        ("nu X. <>X", CK),
    ]:
        v = prove(text, variant)
        assert isinstance(v, Refuted), text
        assert validate(v.model, variant) == []
        assert not eval_mask(v.model, analyzed(text).formula, {}) >> v.model.index[v.world] & 1


def test_unknown_on_tiny_budget():
    v = prove("[](p->q) -> ([]p -> []q)", max_nodes=2)
    assert isinstance(v, Unknown)
    assert v.expansions <= 2


# --- soundness against small models ------------------------------------------------


def test_proved_goals_have_no_small_countermodels():
    goals = ["[](p->q) -> ([]p -> []q)", "nu X. []X", "~(p & ~p)"]
    models = list(enumerate_models(2, ["p", "q"], CK))
    for text in goals:
        assert isinstance(prove(text), Proved)
        s = analyzed(text)
        for m in models:
            assert eval_mask(m, s.formula, {}) == m.full_mask, (text, m)


# --- progress checker ---------------------------------------------------------------


def _cyclic_graph(goal_text, eta_rule):
    """Hand-built unfold/box/regenerate cycle for nu X.[]X or mu X.[]X."""
    sent = analyzed(goal_text)
    goal = sent.formula
    boxx = goal.body
    x = boxx.body
    s0 = Sequent.root("x0", goal)
    n0 = ProofNode(s0, rule="eta_r", instance=RuleInstance("eta_r", ("x0", goal)), premises=[1])
    s1 = s0.extend(right=[("x0", boxx)])
    n1 = ProofNode(
        s1,
        rule="box_r",
        instance=RuleInstance("box_r", ("x0", boxx), fresh=("x1", "x2")),
        premises=[2],
        parent=0,
    )
    s2 = s1.extend(pre=[("x0", "x1")], rel=[("x1", "x2")], right=[("x2", x)])
    n2 = ProofNode(
        s2, rule="regen_r", instance=RuleInstance("regen_r", ("x2", x)), premises=[3], parent=1
    )
    s3 = s2.extend(right=[("x2", goal)])
    n3 = ProofNode(
        s3,
        rule="wk",
        instance=RuleInstance("wk"),
        premises=[BackEdge(0, (("x0", "x2"),))],
        parent=2,
    )
    return ProofGraph(sent, CK, [n0, n1, n2, n3])


def test_progress_accepts_nu_cycle():
    assert check_progress(_cyclic_graph("nu X. []X", "eta_r")).accepted


def test_progress_rejects_mu_cycle_with_lasso():
    result = check_progress(_cyclic_graph("mu X. []X", "eta_r"))
    assert not result.accepted
    assert result.lasso_cycle and result.lasso_cycle[0] == result.lasso_cycle[-1]
    assert result.lasso_stem is not None


def test_progress_accepts_acyclic():
    v = prove("p -> p")
    assert isinstance(v, Proved)
    assert check_progress(v.graph).accepted


def test_malformed_graph_rejected():
    g = _cyclic_graph("nu X. []X", "eta_r")
    g.nodes[2].premises = [BackEdge(0, (("x0", "x2"),))]  # back-edge without weakening node
    with pytest.raises(MalformedTraceMap):
        check_progress(g)


# --- extraction -----------------------------------------------------------------


def test_extract_simple():
    sent = analyzed("p")
    s = Sequent.root("x0", sent.formula)
    model, world = extract_countermodel(s, sent, CK)
    assert world == "x0"
    assert model.val["p"] == frozenset()
    assert not eval_mask(model, sent.formula, {})


def test_extract_requires_saturation():
    sent = analyzed("p & q")
    s = Sequent.root("x0", sent.formula)
    with pytest.raises(SequentNotSaturated):
        extract_countermodel(s, sent, CK)


def test_extract_rejects_axiom():
    sent = analyzed("p")
    s = seq(left=[("x0", p)], right=[("x0", p)])
    with pytest.raises(SequentNotSaturated):
        extract_countermodel(s, sent, CK)


def test_extract_unsound_surfaces(monkeypatch):
    # the eval double-check fires even if the saturation check is fooled
    import ckmu.proofsys as proofsys

    sent = analyzed("true")
    s = Sequent.root("x0", sent.formula)
    monkeypatch.setattr(proofsys, "saturation_witnesses", lambda *a, **k: [])
    with pytest.raises(ExtractionUnsound):
        extract_countermodel(s, sent, CK)


# --- serialization -----------------------------------------------------------------


def test_proof_round_trip():
    for text in ["nu X. []X", "[](p->q) -> ([]p -> []q)", "nu X. p -> []X"]:
        v = prove(text)
        assert isinstance(v, Proved)
        blob = proof_to_text(v.graph)
        g2 = proof_from_text(blob)
        assert check_progress(g2).accepted
        assert proof_to_text(g2) == blob


def test_proof_from_text_rejects_garbage():
    with pytest.raises(MalformedTraceMap):
        proof_from_text("not a proof\n")
