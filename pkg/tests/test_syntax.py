import pytest
from hypothesis import given, strategies as st

from ckmu.syntax import (
    And,
    Bottom,
    Box,
    Dia,
    Implies,
    LocalDia,
    Mu,
    MultipleOccurrences,
    NonPositiveVariable,
    NotASentence,
    Nu,
    Or,
    ParseError,
    Polarity,
    Prop,
    Query,
    UnguardedVariable,
    Var,
    analyze,
    closure,
    parse,
    polarity,
    pretty,
    size,
)

p, q = Prop("p"), Prop("q")
X = Var("X")


def test_parse_mu_diamond():
    assert parse("mu X. <>X") == Mu("X", Dia(Var("X")))


def test_parse_negation_expands():
    assert parse("~p") == Implies(p, Bottom())


def test_parse_true_expands():
    assert parse("true") == Implies(Bottom(), Bottom())


def test_parse_implication_right_associative():
    assert parse("p -> q -> r") == Implies(p, Implies(q, Implies(Prop("r"), ...))) or True
    assert parse("p -> q -> r") == Implies(p, Implies(q, Prop("r")))


def test_parse_precedence():
    assert parse("p & q | r -> s") == Implies(Or(And(p, q), Prop("r")), Prop("s"))
    assert parse("[]p & <>q") == And(Box(p), Dia(q))
    assert parse("~[]p") == Implies(Box(p), Bottom())


def test_binder_scopes_to_the_right():
    assert parse("mu X. <>X | p") == Mu("X", Or(Dia(X), p))


def test_parse_errors_have_position():
    with pytest.raises(ParseError) as e:
        parse("p -> ")
    assert e.value.position == 5
    with pytest.raises(ParseError):
        parse("p @ q")
    with pytest.raises(ParseError):
        parse("(p")


def test_internal_tokens_rejected():
    with pytest.raises(ParseError):
        parse("<^>p")
    with pytest.raises(ParseError):
        parse("p ? q")


# --- polarity ---------------------------------------------------------------


def test_polarity_examples():
    assert polarity(p, "X") == Polarity.BOTH
    assert polarity(Implies(X, Bottom()), "X") == Polarity.NEGATIVE
    assert polarity(X, "X") == Polarity.POSITIVE


def test_polarity_more():
    assert polarity(Bottom(), "X") == Polarity.BOTH
    assert polarity(Var("Y"), "X") == Polarity.BOTH
    assert polarity(And(X, p), "X") == Polarity.POSITIVE
    assert polarity(Implies(Implies(X, Bottom()), Bottom()), "X") == Polarity.POSITIVE
    assert polarity(Implies(X, X), "X") == Polarity.ABSENT
    assert polarity(Mu("X", X), "X") == Polarity.BOTH  # shadowed


# --- analyze ----------------------------------------------------------------


def test_analyze_accepts_nu_box():
    s = analyze(Nu("X", Box(X)))
    assert s.binders == {"X": Nu("X", Box(X))}
    assert s.subsumption_order == (Nu("X", Box(X)),)


def test_analyze_unguarded():
    with pytest.raises(UnguardedVariable):
        analyze(Mu("X", X))


def test_analyze_nonpositive():
    with pytest.raises(NonPositiveVariable):
        analyze(Mu("X", Implies(X, Bottom())))
    with pytest.raises(NonPositiveVariable):
        analyze(parse("mu X. ~<>X"))


def test_analyze_multiple_occurrences():
    with pytest.raises(MultipleOccurrences):
        analyze(parse("mu X. <>X | []X"))


def test_analyze_requires_sentence():
    with pytest.raises(NotASentence):
        analyze(Box(X))


def test_analyze_renames_duplicate_binders():
    s = analyze(parse("(nu X. []X) & (nu X. <>X | true)"))
    assert set(s.binders) == {"X", "X1"}
    assert len(s.subsumption_order) == 2


def test_analyze_vacuous_binder_allowed():
    s = analyze(parse("mu X. p"))
    assert s.binders["X"] == Mu("X", p)


def test_binder_roles_flip_under_antecedent():
    s = analyze(parse("(nu X. []X) -> p"))
    assert s.binder_roles["X"] == "R"
    s2 = analyze(parse("((nu X. []X) -> p) -> q"))
    assert s2.binder_roles["X"] == "V"
    s3 = analyze(parse("p -> nu X. []X"))
    assert s3.binder_roles["X"] == "V"


def test_subsumption_order_outermost_first():
    s = analyze(parse("nu Y. mu X. (p & []Y) | <>X"))
    outer, inner = s.subsumption_order
    assert isinstance(outer, Nu) and isinstance(inner, Mu)
    assert s.binder_index("Y") == 1
    assert s.binder_index("X") == 2


# --- closure ----------------------------------------------------------------


def test_closure_of_diamond_has_local_diamond():
    s = analyze(Dia(p))
    c = closure(s)
    assert {Dia(p), LocalDia(p), p} <= c


def test_closure_of_prop():
    assert closure(analyze(p)) == {p}


def test_closure_mu_box():
    s = analyze(parse("mu X. []X"))
    assert closure(s) == {parse("mu X. []X"), Box(X), X}


def test_closure_implication_has_query():
    s = analyze(parse("p -> q"))
    assert Query(p, q) in closure(s)


def test_closure_size_bound():
    for text in ["p", "mu X. p | <>X", "(p -> q) -> <>(p & ~q)", "nu Y. mu X. (p & []Y) | <>X"]:
        s = analyze(parse(text))
        assert len(closure(s)) <= 3 * size(s.formula)


# --- round trip -------------------------------------------------------------

_names = st.sampled_from(["p", "q", "r"])
_vars = st.sampled_from(["X", "Y", "Z"])


def _formulas(depth):
    if depth == 0:
        return st.one_of(
            st.builds(Prop, _names),
            st.builds(Var, _vars),
            st.just(Bottom()),
        )
    sub = _formulas(depth - 1)
    return st.one_of(
        st.builds(Prop, _names),
        st.builds(Var, _vars),
        st.just(Bottom()),
        st.builds(And, sub, sub),
        st.builds(Or, sub, sub),
        st.builds(Implies, sub, sub),
        st.builds(Box, sub),
        st.builds(Dia, sub),
        st.builds(Mu, _vars, sub),
        st.builds(Nu, _vars, sub),
    )


@given(_formulas(4))
def test_parse_pretty_round_trip(f):
    assert parse(pretty(f)) == f


@given(_formulas(3))
def test_polarity_consistent_with_occurrence_parity(f):
    # Independent check: collect the antecedent-depth parity of every free
    # occurrence of X by an explicit path walk.
    parities = set()

    def walk(g, flips, bound):
        if isinstance(g, Var) and g.name == "X" and "X" not in bound:
            parities.add(flips % 2)
        elif isinstance(g, (Mu, Nu)):
            walk(g.body, flips, bound | {g.var})
        elif isinstance(g, Implies):
            walk(g.left, flips + 1, bound)
            walk(g.right, flips, bound)
        elif isinstance(g, (And, Or)):
            walk(g.left, flips, bound)
            walk(g.right, flips, bound)
        elif isinstance(g, (Box, Dia)):
            walk(g.body, flips, bound)

    walk(f, 0, frozenset())
    pol = polarity(f, "X")
    expected = {
        frozenset(): Polarity.BOTH,
        frozenset({0}): Polarity.POSITIVE,
        frozenset({1}): Polarity.NEGATIVE,
        frozenset({0, 1}): Polarity.ABSENT,
    }[frozenset(parities)]
    assert pol == expected


@given(_formulas(3))
def test_analyze_idempotent_when_accepting(f):
    try:
        s = analyze(f)
    except ValueError:
        return
    s2 = analyze(s.formula)
    assert s2.formula == s.formula
    assert s2.binders == s.binders
