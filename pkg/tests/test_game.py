import itertools

import pytest
from hypothesis import given, settings, strategies as st

from ckmu.denotational import eval
from ckmu.game import (
    PLAYER_I,
    PLAYER_II,
    IncompleteStrategy,
    build_arena,
    build_full_arena,
    check_equivalence,
    solve,
    verify_strategy,
)
from ckmu.model import LogicVariant, close, enumerate_models, random_model
from ckmu.game import Position
from ckmu.syntax import LocalDia, parse, analyzed  # noqa: F401

CK = LogicVariant.CK


def arena_for(text, m, w):
    return build_arena(m, analyzed(text), w)


def test_single_position_true_prop():
    m = close(["w"], val={"p": ["w"]})
    a = arena_for("p", m, "w")
    assert a.size == 1
    assert a.owner_role[0] == "R"
    assert a.moves[0] == []
    sol = solve(a)
    assert sol.winner_at(a.initial) == PLAYER_I


def test_diamond_reaches_local_diamond():
    m = close(["w", "u"], rel=[("w", "u")], val={"p": ["u"]})
    a = arena_for("<>p", m, "w")
    labels = {(pos.world, str(pos.formula)) for pos in a.positions}
    assert ("w", "<>p") in labels
    assert ("w", "<^>p") in labels
    assert ("u", "p") in labels


def test_query_position_swaps_role():
    m = close(["v"], val={"p": ["v"]})
    a = arena_for("p -> p", m, "v")
    q = [pos for pos in a.positions if "?" in str(pos.formula)]
    assert q, "query position expected"
    qid = a.index[q[0]]
    flipped = [a.positions[t] for t in a.moves[qid]]
    assert {pos.role_of_i for pos in flipped} == {"V", "R"}


def test_arena_size_bound():
    for text in ["p | ~p", "mu X. p | <>X", "nu Y. mu X. (p & []Y) | <>X"]:
        s = analyzed(text)
        for seed in range(5):
            m = random_model(seed, n_worlds=3)
            a = build_arena(m, s, m.worlds[0])
            assert a.size <= 2 * m.n * len(s.closure())


def test_role_parity_along_paths():
    # between two positions carrying the same binder the number of role
    # flips is even: equivalently every binder position carries one role.
    s = analyzed("((nu X. []X) -> p) -> (mu Y. p | <>Y)")
    m = random_model(3, n_worlds=3)
    a = build_arena(m, s, m.worlds[0])
    roles = {}
    for pos in a.positions:
        f = pos.formula
        name = getattr(f, "var", getattr(f, "name", None))
        if name in s.binders:
            roles.setdefault(name, set()).add(pos.role_of_i)
    assert all(len(rs) == 1 for rs in roles.values())


def test_fallible_bottom_wins_for_verifier():
    m = close(["w"], fallible=["w"], rel=[], val={})
    a = arena_for("false", m, "w")
    sol = solve(a)
    assert sol.winner_at(a.initial) == PLAYER_I
    assert eval(m, parse("false")) == {"w"}


def test_infallible_bottom_wins_for_refuter():
    m = close(["w"], val={})
    a = arena_for("false", m, "w")
    assert solve(a).winner_at(a.initial) == PLAYER_II


def test_excluded_middle_heredity_model():
    m = close(["a", "b"], pre=[("a", "b")], val={"p": ["b"]})
    a = arena_for("p | ~p", m, "a")
    sol = solve(a)
    assert sol.winner_at(a.initial) == PLAYER_II
    assert check_equivalence(m, analyzed("p | ~p"), "a")


def test_nu_box_always_won_by_I():
    for seed in range(8):
        m = random_model(seed, n_worlds=3)
        a = arena_for("nu X. []X", m, m.worlds[0])
        assert solve(a).winner_at(a.initial) == PLAYER_I


def test_solver_strategies_verify():
    for seed in range(20):
        m = random_model(seed, n_worlds=3)
        for text in ["p | ~p", "mu X. p | <>X", "nu X. p & []X", "<>p -> []p"]:
            a = arena_for(text, m, m.worlds[0])
            sol = solve(a)
            assert verify_strategy(a, PLAYER_I, sol.strategy_i, sol.region(PLAYER_I))
            assert verify_strategy(a, PLAYER_II, sol.strategy_ii, sol.region(PLAYER_II))


def test_verify_rejects_bad_strategy():
    m = close(["a", "b"], pre=[("a", "b")], val={"p": ["b"]})
    a = arena_for("p | ~p", m, "a")
    sol = solve(a)
    # at the initial Or position (owned by V = player I in II's region),
    # force a strategy claim for player I on II's region: must fail
    region = sol.region(PLAYER_II) | {a.initial}
    bad = dict(sol.strategy_i)
    bad[a.initial] = a.moves[a.initial][0]
    assert not verify_strategy(a, PLAYER_I, bad, region)


def test_verify_empty_strategy_vacuous():
    m = close(["w"], val={"p": ["w"]})
    a = arena_for("p", m, "w")
    # region where player II owns nothing with successors
    assert verify_strategy(a, PLAYER_II, {}, set())


def test_verify_incomplete_strategy_raises():
    m = close(["a", "b"], pre=[("a", "b")], val={"p": ["b"]})
    a = arena_for("p | ~p", m, "a")
    sol = solve(a)
    region = sol.region(PLAYER_II)
    # drop one of II's choices inside its own region, if any
    if any(a.controller(v) == PLAYER_II and a.moves[v] for v in region):
        with pytest.raises(IncompleteStrategy):
            verify_strategy(a, PLAYER_II, {}, region)


def test_determinacy_every_position_has_one_winner():
    for seed in range(10):
        m = random_model(seed, n_worlds=3)
        a = arena_for("nu Y. mu X. (p & []Y) | <>X", m, m.worlds[0])
        sol = solve(a)
        assert len(sol.winner) == a.size
        assert sol.region(PLAYER_I) | sol.region(PLAYER_II) == set(range(a.size))
        assert not (sol.region(PLAYER_I) & sol.region(PLAYER_II))


EQUIV_FORMULAS = [
    "p",
    "false",
    "true",
    "~p",
    "p | ~p",
    "p -> p",
    "[]p",
    "<>p",
    "<>p -> p",
    "p -> []p",
    "mu X. p | <>X",
    "nu X. p & []X",
    "mu X. []X",
    "nu X. []X",
    "mu X. <>X",
    "nu Y. mu X. (p & []Y) | <>X",
]


def test_equivalence_on_all_two_world_models():
    formulas = [analyzed(t) for t in EQUIV_FORMULAS]
    checked = 0
    for m in enumerate_models(2, ["p"], CK):
        for s in formulas:
            full = build_full_arena(m, s)
            sol = solve(full)
            truth = eval(m, s)
            for w in m.worlds:
                pid = full.index[Position(w, s.formula, "V")]
                assert (w in truth) == (sol.winner_at(pid) == PLAYER_I), (m, str(s), w)
            checked += 1
    assert checked > 1000


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10**9), st.sampled_from(EQUIV_FORMULAS))
def test_equivalence_random_models(seed, text):
    m = random_model(seed, n_worlds=4)
    s = analyzed(text)
    assert check_equivalence(m, s, m.worlds[seed % m.n])
