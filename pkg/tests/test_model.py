import json

import pytest
from hypothesis import given, settings, strategies as st

from ckmu.model import (
    GenerationBudgetExceeded,
    LogicVariant,
    Model,
    ValidationFailed,
    close,
    compose_pre_rel,
    enumerate_models,
    load_document,
    random_model,
    validate,
)

CK, IK, GK = LogicVariant.CK, LogicVariant.IK, LogicVariant.GK


def one_world(fallible=(), rel=()):
    val = {"p": ["w"]} if fallible else {}
    return Model(["w"], fallible, [("w", "w")], rel, val)


def test_one_world_valid_everywhere():
    m = one_world()
    for variant in (CK, IK, GK):
        assert validate(m, variant) == []


def test_missing_reflexivity_reported():
    m = Model(["w"], [], [], [], {})
    [v] = validate(m)
    assert v.condition == "pre not reflexive" and v.worlds == ("w",)


def test_ik_rejects_fallible():
    m = one_world(fallible=["w"])
    assert validate(m, CK) == []
    assert any(v.condition == "fallible worlds must be empty" for v in validate(m, IK))


def test_transitivity_heredity_fallible_closure_reported():
    m = Model(
        ["a", "b", "c"],
        [],
        [("a", "a"), ("b", "b"), ("c", "c"), ("a", "b"), ("b", "c")],
        [],
        {},
    )
    assert [v.condition for v in validate(m)] == ["pre not transitive"]
    m2 = Model(["a", "b"], [], [("a", "a"), ("b", "b"), ("a", "b")], [], {"p": ["a"]})
    assert [v.condition for v in validate(m2)] == ["heredity fails for p"]
    m3 = Model(["a", "b"], ["a"], [("a", "a"), ("b", "b")], [("a", "b")], {})
    assert any(v.condition == "fallible not closed under rel" for v in validate(m3))


def test_confluence_violations():
    # a <= b, a R c, but b has no successor above c
    m = Model(
        ["a", "b", "c"],
        [],
        [("a", "a"), ("b", "b"), ("c", "c"), ("a", "b")],
        [("a", "c")],
        {},
    )
    assert any(v.condition == "not forward confluent" for v in validate(m, IK))
    # a R b <= c, nothing maps a above to c
    m2 = Model(
        ["a", "b", "c"],
        [],
        [("a", "a"), ("b", "b"), ("c", "c"), ("b", "c")],
        [("a", "b")],
        {},
    )
    assert any(v.condition == "not backward confluent" for v in validate(m2, IK))


def test_local_linearity_violation():
    fork = Model(
        ["a", "b", "c"],
        [],
        [("a", "a"), ("b", "b"), ("c", "c"), ("a", "b"), ("a", "c")],
        [],
        {},
    )
    assert validate(fork, IK) == []
    assert any(v.condition == "not locally linear" for v in validate(fork, GK))


# --- close -------------------------------------------------------------------


def test_close_adds_reflexive_pairs():
    m = close(["w", "v"], pre=[("w", "v")])
    assert {("w", "w"), ("v", "v"), ("w", "v")} <= m.pre


def test_close_heredity():
    m = close(["w", "v"], pre=[("w", "v")], val={"p": ["w"]})
    assert m.val["p"] == frozenset({"w", "v"})


def test_close_fallible_under_rel():
    m = close(["w", "u"], fallible=["w"], rel=[("w", "u")], val={"p": []})
    assert m.fallible == frozenset({"w", "u"})
    assert m.val["p"] == frozenset({"w", "u"})


def test_close_does_not_fix_confluence():
    with pytest.raises(ValidationFailed):
        close(
            ["a", "b", "c"],
            pre=[("a", "b")],
            rel=[("a", "c")],
            variant=IK,
        )


def test_load_document_roundtrip(tmp_path):
    doc = {
        "worlds": ["w", "v", "u"],
        "fallible": [],
        "pre": [["w", "v"]],
        "rel": [["v", "u"]],
        "val": {"p": ["v"]},
    }
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    m = load_document(str(path), close_pre=True, close_heredity=True, close_fallible=True)
    assert validate(m) == []
    m2 = load_document(json.dumps(m.to_document()))
    assert m2 == m


def test_load_document_rejects_unknown_world():
    with pytest.raises(ValueError):
        load_document({"worlds": ["w"], "rel": [["w", "nope"]]})


# --- compose -----------------------------------------------------------------


def test_compose_pre_rel():
    m = close(["w", "v", "u"], pre=[("w", "v")], rel=[("v", "u")])
    assert ("w", "u") in compose_pre_rel(m)
    m2 = close(["w"], rel=[])
    assert compose_pre_rel(m2) == frozenset()
    m3 = close(["w", "u"], rel=[("w", "u")])
    assert ("w", "u") in compose_pre_rel(m3)


def test_compose_contains_rel_when_reflexive():
    m = close(["a", "b"], pre=[("a", "b")], rel=[("b", "a"), ("a", "a")])
    assert compose_pre_rel(m) >= m.rel


# --- enumeration ---------------------------------------------------------------


def test_enumerate_one_world_ck_exactly_four():
    models = list(enumerate_models(1, [], CK))
    assert len(models) == 4
    assert len({(m.fallible, m.rel) for m in models}) == 4


def test_enumerate_zero_worlds_empty():
    assert list(enumerate_models(0, [], CK)) == []


def test_enumerate_one_world_ik_two():
    models = list(enumerate_models(1, [], IK))
    assert len(models) == 2
    assert all(not m.fallible for m in models)


def test_enumerate_all_valid_and_deterministic():
    models = list(enumerate_models(2, ["p"], CK))
    assert models == list(enumerate_models(2, ["p"], CK))
    assert all(validate(m, CK) == [] for m in models)
    ik_models = list(enumerate_models(2, ["p"], IK))
    assert all(validate(m, IK) == [] for m in ik_models)
    assert {m.to_document().__str__() for m in ik_models} <= {
        m.to_document().__str__() for m in models
    }
    gk = list(enumerate_models(2, ["p"], GK))
    assert all(validate(m, GK) == [] for m in gk)


# --- random generation --------------------------------------------------------


def test_random_model_deterministic():
    a = random_model(42, n_worlds=4, props=("p", "q"))
    b = random_model(42, n_worlds=4, props=("p", "q"))
    assert a == b


@pytest.mark.parametrize("variant", [CK, IK, GK])
def test_random_model_valid(variant):
    for seed in range(12):
        m = random_model(seed, n_worlds=3, variant=variant)
        assert validate(m, variant) == []


def test_random_model_zero_density():
    m = random_model(7, n_worlds=3, pre_density=0.0, rel_density=0.0, fallible_density=0.0)
    assert m.rel == frozenset()
    assert m.pre == frozenset({(w, w) for w in m.worlds})


def test_generation_budget():
    with pytest.raises(GenerationBudgetExceeded):
        random_model(1, n_worlds=6, pre_density=0.9, rel_density=0.9, variant=GK, max_tries=0)


# --- property: close always yields a valid CK model ----------------------------


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_close_validates_for_any_raw_document(data):
    n = data.draw(st.integers(1, 4))
    worlds = [f"w{i}" for i in range(n)]
    pairs = st.lists(
        st.tuples(st.sampled_from(worlds), st.sampled_from(worlds)), max_size=6
    )
    pre = data.draw(pairs)
    rel = data.draw(pairs)
    fallible = data.draw(st.lists(st.sampled_from(worlds), max_size=2))
    val = {"p": data.draw(st.lists(st.sampled_from(worlds), max_size=3))}
    m = close(worlds, fallible, pre, rel, val)
    assert validate(m, CK) == []
