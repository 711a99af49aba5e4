from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from ri_switch.dsl import (KEYWORDS, ChannelDecl, Comparison, Conjunction, Const, DslError,
                          DuplicateIdentifier, FnCall, LexError, LocationDecl,
                          MultipleInitialLocations, Neg, NoAcceptingLocation, NoInitialLocation,
                          PolicyAst, PolicySyntaxError, Ref, TransitionAst, UndeclaredIdentifier,
                          format_const, format_policy, parse_policy)
from ri_switch.policies import policy_text

NORMAL = """
policy normal
inputs R: array, v: scalar
outputs d: scalar, a: scalar
clocks x
locations
  l_drive accepting initial
  l_warn
transition l_drive -> l_drive when min_front(R) > 1.2
transition l_drive -> l_warn when min_front(R) <= 1.2 reset {x}
transition l_warn -> l_warn when min_front(R) <= 1.2 reset {x}
transition l_warn -> l_warn when min_front(R) > 1.2 and x < 6
transition l_warn -> l_drive when min_front(R) > 1.2 and x >= 6
"""

MINIMAL = """policy tiny
inputs u: scalar
outputs y: scalar
locations
  only accepting initial
transition only -> only when true
"""


def test_normal_policy_shape():
    ast = parse_policy(NORMAL)
    assert ast.name == "normal"
    assert len(ast.locations) == 2 and len(ast.clocks) == 1 and len(ast.transitions) == 5
    assert ast.locations[0] == LocationDecl("l_drive", accepting=True, initial=True)
    t = ast.transitions[1]
    assert (t.src, t.dst, t.resets) == ("l_drive", "l_warn", frozenset({"x"}))
    assert t.guard == Conjunction((Comparison(FnCall("min_front", (Ref("R"),)), "<=",
                                              Const(Fraction(6, 5))),))


def test_minimal_policy():
    ast = parse_policy(MINIMAL)
    assert len(ast.locations) == 1 and len(ast.transitions) == 1
    assert ast.transitions[0].guard == Conjunction(())
    assert ast.clocks == ()


def test_shipped_policies_parse():
    for name in ("normal", "stopping", "cautious"):
        assert parse_policy(policy_text(name)).name == name


def test_unicode_operators_and_aliases():
    src = MINIMAL.replace("when true", "when u ≤ 3 ∧ u ≠ 1 && u == u")
    g = parse_policy(src).transitions[0].guard
    assert [c.op for c in g.children] == ["<=", "!=", "="]
    src = MINIMAL.replace("->", "→")
    assert parse_policy(src).transitions[0].dst == "only"


def test_unary_minus():
    src = MINIMAL.replace("when true", "when y <= -kin(u, u) and u > -2.5")
    g = parse_policy(src).transitions[0].guard
    assert g.children[0].rhs == Neg(FnCall("kin", (Ref("u"), Ref("u"))))
    assert g.children[1].rhs == Const(Fraction(-5, 2))


def test_bytes_input():
    assert parse_policy(MINIMAL.encode()).name == "tiny"
    with pytest.raises(LexError):
        parse_policy(b"policy \xff\xfe")


@pytest.mark.parametrize("src, exc", [
    (MINIMAL.replace("when true", "when true reset {y2}"), UndeclaredIdentifier),
    (MINIMAL.replace("when true", "when z > 1"), UndeclaredIdentifier),
    (MINIMAL.replace("only -> only", "only -> elsewhere"), UndeclaredIdentifier),
    (MINIMAL.replace("  only accepting initial", "  only accepting initial\n  two initial"),
     MultipleInitialLocations),
    (MINIMAL.replace("accepting initial", "initial"), NoAcceptingLocation),
    (MINIMAL.replace("accepting initial", "accepting"), NoInitialLocation),
    (MINIMAL.replace("outputs y: scalar", "outputs u: scalar"), DuplicateIdentifier),
    (MINIMAL.replace("when true", "when u >"), PolicySyntaxError),
    (MINIMAL.replace("when true", "when u > 1 or u < 0"), PolicySyntaxError),
    (MINIMAL.replace("when true", "when u $ 1"), LexError),
])
def test_errors(src, exc):
    with pytest.raises(exc) as info:
        parse_policy(src)
    assert isinstance(info.value, DslError)


def test_errors_carry_position():
    src = MINIMAL.replace("when true", "when u $ 1")
    with pytest.raises(LexError) as info:
        parse_policy(src)
    assert info.value.line == 6
    assert info.value.col > 0


def test_undeclared_clock_reports_line():
    src = NORMAL.replace("reset {x}\ntransition l_warn", "reset {y}\ntransition l_warn", 1)
    with pytest.raises(UndeclaredIdentifier) as info:
        parse_policy(src)
    assert info.value.line == 10


def test_comments_are_ignored():
    src = "# header\n" + MINIMAL.replace("when true", "when true  # always")
    assert parse_policy(src) == parse_policy(MINIMAL)


@pytest.mark.parametrize("value, text", [
    (Fraction(6, 5), "1.2"), (Fraction(3), "3"), (Fraction(-1, 8), "-0.125"), (Fraction(0), "0"),
])
def test_format_const(value, text):
    assert format_const(value) == text


def test_format_const_rejects_repeating_decimals():
    with pytest.raises(ValueError):
        format_const(Fraction(1, 3))


# --------------------------------------------------------------------------
# generated policies

_names = st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True).filter(lambda s: s not in KEYWORDS)
_consts = st.builds(lambda n, k: Const(Fraction(n, 10 ** k)),
                    st.integers(-10_000, 10_000), st.integers(0, 3))


@st.composite
def policies(draw):
    names = draw(st.lists(_names, min_size=13, max_size=14, unique=True))
    n_in = draw(st.integers(1, 2))
    n_out = draw(st.integers(1, 2))
    n_clk = draw(st.integers(0, 2))
    n_loc = draw(st.integers(1, 4))
    it = iter(names)
    arr = ChannelDecl(next(it), "array")
    scal_in = [ChannelDecl(next(it), "scalar") for _ in range(n_in)]
    outs = tuple(ChannelDecl(next(it), "scalar") for _ in range(n_out))
    clocks = tuple(next(it) for _ in range(n_clk))
    locs = [next(it) for _ in range(n_loc)]
    init = draw(st.integers(0, n_loc - 1))
    acc = draw(st.sets(st.integers(0, n_loc - 1), min_size=1))
    locations = tuple(LocationDecl(n, i in acc, i == init) for i, n in enumerate(locs))
    scalars = [c.name for c in scal_in] + [c.name for c in outs]

    base = st.one_of(
        _consts,
        st.sampled_from(scalars).map(Ref),
        st.just(FnCall("min_front", (Ref(arr.name),))),
    )
    terms = st.recursive(
        base,
        lambda inner: st.one_of(
            st.tuples(inner, inner).map(lambda ab: FnCall("kin", ab)),
            inner.filter(lambda t: not isinstance(t, (Const, Neg))).map(Neg),
        ),
        max_leaves=4,
    )
    data_cmp = st.builds(Comparison, terms, st.sampled_from(["<", "<=", "=", ">=", ">", "!="]),
                         terms)
    cmps = [data_cmp]
    if clocks:
        cmps.append(st.builds(Comparison, st.sampled_from(clocks).map(Ref),
                              st.sampled_from(["<", "<=", ">=", ">"]), st.one_of(_consts, terms)))
    guard = st.lists(st.one_of(*cmps), max_size=3).map(lambda cs: Conjunction(tuple(cs)))
    transitions = draw(st.lists(
        st.builds(TransitionAst, st.sampled_from(locs), st.sampled_from(locs), guard,
                  st.frozensets(st.sampled_from(clocks)) if clocks else st.just(frozenset())),
        min_size=1, max_size=6))
    return PolicyAst(next(it), (arr, *scal_in), outs, clocks, locations, tuple(transitions))


@given(policies())
def test_round_trip(ast):
    text = format_policy(ast)
    again = parse_policy(text)
    assert again == ast
    assert format_policy(again) == text


@given(st.binary(max_size=300))
def test_parse_never_panics_on_bytes(data):
    try:
        parse_policy(data)
    except DslError:
        pass


_fragments = st.sampled_from([
    "policy", "p", "inputs", "outputs", "clocks", "locations", "transition", "when", "reset",
    "and", "true", "accepting", "initial", "x", "R", "a", "v", "l0", "->", "<=", ">", "=",
    "(", ")", "{", "}", ",", ":", "-", "1.2", "6", "min_front", "kin", "scalar", "array",
    "\n", " ", "#", "9e99", "1e-400",
])


@given(st.lists(_fragments, max_size=80).map(" ".join))
def test_parse_never_panics_on_token_soup(text):
    try:
        parse_policy(text)
    except DslError:
        pass
