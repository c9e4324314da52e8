from __future__ import annotations

import numpy as np
import pytest

from freebrw.errors import CapExceededError, GroupAxiomError, MalformedWordError
from freebrw.groups import IDENTITY, FactorGroup, FreeProduct, Letter, ball_enumerate, in_cone


def test_cyclic_factor_labels_and_generators():
    f = FactorGroup.cyclic(2, 3)
    assert f.labels == ("e", "b", "b2")
    assert f.generators == frozenset({1, 2})
    assert f.dist_from_identity == (0, 1, 1)
    assert f.inverse(1) == 2


def test_reduction_in_z2_z3(z2z3):
    x = z2z3.parse("ab2ab")
    y = z2z3.parse("b2a")
    assert z2z3.multiply(x, y) == z2z3.parse("ab2")
    assert z2z3.format(z2z3.multiply(x, y)) == "ab2"
    assert z2z3.word_length(z2z3.parse("ab2")) == 2


def test_same_factor_letters_merge(z2z3):
    assert z2z3.multiply(z2z3.parse("b"), z2z3.parse("b")) == (Letter(2, 2),)
    assert z2z3.multiply(z2z3.parse("b"), z2z3.parse("b2")) == IDENTITY


def test_inverse_and_distance(tree3):
    x = tree3.parse("abcab")
    assert tree3.multiply(x, tree3.inverse(x)) == IDENTITY
    y = tree3.parse("abc")
    assert tree3.distance(x, y) == tree3.distance(y, x) == 2
    assert tree3.distance(x, x) == 0


def test_suffix_type_and_cone(tree3):
    x = tree3.parse("abc")
    assert tree3.suffix_type(x) == 3
    assert tree3.suffix_type(IDENTITY) is None
    assert in_cone(tree3, x, 2)
    assert not in_cone(tree3, x, 1)
    assert in_cone(tree3, IDENTITY, 1)
    assert not in_cone(tree3, IDENTITY, 1, strict=True)
    with pytest.raises(MalformedWordError):
        in_cone(tree3, x, 4)


def test_validate_rejects_unreduced_words(tree3):
    with pytest.raises(MalformedWordError):
        tree3.validate([(1, 1), (1, 1)])
    with pytest.raises(MalformedWordError):
        tree3.validate([(1, 2)])
    with pytest.raises(MalformedWordError):
        tree3.multiply(((4, 1),), IDENTITY)


def test_token_form(z2z3):
    x = z2z3.parse("ab2")
    assert z2z3.token(x) == "1:1-2:2"
    assert z2z3.from_token("1:1-2:2") == x
    assert z2z3.from_token("e") == IDENTITY


def test_table_with_broken_associativity_is_rejected():
    table = [[0, 1, 2], [1, 0, 0], [2, 0, 0]]
    with pytest.raises(GroupAxiomError) as err:
        FactorGroup.from_table(1, ["e", "x", "y"], table, [1, 2])
    assert err.value.axiom == "associativity"
    assert err.value.factor == 1


def test_table_without_identity_is_rejected():
    with pytest.raises(GroupAxiomError) as err:
        FactorGroup.from_table(1, ["e", "x"], [[0, 1], [0, 1]], [1])
    assert "identity" in err.value.axiom


def test_generators_must_generate():
    table = [[(a + b) % 4 for b in range(4)] for a in range(4)]
    with pytest.raises(GroupAxiomError) as err:
        FactorGroup.from_table(1, ["e", "g", "g2", "g3"], table, [2])
    assert err.value.axiom == "generators generate"


def test_non_symmetric_generators_are_closed():
    table = [[(a + b) % 3 for b in range(3)] for a in range(3)]
    f = FactorGroup.from_table(2, ["e", "b", "b2"], table, [1])
    assert f.symmetrized
    assert f.generators == frozenset({1, 2})


def test_free_product_needs_two_factors():
    with pytest.raises(GroupAxiomError):
        FreeProduct.cyclic(2)


def test_ball_sizes_on_the_tree(tree3):
    ball = ball_enumerate(tree3, 3)
    assert len(ball) == 1 + 3 + 6
    assert ball[0] == IDENTITY
    assert all(tree3.word_length(w) < 3 for w in ball)
    assert ball_enumerate(tree3, 0) == []


def test_ball_cap(tree3):
    with pytest.raises(CapExceededError) as err:
        ball_enumerate(tree3, 6, cap=5)
    assert err.value.what == "ball"


def test_letter_codes_merge_table(z2z3):
    codes = z2z3.codes
    a = codes.code(Letter(1, 1))
    b = codes.code(Letter(2, 1))
    b2 = codes.code(Letter(2, 2))
    assert codes.merge[a, a] == -1
    assert codes.merge[b, b] == b2
    assert codes.merge[b, b2] == -1
    assert codes.merge[a, b] == -2


def _cayley_ball(G, n):
    steps = [(Letter(f.index, s),) for f in G.factors for s in sorted(f.generators)]
    seen = {IDENTITY}
    frontier = [IDENTITY]
    for _ in range(n - 1):
        frontier = [y for x in frontier for y in (G.multiply(x, s) for s in steps) if y not in seen]
        seen.update(frontier)
    return seen


@pytest.mark.parametrize("n", range(1, 9))
def test_ball_matches_breadth_first_search_in_z2_z3(z2z3, n):
    ball = ball_enumerate(z2z3, n)
    assert len(ball) == len(set(ball))
    assert set(ball) == _cayley_ball(z2z3, n)


@pytest.mark.parametrize("m", range(2, 9))
def test_cyclic_factors_pass_the_axiom_checks(m):
    f = FactorGroup.cyclic(1, m)
    assert f.order == m
    assert all(f.mul(g, f.inverse(g)) == 0 for g in range(m))


def _random_word(G, rng, letters):
    word = []
    for _ in range(letters):
        choices = [f for f in G.factors if not word or f.index != word[-1].factor]
        f = choices[int(rng.integers(len(choices)))]
        word.append(Letter(f.index, int(rng.integers(1, f.order))))
    return tuple(word)


@pytest.mark.parametrize("orders", [(2, 2, 2), (2, 3), (2, 4), (3, 5, 2)])
def test_group_laws_on_random_reduced_words(orders):
    G = FreeProduct.cyclic(*orders)
    rng = np.random.default_rng(sum(orders))
    for _ in range(300):
        x, y, z = (_random_word(G, rng, int(rng.integers(0, 13))) for _ in range(3))
        assert G.validate(x) == x
        assert G.multiply(G.multiply(x, y), z) == G.multiply(x, G.multiply(y, z))
        assert G.multiply(x, IDENTITY) == x == G.multiply(IDENTITY, x)
        assert G.multiply(x, G.inverse(x)) == IDENTITY == G.multiply(G.inverse(x), x)


@pytest.mark.parametrize("orders", [(2, 2, 2), (2, 3), (2, 4), (3, 5, 2)])
def test_length_is_subadditive_and_distance_a_metric(orders):
    G = FreeProduct.cyclic(*orders)
    rng = np.random.default_rng(100 + sum(orders))
    for _ in range(300):
        x, y, z = (_random_word(G, rng, int(rng.integers(0, 13))) for _ in range(3))
        lx, ly = G.word_length(x), G.word_length(y)
        assert abs(lx - ly) <= G.word_length(G.multiply(x, y)) <= lx + ly
        assert G.word_length(G.inverse(x)) == lx
        assert G.distance(x, z) <= G.distance(x, y) + G.distance(y, z)
        assert G.distance(x, y) == G.distance(y, x)
        assert (G.distance(x, y) == 0) == (x == y)


def test_z2_z4_has_a_letter_at_distance_two():
    G = FreeProduct.cyclic(2, 4)
    assert G.factor(2).generators == frozenset({1, 3})
    assert G.factor(2).dist_from_identity == (0, 1, 2, 1)
    assert G.max_letter_length == 2
    assert G.word_length(G.parse("b2")) == 2
    assert G.word_length(G.parse("ab2ab3")) == 5
    assert G.multiply(G.parse("ab"), G.parse("ba")) == G.parse("ab2a")


def test_z2_z4_ball_matches_breadth_first_search():
    G = FreeProduct.cyclic(2, 4)
    for n in range(1, 7):
        assert set(ball_enumerate(G, n)) == _cayley_ball(G, n)
