from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from lusinlab.dyadic import (CantorSystem, DyadicRational, GenerationCapError, Point, all_indices,
                             center, children, cube, format_index, generation_volume,
                             index_map_w, index_map_w_inverse, locate, parse_index,
                             sequence_values, slot_to_vertex, vertex_to_slot, vertices)


def F(x):
    return DyadicRational.coerce(x).to_fraction()


def test_generation_zero_sequences():
    s = CantorSystem(3, 4, 10)
    sv = sequence_values(0, s)
    assert F(sv.alpha) == 1 and F(sv.beta) == 1 and F(sv.r) == 1


def test_generation_one_n3():
    s = CantorSystem(3, 4, 10)
    sv = sequence_values(1, s)
    assert F(sv.alpha) == Fraction(17, 32)
    assert F(sv.r) == Fraction(17, 64)
    assert F(sv.r_hat) == Fraction(1, 32)


def test_beta_gap():
    s = CantorSystem(3, 4, 10)
    assert F(s.beta_seq(2)) == Fraction(1, 256)
    assert s.beta_seq(1) > s.beta_seq(2).scale2(3)


def test_generation_cap():
    s = CantorSystem(2, 3, 5)
    with pytest.raises(GenerationCapError):
        s.check_generation(6)


def test_beta_requirement():
    with pytest.raises(ValueError):
        CantorSystem(3, 3, 10)


def test_centers():
    s = CantorSystem(3, 4, 10)
    assert [F(c) for c in center(((1, 1, 1),), "A", s).coords] == [Fraction(1, 2)] * 3
    z = [F(c) for c in center((1,), "tower", s).coords]
    assert z == [0, 0, Fraction(-7, 8)]
    z2 = [F(c) for c in center(((1, 1, 1), (-1, -1, -1)), "A", s).coords]
    # 1/2 - r_1/2 with r_1 = 17/64
    assert z2 == [Fraction(47, 128)] * 3


def test_cube_and_volume():
    s = CantorSystem(3, 4, 10)
    q = cube(((1, 1, 1),), "A", s)
    assert F(q.half_side) == Fraction(17, 64)
    q0 = cube((), "A", s)
    assert F(q0.half_side) == 1 and F(q0.volume()) == 8
    assert F(generation_volume(0, "A", s)) == 8


@pytest.mark.parametrize("n", [2, 3])
def test_generation_volume_exact(n):
    s = CantorSystem(n, n + 1, 10)
    for k in range(0, 9):
        assert generation_volume(k, "A", s) == (s.alpha(k) ** n).scale2(n)


def test_limit_volume_n3():
    s = CantorSystem(3, 4, 10)
    assert abs(F(generation_volume(10, "A", s)) - 1) <= Fraction(1, 2**35)


def test_b_volume_vanishes():
    s = CantorSystem(2, 3, 10)
    vals = [float(generation_volume(k, "B", s)) for k in range(6)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_locate_examples():
    s = CantorSystem(3, 4, 10)
    half = Point((DyadicRational(1, -1),) * 3)
    # the centre of Q_(+++) is in none of its children
    assert locate(half, "A", s, 5) == ((1, 1, 1),)
    assert locate(Point.zero(3), "A", s, 3) is None
    q = cube(((1, 1, 1),), "A", s)
    edge = Point(tuple(c + q.half_side for c in q.center.coords))
    assert locate(edge, "A", s, 1) == ((1, 1, 1),)


def test_slots():
    assert vertex_to_slot((-1, -1, -1)) == 1
    assert [vertex_to_slot(v) for v in vertices(3)] == list(range(1, 9))
    assert index_map_w(()) == ()


@given(st.integers(2, 4), st.data())
def test_slot_roundtrip(n, data):
    slot = data.draw(st.integers(1, 2**n))
    assert vertex_to_slot(slot_to_vertex(slot, n)) == slot


@settings(max_examples=50)
@given(st.integers(2, 3), st.lists(st.integers(0, 7), min_size=0, max_size=4))
def test_index_roundtrips(n, picks):
    vs = vertices(n)
    idx = tuple(vs[p % len(vs)] for p in picks)
    assert index_map_w_inverse(index_map_w(idx), n) == idx
    assert parse_index(format_index(idx)) == idx
    t = index_map_w(idx)
    assert parse_index(format_index(t)) == t


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["A", "B", "tower"]), st.integers(2, 3), st.integers(1, 3), st.data())
def test_nesting(family, n, k, data):
    s = CantorSystem(n, n + 1, 10)
    idx = data.draw(st.sampled_from(list(all_indices(k - 1, family, n))))
    parent = cube(idx, family, s)
    kids = [cube(c, family, s) for c in children(idx, family, n)]
    for i, q in enumerate(kids):
        assert parent.contains_cube(q)
        for q2 in kids[i + 1:]:
            assert q.interiors_disjoint(q2)
    if family != "tower":
        # primed cubes sit between the child and the parent
        for c in children(idx, family, n):
            qp = cube(c, family, s, primed=True)
            assert parent.contains_cube(qp) and qp.contains_cube(cube(c, family, s))
