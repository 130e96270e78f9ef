"""Stencil direction sets, checked against a brute-force enumeration."""
from math import gcd

import numpy as np
import pytest

from mongeampere import InvalidArgument, build_stencil


def brute_force_2d(width):
    """All primitive integer pairs with max-norm <= width, sign-normalized."""
    dirs = set()
    for a in range(-width, width + 1):
        for b in range(-width, width + 1):
            if (a, b) == (0, 0) or gcd(abs(a), abs(b)) != 1:
                continue
            v = (a, b)
            first = a if a != 0 else b
            if first < 0:
                v = (-a, -b)
            dirs.add(v)
    return dirs


def test_1d_single_direction():
    st = build_stencil(1, 1)
    assert st.directions == ((1,),)
    assert st.bases == ((0,),)


def test_2d_width1():
    st = build_stencil(2, 1)
    assert set(st.directions) == {(0, 1), (1, 0), (1, -1), (1, 1)}
    assert len(st.bases) == 2
    # Axis pair first, diagonal pair second per the fixed tie-break order.
    first = [st.directions[i] for i in st.bases[0]]
    assert set(first) == {(0, 1), (1, 0)}


@pytest.mark.parametrize("width", [1, 2, 3])
def test_2d_direction_set_matches_brute_force(width):
    st = build_stencil(2, width)
    assert set(st.directions) == brute_force_2d(width)
    # No direction appears with both signs.
    assert all(tuple(-c for c in d) not in st.directions for d in st.directions)


@pytest.mark.parametrize("width", [1, 2, 3])
def test_2d_bases_are_orthogonal_equal_length(width):
    st = build_stencil(2, width)
    seen = set()
    for basis in st.bases:
        assert len(basis) == 2
        u = np.asarray(st.directions[basis[0]])
        v = np.asarray(st.directions[basis[1]])
        assert u @ v == 0
        assert u @ u == v @ v  # quarter turns preserve length
        seen.update(basis)
    # The quarter turn of any direction has the same max-norm, so every
    # direction lands in exactly one basis.
    assert seen == set(range(len(st.directions)))
    assert len(st.bases) * 2 == len(st.directions)


def test_2d_width2_counts():
    st = build_stencil(2, 2)
    assert len(st.directions) == 8
    assert len(st.bases) == 4


def test_3d_coordinate_basis_only():
    st = build_stencil(3, 2)
    assert st.directions == ((1, 0, 0), (0, 1, 0), (0, 0, 1))
    assert st.bases == ((0, 1, 2),)


def test_invalid_requests():
    with pytest.raises(InvalidArgument):
        build_stencil(2, 0)
    with pytest.raises(InvalidArgument):
        build_stencil(4, 1)
