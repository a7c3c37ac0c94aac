import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfdispatch.hexworld import (Coord, DomainError, HexGrid, cell_of, cells_of, distance, hex_steps,
                                 min_center_spacing, neighbors)


def test_corner_and_interior_neighbor_counts():
    g = HexGrid(10, 10)
    assert len(neighbors(g, 0)) in (2, 3)
    assert len(neighbors(g, 5 * 10 + 5)) == 6
    assert neighbors(HexGrid(1, 1), 0) == []


def test_neighbors_are_one_step_away():
    g = HexGrid(6, 7)
    for c in range(g.size):
        for n in neighbors(g, c):
            assert hex_steps(g, c, n) == 1
            assert c in neighbors(g, n)


def test_invalid_cell_rejected():
    g = HexGrid(3, 3)
    with pytest.raises(DomainError):
        neighbors(g, 9)
    with pytest.raises(DomainError):
        g.center(-1)


def test_coord_outside_unit_square():
    with pytest.raises(DomainError):
        Coord(1.2, 0.5)


def test_distance_modes():
    g = HexGrid(10, 10)
    assert distance(0, 0, g) == 0.0
    assert distance(0, 1, g) == pytest.approx(1.2)
    assert distance(Coord(0, 0), Coord(0.3, 0.4)) == pytest.approx(5.0)
    with pytest.raises(DomainError):
        distance(0, Coord(0.1, 0.1), g)
    with pytest.raises(DomainError):
        distance(0, 1)


def test_cell_of_centers_roundtrip():
    g = HexGrid(10, 10)
    for c in range(g.size):
        assert cell_of(g.center(c), g) == c


def test_cells_of_vectorized_matches_scalar():
    g = HexGrid(5, 8)
    pts = np.random.default_rng(0).random((200, 2))
    got = cells_of(pts, g)
    assert [cell_of(Coord(*p), g) for p in pts] == list(got)


def test_min_center_spacing_is_conservative():
    g = HexGrid(10, 10)
    c = g.centers
    d = np.hypot(c[:, None, 0] - c[None, :, 0], c[:, None, 1] - c[None, :, 1])
    d[np.diag_indices(g.size)] = np.inf
    assert d.min() >= min_center_spacing(g) - 1e-12
    assert math.isinf(min_center_spacing(HexGrid(1, 1)))


cells = st.integers(min_value=0, max_value=99)


@settings(max_examples=200, deadline=None)
@given(cells, cells, cells)
def test_hex_steps_is_a_metric(a, b, c):
    g = HexGrid(10, 10)
    assert hex_steps(g, a, b) == hex_steps(g, b, a)
    assert (hex_steps(g, a, b) == 0) == (a == b)
    assert hex_steps(g, a, c) <= hex_steps(g, a, b) + hex_steps(g, b, c)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_every_point_has_a_cell(x, y):
    g = HexGrid(10, 10)
    assert 0 <= cell_of(Coord(x, y), g) < g.size
