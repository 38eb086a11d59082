from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collision_cml import local_map as lm


@pytest.fixture
def doubling():
    return lm.doubling_map()


@pytest.fixture
def decimal():
    return lm.decimal_map()


def test_doubling_values(doubling):
    assert lm.eval(doubling, 0.3) == pytest.approx(0.6, abs=1e-15)
    # branch boundary belongs to the right branch
    assert lm.eval(doubling, 0.5) == 0.0


def test_decimal_value(decimal):
    assert lm.eval(decimal, 0.37) == pytest.approx(0.7, abs=1e-14)


def test_endpoint_one_maps_into_unit_interval(doubling, decimal):
    assert lm.eval(doubling, 1.0) == 1.0
    assert lm.eval(decimal, 1.0) == 1.0


def test_eval_rejects_outside_points(doubling):
    with pytest.raises(ValueError):
        lm.eval(doubling, 1.5)
    with pytest.raises(ValueError):
        lm.eval(doubling, np.array([0.1, -0.1]))
    with pytest.raises(ValueError):
        lm.eval(doubling, np.nan)


def test_eval_array_shape(decimal):
    x = np.linspace(0, 1, 12).reshape(3, 4)
    y = lm.eval(decimal, x)
    assert y.shape == (3, 4)
    assert np.all((y >= 0) & (y <= 1))


def test_preimages_doubling(doubling):
    pre = lm.preimages(doubling, 0.6)
    assert len(pre) == 2
    for (x, w), (xe, we) in zip(pre, [(0.3, 0.5), (0.8, 0.5)]):
        assert x == pytest.approx(xe, abs=1e-15)
        assert w == we


def test_preimages_decimal_of_zero(decimal):
    pre = lm.preimages(decimal, 0.0)
    assert [round(x, 12) for x, _ in pre] == [k / 10 for k in range(10)]
    assert all(w == pytest.approx(0.1) for _, w in pre)


@pytest.mark.parametrize("name,n,expected", [("doubling", 4, True), ("doubling", 3, False), ("decimal", 10, True),
                                             ("decimal", 20, True), ("decimal", 15, False)])
def test_markov_grids(name, n, expected):
    assert lm.is_markov_for_grid(lm.preset(name), n) is expected


def test_markov_needs_grid_images():
    t = lm.full_branch_map(3)
    assert not lm.is_markov_for_grid(t, 2)
    assert lm.is_markov_for_grid(t, 3)
    assert lm.is_markov_for_grid(t, 6)
    # domain and image endpoints all on the 4-grid, yet the cell [0, 1/4) maps onto [0, 3/8)
    u = lm.PiecewiseAffineMap.from_branches([(0, 0.5, 1.5, 0), (0.5, 1, 2, -1)])
    assert not lm.is_markov_for_grid(u, 4)


def test_transfer_matrix_doubling_small(doubling):
    np.testing.assert_allclose(lm.transfer_matrix(doubling, 2), np.full((2, 2), 0.5), atol=1e-15)
    P = lm.transfer_matrix(doubling, 4)
    expected = np.zeros((4, 4))
    for j in range(4):
        expected[j, (2 * j) % 4] = 0.5
        expected[j, (2 * j + 1) % 4] = 0.5
    np.testing.assert_allclose(P, expected, atol=1e-15)


@pytest.mark.parametrize("n", [10, 20, 40])
def test_transfer_matrix_decimal_doubly_stochastic(decimal, n):
    P = lm.transfer_matrix(decimal, n)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    # Lebesgue invariance: uniform row vector is fixed
    np.testing.assert_allclose(P.sum(axis=0), 1.0, atol=1e-12)


def test_invalid_maps_rejected():
    with pytest.raises(ValueError, match="tile"):
        lm.PiecewiseAffineMap.from_branches([(0, 0.4, 2, 0), (0.5, 1, 2, -1)])
    with pytest.raises(ValueError, match="outside"):
        lm.PiecewiseAffineMap.from_branches([(0, 0.5, 3, 0), (0.5, 1, 2, -1)])
    with pytest.raises(ValueError, match="exceed 1"):
        lm.PiecewiseAffineMap.from_branches([(0, 1, 1, 0)])
    with pytest.raises(ValueError, match="preset"):
        lm.preset("tent")


def test_records_roundtrip(decimal):
    again = lm.PiecewiseAffineMap.from_branches(decimal.to_records(), "decimal")
    assert again == decimal
    assert decimal.lambda_min == 10


def test_orientation_reversing_branches():
    # full tent-like map with slopes +2 and -2
    t = lm.PiecewiseAffineMap.from_branches([(0, 0.5, 2, 0), (0.5, 1, -2, 2)])
    assert lm.eval(t, 0.75) == pytest.approx(0.5)
    pre = lm.preimages(t, 0.5)
    assert [round(x, 12) for x, _ in pre] == [0.25, 0.75]
    P = lm.transfer_matrix(t, 4)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)


@settings(max_examples=200, deadline=None)
@given(y=st.floats(0, 1), n=st.integers(2, 12))
def test_preimages_map_back(y, n):
    t = lm.full_branch_map(n)
    pre = lm.preimages(t, y)
    assert 1 <= len(pre) <= n
    for x, w in pre:
        assert 0 <= x <= 1
        assert lm.eval(t, x) == pytest.approx(y, abs=1e-12) or (y == 1.0 and lm.eval(t, x) == pytest.approx(0.0))
        assert w == pytest.approx(1 / n)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(0, 1, exclude_max=True), n=st.integers(2, 12))
def test_eval_matches_modular_arithmetic(x, n):
    t = lm.full_branch_map(n)
    expected = (n * x) % 1.0
    assert lm.eval(t, x) == pytest.approx(expected, abs=1e-12) or abs(lm.eval(t, x) - expected) > 1 - 1e-12


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0, 1, exclude_max=True))
def test_branch_index_half_open(x):
    t = lm.decimal_map()
    k = int(lm.branch_index(t, np.array([x]))[0])
    b = t.branches[k]
    assert b.lo <= x < b.hi
