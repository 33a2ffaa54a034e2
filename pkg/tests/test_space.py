import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmolab.space import (MAX_POINTS, Space, ball, build_grid_space, dilate, doubling_fit,
                          enumerate_balls, space_from_matrix)


def test_four_point_grid():
    sp = build_grid_space(1, 4)
    assert sp.coords.ravel().tolist() == [0.0, 0.25, 0.5, 0.75]
    assert sp.measure.tolist() == [0.25] * 4
    assert sp.spacing == 0.25


def test_periodic_pair_wraps():
    sp = build_grid_space(1, 2, "periodic")
    assert sp.dist[0, 1] == 0.5
    assert sp.dist[1, 0] == 0.5


def test_rejects_oversized_grid():
    with pytest.raises(ValueError, match=str(MAX_POINTS)):
        build_grid_space(2, 257)


@pytest.mark.parametrize("kw", [dict(dim=3, side=4), dict(dim=1, side=1),
                                dict(dim=1, side=4, boundary="open")])
def test_rejects_bad_arguments(kw):
    with pytest.raises(ValueError):
        build_grid_space(**kw)


@pytest.mark.parametrize("dim,side,boundary", [(1, 64, "reflecting"), (1, 64, "periodic"),
                                               (2, 8, "reflecting"), (2, 8, "periodic")])
def test_metric_axioms(dim, side, boundary):
    sp = build_grid_space(dim, side, boundary)
    d = sp.dist
    assert np.all(np.diag(d) == 0)
    assert np.array_equal(d, d.T)
    assert sp.check_metric() <= 1e-15
    assert sp.total_measure == pytest.approx(1.0)


def test_four_point_balls():
    sp = build_grid_space(1, 4)
    balls = enumerate_balls(sp, 1)
    quarter = [b for b in balls if b.radius == 0.25]
    assert quarter and all(2 <= len(b.members) <= 3 for b in quarter)
    # B(x, 1) holds all four points; its member set first appears at radius 1/2
    assert any(len(b.members) == 4 for b in balls)
    assert len(ball(sp, 0, 1.0).members) == 4


def test_single_point_space():
    sp = space_from_matrix(np.zeros((1, 1)), np.ones(1))
    balls = enumerate_balls(sp, 2)
    assert len(balls) == 1
    assert balls[0].members.tolist() == [0]
    fit = doubling_fit(sp, balls)
    assert fit.C_D == 1.0 and fit.n_D == 0.0


def test_ball_count_and_distinct_members(path256, balls256):
    n = path256.n
    assert len(balls256) <= n * (2 * np.log2(n) + 2)
    keys = {b.members.tobytes() for b in balls256}
    assert len(keys) == len(balls256)
    assert all(b.center in b for b in balls256)
    assert all(b.mass > 0 for b in balls256)


def test_ball_count_frozen(balls256):
    # independent count: distinct member sets of all (center, radius) pairs
    side = 256
    radii = []
    j = 0
    while True:
        r = 2.0 ** (j / 2)
        radii.append(r)
        if r >= 255:
            break
        j += 1
    sets = set()
    for r in radii:
        for c in range(side):
            lo = max(0, c - int(np.floor(r + 1e-9)))
            hi = min(side - 1, c + int(np.floor(r + 1e-9)))
            sets.add((lo, hi))
    assert len(balls256) == len(sets) == 2957


def test_ball_monotone_in_radius(path256):
    for c in (0, 17, 128, 255):
        prev = set()
        for r in np.geomspace(path256.spacing, 1.0, 12):
            cur = set(ball(path256, c, r).members.tolist())
            assert prev <= cur
            prev = cur


def _brute_doubling_exponent(side, dim):
    """Smallest exponent n (0.01 grid) with mu(B(x, l r)) <= l^n mu(B(x, r))."""
    sp = build_grid_space(dim, side)
    balls = enumerate_balls(sp, 2)
    worst = 0.0
    for b in balls:
        row = sp.dist[b.center]
        for lam in (2, 4, 8):
            big = np.count_nonzero(row <= lam * b.radius * (1 + 1e-9))
            worst = max(worst, np.log(big / len(b.members)) / np.log(lam))
    return np.ceil(worst / 0.01 - 1e-9) * 0.01


def test_doubling_path(path256, balls256):
    fit = doubling_fit(path256, balls256)
    assert 0.9 <= fit.n_D <= 1.3
    assert fit.C_D == 1.0
    assert fit.n_D == pytest.approx(_brute_doubling_exponent(256, 1))
    assert fit.holds(path256, balls256)


def test_doubling_grid_16():
    sp = build_grid_space(2, 16)
    balls = enumerate_balls(sp, 2)
    fit = doubling_fit(sp, balls)
    assert 1.8 <= fit.n_D <= 2.4
    assert fit.n_D == pytest.approx(_brute_doubling_exponent(16, 2))
    assert fit.holds(sp, balls)


def test_doubling_with_constant_cap(path256, balls256):
    loose = doubling_fit(path256, balls256, C_cap=1.5)
    tight = doubling_fit(path256, balls256)
    assert loose.n_D <= tight.n_D
    assert loose.holds(path256, balls256)


def test_json_roundtrip():
    sp = build_grid_space(2, 4, "periodic")
    back = Space.from_json(sp.to_json())
    assert np.array_equal(back.dist, sp.dist)
    assert np.array_equal(back.measure, sp.measure)
    assert back.spacing == sp.spacing
    doc = json.loads(sp.to_json())
    assert set(doc) == {"points", "dist", "measure", "spacing"}


def test_space_from_matrix_validates():
    with pytest.raises(ValueError):
        space_from_matrix(np.array([[0, 1], [2, 0]]), np.ones(2))
    with pytest.raises(ValueError):
        space_from_matrix(np.zeros((2, 2)) + np.eye(2), np.ones(2))
    with pytest.raises(ValueError):
        space_from_matrix(np.array([[0, 1], [1, 0]]), np.array([1.0, 0.0]))


def test_dilate_adds_neighbours(path256):
    members = np.arange(10, 20)
    out = dilate(path256, members, 2 * path256.spacing)
    assert out.tolist() == list(range(8, 22))


@settings(max_examples=25, deadline=None)
@given(side=st.integers(2, 40), boundary=st.sampled_from(["reflecting", "periodic"]),
       c=st.integers(0, 39), r=st.floats(0.0, 1.5))
def test_ball_members_match_distance(side, boundary, c, r):
    sp = build_grid_space(1, side, boundary)
    c = c % side
    b = ball(sp, c, r)
    expect = [i for i in range(side) if sp.dist[c, i] <= r * (1 + 1e-9)]
    assert b.members.tolist() == expect
    assert b.mass == pytest.approx(len(expect) / side)


@settings(max_examples=10, deadline=None)
@given(pts=st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=2, max_size=12, unique=True))
def test_matrix_space_triangle(pts):
    p = np.array(pts)
    d = np.sqrt(((p[:, None] - p[None]) ** 2).sum(-1))
    if np.any(d[~np.eye(len(p), dtype=bool)] == 0):
        return
    sp = space_from_matrix(d, np.ones(len(p)))
    assert sp.check_metric() <= 1e-9
    for a, b in itertools.combinations(range(len(p)), 2):
        assert sp.dist[a, b] == sp.dist[b, a]
