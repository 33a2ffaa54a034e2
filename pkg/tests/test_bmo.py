import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmolab.bmo import (bmo_norm, bmo_report, dist_upper, epsilon_L, jn_tail, oscillations,
                        tail_curve)
from bmolab.functions import make_function
from bmolab.semigroup import build_operator
from bmolab.space import build_grid_space, enumerate_balls

# Brute force over every (center, radius) pair with matrix-exponential
# semigroups and the same member-set deduplication (first radius kept).
BMO_LOG = 0.826516892993692
EPS_LOG = 0.8462766911980429


def test_log_norm_frozen(op256, balls256, log_f):
    val, wit = bmo_norm(op256, log_f, balls256)
    assert val == pytest.approx(BMO_LOG, rel=1e-9)
    assert wit in balls256


def test_log_epsilon_frozen(op256, balls256, log_f):
    eps, lam_min = epsilon_L(op256, log_f, balls256)
    assert eps == pytest.approx(EPS_LOG, rel=1e-9)
    assert lam_min == pytest.approx(2 * BMO_LOG, rel=1e-9)


def test_constant_has_zero_norm(op256, balls256):
    f = np.full(256, 3.5)
    assert bmo_norm(op256, f, balls256)[0] == pytest.approx(0.0, abs=1e-12)
    assert epsilon_L(op256, f, balls256)[0] == 0.0


def test_bounded_function_has_zero_rate(path256, op256, balls256):
    f = make_function(path256, "indicator(a=0, b=0.5)")
    eps, _ = epsilon_L(op256, f, balls256)
    assert eps == 0.0
    assert bmo_norm(op256, f, balls256)[0] > 0


def test_tail_curve_monotone(op256, balls256, log_f):
    lams = np.linspace(0.1, 5, 30)
    tails = tail_curve(op256, log_f, balls256, lams)
    assert np.all(np.diff(tails) <= 1e-15)
    assert np.all((tails >= 0) & (tails <= 1))
    assert jn_tail(op256, log_f, balls256, 0.5) == pytest.approx(
        tail_curve(op256, log_f, balls256, [0.5])[0])
    with pytest.raises(ValueError):
        jn_tail(op256, log_f, balls256, 0.0)


def test_tail_bound_holds_on_grid(op256, balls256, log_f):
    eps, lam_min, (lams, tails) = epsilon_L(op256, log_f, balls256, return_curve=True)
    assert np.all(tails <= np.exp(-lams / eps) * (1 + 1e-12))
    assert len(lams) == 64 and lams[0] == lam_min


def test_oscillation_clamps_small_radii(op256, log_f):
    s = op256.space.spacing
    osc = oscillations(op256, log_f, [s / 4, s])
    assert np.array_equal(osc[s / 4], osc[s])


def test_dist_upper_budget(op256, balls256, log_f):
    bound, M = dist_upper(op256, log_f, balls256)
    assert 0 < bound <= BMO_LOG
    assert 0 <= M <= 2 * BMO_LOG * (1 + 1e-12)
    # a larger budget can only help
    assert dist_upper(op256, log_f, balls256, budget=2.0)[0] <= bound + 1e-15


def test_dist_upper_admits_candidate(op256, balls256, log_f):
    g = np.clip(log_f, -1.0, 1.0)
    bound, M = dist_upper(op256, log_f, balls256, g=g, n_grid=2)
    assert bound <= bmo_norm(op256, log_f - g, balls256)[0]


def test_report_fields(op256, balls256, log_f):
    rep = bmo_report(op256, log_f, balls256)
    assert rep.norm == pytest.approx(BMO_LOG, rel=1e-9)
    assert rep.epsilon_L == pytest.approx(EPS_LOG, rel=1e-9)
    assert len(rep.tail_curve) == 64
    assert rep.dist_upper is not None
    assert bmo_report(op256, log_f, balls256, with_dist=False).dist_upper is None


def test_empty_ball_list(op256, log_f):
    with pytest.raises(ValueError):
        bmo_norm(op256, log_f, [])


def test_homogeneity_exact(op256, balls256, log_f):
    base = bmo_norm(op256, log_f, balls256)[0]
    eps0, _ = epsilon_L(op256, log_f, balls256)
    d0, _ = dist_upper(op256, log_f, balls256)
    for s in (2.0, 4.0):
        assert bmo_norm(op256, s * log_f, balls256)[0] == pytest.approx(s * base, rel=1e-12)
        assert epsilon_L(op256, s * log_f, balls256)[0] == pytest.approx(s * eps0, rel=1e-12)
        assert dist_upper(op256, s * log_f, balls256)[0] == pytest.approx(s * d0, rel=1e-12)


_SMALL = {}


def _small():
    if not _SMALL:
        sp = build_grid_space(1, 32)
        _SMALL.update(op=build_operator(sp), balls=enumerate_balls(sp, 2))
    return _SMALL["op"], _SMALL["balls"]


@settings(max_examples=30, deadline=None)
@given(f=st.lists(st.floats(-10, 10), min_size=32, max_size=32),
       g=st.lists(st.floats(-10, 10), min_size=32, max_size=32), c=st.floats(-5, 5))
def test_seminorm_properties(f, g, c):
    op, balls = _small()
    f, g = np.array(f), np.array(g)
    nf = bmo_norm(op, f, balls)[0]
    ng = bmo_norm(op, g, balls)[0]
    assert bmo_norm(op, f + g, balls)[0] <= nf + ng + 1e-9
    assert bmo_norm(op, c * f, balls)[0] == pytest.approx(abs(c) * nf, rel=1e-9, abs=1e-12)
    assert bmo_norm(op, f + c, balls)[0] == pytest.approx(nf, rel=1e-9, abs=1e-9)
