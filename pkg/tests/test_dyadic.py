import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmolab.dyadic import (GradedSequence, annulus_ratio, boundary_hit_rate, build_shifted_dyadic,
                           default_k_range, draw_shifts, fit_annulus, sample_ensemble, verify_axioms)
from bmolab.space import build_grid_space


def _sets(system, k):
    return [q.members.tolist() for q in system.cubes(k)]


def test_unshifted_eight_point_path():
    sp = build_grid_space(1, 8)
    s = build_shifted_dyadic(sp, [0.0])
    assert _sets(s, 0) == [list(range(8))]
    assert _sets(s, 1) == [[0, 1, 2, 3], [4, 5, 6, 7]]
    assert _sets(s, 3) == [[i] for i in range(8)]
    assert verify_axioms(s).all_passed


def test_half_step_shift_merges_edge_sliver():
    sp = build_grid_space(1, 8)
    s = build_shifted_dyadic(sp, [0.5 / 8])
    assert _sets(s, 3) == [[i] for i in range(8)]
    assert _sets(s, 1) == [[0, 1, 2, 3, 4], [5, 6, 7]]
    assert verify_axioms(s).all_passed


def test_periodic_boxes_wrap():
    sp = build_grid_space(1, 8, "periodic")
    s = build_shifted_dyadic(sp, [0.3])
    members = sorted(m for q in s.cubes(1) for m in q.members.tolist())
    assert members == list(range(8))
    assert any(0 in q.members and 7 in q.members for q in s.cubes(1))
    assert verify_axioms(s).all_passed


def test_shift_validation():
    sp = build_grid_space(2, 4)
    with pytest.raises(ValueError):
        build_shifted_dyadic(sp, [0.1])
    with pytest.raises(ValueError):
        build_shifted_dyadic(sp, [0.1, 1.0])


def test_default_levels():
    assert default_k_range(build_grid_space(1, 256)) == (0, 8)
    assert default_k_range(build_grid_space(2, 16)) == (0, 4)


@pytest.mark.parametrize("dim,side,boundary", [(1, 64, "reflecting"), (1, 64, "periodic"),
                                               (2, 8, "reflecting"), (2, 8, "periodic")])
def test_ensemble_axioms(dim, side, boundary):
    sp = build_grid_space(dim, side, boundary)
    ens = sample_ensemble(sp, 30, seed=11)
    for s in ens.systems:
        rep = verify_axioms(s)
        assert rep.all_passed, rep.witnesses
        assert s.c1_measured >= s.c1


def test_verify_axioms_detects_broken_nesting():
    sp = build_grid_space(1, 16)
    s = build_shifted_dyadic(sp, [0.0])
    a, b = s.cubes(3)[1], s.cubes(3)[2]
    a.parent, b.parent = b.parent, a.parent
    rep = verify_axioms(s)
    assert not rep.passed["nesting"]
    assert rep.violations >= 1


def test_verify_axioms_detects_tight_constants():
    sp = build_grid_space(1, 16)
    s = build_shifted_dyadic(sp, [0.0])
    rep = verify_axioms(s, c1=0.25, C1=0.3)
    assert not rep.passed["ball_sandwich"]


def test_draw_shifts_deterministic():
    a = draw_shifts(7, 5, 2)
    b = draw_shifts(7, 5, 2)
    assert np.array_equal(a, b)
    assert a.shape == (5, 2) and np.all((a >= 0) & (a < 1))
    assert not np.array_equal(a, draw_shifts(8, 5, 2))


def test_ensemble_weights():
    ens = sample_ensemble(build_grid_space(1, 16), 4, seed=0)
    assert len(ens) == 4
    assert ens.weights.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        sample_ensemble(build_grid_space(1, 16), 0, seed=0)


def _exact_rate(k, eps, side=256):
    """Probability over a uniform shift that a point sits within eps of a level-k cut.

    Cuts of a level-k grid sit at shift + j h; a point x is within eps of
    another cube whenever a cut lies in one of the J = ceil(eps / s) - 1 gaps
    on either side of it, each gap of length s.
    """
    s = 1.0 / side
    h = 0.5 ** k
    J = int(np.ceil(eps / s - 1e-9)) - 1
    return min(1.0, 2 * J * s / h)


def test_boundary_rate_matches_exact_probability():
    sp = build_grid_space(1, 256)
    ens = sample_ensemble(sp, 400, seed=1)
    s = sp.spacing
    for k, eps in [(4, 8 * s), (4, 4 * s), (4, 2 * s), (3, 4 * s)]:
        rate = boundary_hit_rate(ens, 128, k, eps)
        exact = _exact_rate(k, eps)
        # three binomial standard deviations at M = 400
        sd = np.sqrt(exact * (1 - exact) / 400)
        assert abs(rate - exact) <= 3 * sd + 1e-12


def test_boundary_rate_zero_eps():
    sp = build_grid_space(1, 32)
    ens = sample_ensemble(sp, 10, seed=0)
    assert boundary_hit_rate(ens, 3, 2, 0.0) == 0.0
    with pytest.raises(ValueError):
        boundary_hit_rate(ens, 3, 2, -1.0)


def test_annulus_fit_on_path():
    sp = build_grid_space(1, 256)
    s = build_shifted_dyadic(sp, [0.0])
    eta, C, worst = fit_annulus(s, [1 / 16, 1 / 8, 1 / 4, 1 / 2, 1])
    assert eta == pytest.approx(1.0, abs=0.05)
    assert C == pytest.approx(2.0, rel=0.05)
    assert np.all(np.diff(worst) >= 0)


def test_annulus_ratio_middle_cube():
    sp = build_grid_space(1, 16)
    s = build_shifted_dyadic(sp, [0.0])
    Q = s.cubes(2)[1]
    assert Q.members.tolist() == [4, 5, 6, 7]
    # 4 neighbours on each side within one side length
    assert annulus_ratio(s, Q, 1.0) == 2.0
    with pytest.raises(ValueError):
        annulus_ratio(s, Q, 0.0)


def test_graded_sequence_check():
    sp = build_grid_space(1, 16)
    s = build_shifted_dyadic(sp, [0.0])
    good = GradedSequence(s.top, [[s.cubes(1)[0]], [s.cubes(3)[0]]], gamma=0.5)
    assert good.check(sp.measure) == []
    assert good.worst_fraction(sp.measure) == [0.5, 0.25]
    heavy = GradedSequence(s.top, [[s.cubes(1)[0], s.cubes(2)[2]]], gamma=0.5)
    kinds = {v[0] for v in heavy.check(sp.measure)}
    assert "mass" in kinds
    loose = GradedSequence(s.top, [[s.cubes(2)[0]], [s.cubes(3)[4]]], gamma=0.5)
    assert "nested" in {v[0] for v in loose.check(sp.measure)}


def test_system_json_roundtrip_shape():
    sp = build_grid_space(1, 8)
    s = build_shifted_dyadic(sp, [0.25])
    doc = json.loads(s.to_json())
    assert doc["k_min"] == 0 and doc["k_max"] == 3
    assert sum(len(c["members"]) for c in doc["levels"]["2"]) == 8


@settings(max_examples=30, deadline=None)
@given(shift=st.floats(0.0, 1.0, exclude_max=True), side=st.sampled_from([4, 8, 16, 32, 64]),
       boundary=st.sampled_from(["reflecting", "periodic"]))
def test_random_shift_axioms_1d(shift, side, boundary):
    sp = build_grid_space(1, side, boundary)
    s = build_shifted_dyadic(sp, [shift])
    rep = verify_axioms(s)
    assert rep.all_passed, rep.witnesses
    for k in range(s.k_min + 1, s.k_max + 1):
        for q in s.cubes(k):
            assert set(q.members.tolist()) <= set(q.parent.members.tolist())


@settings(max_examples=15, deadline=None)
@given(shift=st.tuples(st.floats(0.0, 1.0, exclude_max=True), st.floats(0.0, 1.0, exclude_max=True)),
       boundary=st.sampled_from(["reflecting", "periodic"]))
def test_random_shift_axioms_2d(shift, boundary):
    sp = build_grid_space(2, 8, boundary)
    rep = verify_axioms(build_shifted_dyadic(sp, list(shift)))
    assert rep.all_passed, rep.witnesses
