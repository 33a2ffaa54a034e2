import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmolab.bmo import bmo_norm
from bmolab.carleson import (CarlesonMeasure, balayage_build, carleson_norm, iterate_balayage,
                             sweep)
from bmolab.semigroup import heat_kernel


def _brute_norm(sigma, balls):
    best = 0.0
    for b in balls:
        inside = np.isin(sigma.y, b.members) & (sigma.t < b.radius)
        best = max(best, np.abs(sigma.w[inside]).sum() / b.mass)
    return best


def test_empty_measure(op256, balls256):
    e = CarlesonMeasure.empty()
    assert len(e) == 0 and e.total == 0.0
    assert carleson_norm(e, balls256) == 0.0
    assert np.array_equal(sweep(op256, e), np.zeros(256))


def test_one_atom_norm(balls256):
    sigma = CarlesonMeasure.from_atoms([37], [5], [2.0 ** -5], [0.3])
    expected = max(0.3 / b.mass for b in balls256 if 37 in b.members and b.radius > 2.0 ** -5)
    assert carleson_norm(sigma, balls256) == pytest.approx(expected, rel=1e-14)


def test_norm_matches_brute_force(balls256):
    rng = np.random.default_rng(3)
    k = rng.integers(1, 8, 40)
    sigma = CarlesonMeasure.from_atoms(rng.integers(0, 256, 40), k, 2.0 ** -k,
                                       rng.normal(size=40))
    assert carleson_norm(sigma, balls256) == pytest.approx(_brute_norm(sigma, balls256), rel=1e-12)


def test_from_atoms_merges_and_drops_zeros():
    sigma = CarlesonMeasure.from_atoms([3, 3, 4, 5], [2, 2, 2, 1], [0.25, 0.25, 0.25, 0.5],
                                       [1.0, 2.0, 0.5, 0.0])
    assert len(sigma) == 2
    assert sorted(zip(sigma.y.tolist(), sigma.w.tolist())) == [(3, 3.0), (4, 0.5)]
    with pytest.raises(ValueError):
        CarlesonMeasure.from_atoms([1], [0], [0.0], [1.0])
    with pytest.raises(ValueError):
        CarlesonMeasure.from_atoms([1], [0], [1.0], [np.nan])


def test_sweep_single_atom_is_kernel_column(op256, path256):
    t = 0.05
    sigma = CarlesonMeasure.from_atoms([10], [3], [t], [0.7])
    K = heat_kernel(op256, t * t)
    np.testing.assert_allclose(sweep(op256, sigma), 0.7 * K[:, 10], rtol=1e-10, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 16))
def test_sweep_linear_and_norm_subadditive(op256, balls256, a, b, seed):
    rng = np.random.default_rng(seed)
    k1, k2 = rng.integers(1, 7, 6), rng.integers(1, 7, 6)
    s1 = CarlesonMeasure.from_atoms(rng.integers(0, 256, 6), k1, 2.0 ** -k1, rng.normal(size=6))
    s2 = CarlesonMeasure.from_atoms(rng.integers(0, 256, 6), k2, 2.0 ** -k2, rng.normal(size=6))
    combo = s1.scaled(a).union(s2.scaled(b))
    np.testing.assert_allclose(sweep(op256, combo), a * sweep(op256, s1) + b * sweep(op256, s2),
                               atol=1e-9 * (1 + abs(a) + abs(b)) * 256)
    u = s1.union(s2)
    assert carleson_norm(u, balls256) <= (carleson_norm(s1, balls256)
                                          + carleson_norm(s2, balls256)) * (1 + 1e-12)
    assert carleson_norm(s1.scaled(a), balls256) == pytest.approx(abs(a) * carleson_norm(s1, balls256),
                                                                  rel=1e-12, abs=1e-300)


def test_balayage_identity(op256, ens256, log_f, balls256):
    res = balayage_build(op256, log_f, ens256, theta=0.125, balls=balls256)
    assert res.residual < 1e-10
    np.testing.assert_allclose(res.g + sweep(op256, res.sigma) + res.remainder, log_f, atol=1e-10)
    assert 0 <= res.contraction < 1
    norm = bmo_norm(op256, log_f, balls256)[0]
    assert res.lam >= 2 * norm * (1 - 1e-12)


def test_balayage_theta_range(op256, ens256, log_f, balls256):
    for bad in (0.0, 1.0, -0.5):
        with pytest.raises(ValueError):
            balayage_build(op256, log_f, ens256, theta=bad, balls=balls256)


def test_balayage_constant(op256, ens256, balls256):
    f = np.full(256, 1.5)
    res = balayage_build(op256, f, ens256, balls=balls256)
    assert len(res.sigma) == 0 and res.contraction == 0.0
    np.testing.assert_array_equal(res.g, f)
    it = iterate_balayage(op256, f, ens256, balls=balls256)
    assert it.constant == 0.0 and it.residual == 0.0


def test_iteration_history(op256, ens256, log_f, balls256):
    it = iterate_balayage(op256, log_f, ens256, balls=balls256)
    assert it.residual < 1e-9
    rems = [h["remainder_bmo"] for h in it.history]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(rems, rems[1:]))
    assert it.history[0]["contraction"] <= 0.75
    lines = it.history_csv().strip().splitlines()
    assert len(lines) == len(it.history) + 1
    assert lines[0].startswith("iteration,theta")
    for h in it.history:
        total = h["bucket_coarse"] + h["bucket_middle"] + h["bucket_fine"]
        assert total >= 0
    assert it.constant > 0


def test_iteration_argument_checks(op256, ens256, log_f, balls256):
    with pytest.raises(ValueError):
        iterate_balayage(op256, log_f, ens256, max_iter=0, balls=balls256)
    with pytest.raises(ValueError):
        iterate_balayage(op256, log_f, ens256, rho_target=1.0, balls=balls256)
