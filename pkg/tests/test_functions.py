import numpy as np
import pytest

from bmolab.functions import DEFAULT_SUITE, make_function, parse_expression
from bmolab.space import build_grid_space


def test_parse_terms():
    terms = parse_expression("log_singularity(x0=0.3) + 0.5*log_singularity(x0=0.8)")
    assert terms == [(1.0, "log_singularity", {"x0": 0.3}), (0.5, "log_singularity", {"x0": 0.8})]
    assert parse_expression("1e-3*constant") == [(1e-3, "constant", {})]


@pytest.mark.parametrize("bad", ["", "nosuch(x=1)", "spike(height)", "2 ** spike"])
def test_parse_errors(bad):
    with pytest.raises(ValueError):
        parse_expression(bad)


def test_bad_keyword(path256):
    with pytest.raises(ValueError, match="bad arguments"):
        make_function(path256, "spike(width=3)")


def test_values(path256):
    f = make_function(path256, "spike(at=0.390625, height=10)")
    assert np.argmax(f) == 100 and f[100] == pytest.approx(10 + np.sin(2 * np.pi * 100 / 256))
    g = make_function(path256, "log_singularity(x0=0)")
    assert g[0] == pytest.approx(np.log(256.0))
    ind = make_function(path256, "indicator(a=0, b=0.5)")
    assert ind.sum() == 128
    c = make_function(path256, "2*constant(value=3)")
    assert np.all(c == 6.0)


def test_random_bounded_reproducible(path256):
    a = make_function(path256, "random_bounded(amplitude=0.5, seed=1)")
    b = make_function(path256, "random_bounded(amplitude=0.5, seed=1)")
    assert np.array_equal(a, b) and np.abs(a).max() <= 0.5


def test_file_input(path256, tmp_path):
    vals = np.arange(256, dtype=float)
    p = tmp_path / "f.npy"
    np.save(p, vals)
    assert np.array_equal(make_function(path256, f"file(path={p})"), vals)
    q = tmp_path / "short.txt"
    np.savetxt(q, vals[:10])
    with pytest.raises(ValueError, match="expected 256"):
        make_function(path256, f"file(path={q})")


def test_suite_on_square():
    sp = build_grid_space(2, 16)
    for expr in DEFAULT_SUITE:
        f = make_function(sp, expr)
        assert f.shape == (256,) and np.all(np.isfinite(f))
