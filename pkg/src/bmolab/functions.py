"""Named test functions on grid spaces and a small sum-of-terms expression language.

An expression is a ``+``-separated list of terms ``[coef*]name[(key=value, ...)]``::

    log_singularity(x0=0.3) + 0.5*log_singularity(x0=0.8)

Positions such as ``x0`` are coordinates in ``[0, 1)``, applied to every
axis and snapped to the nearest grid point.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .space import Space

__all__ = ["GENERATORS", "make_function", "parse_expression", "DEFAULT_SUITE"]

DEFAULT_SUITE = (
    "log_singularity(x0=0.5)",
    "log_singularity(x0=0)",
    "log_singularity(x0=0.3) + 0.5*log_singularity(x0=0.8)",
    "spike(at=0.390625, height=10)",
    "log_singularity(x0=0.7) + random_bounded(amplitude=0.5, seed=1)",
)


def _nearest(space: Space, pos: float) -> int:
    if space.coords is None:
        return int(round(pos * (space.n - 1)))
    target = np.full(space.coords.shape[1], pos)
    return int(np.argmin(np.abs(space.coords - target).sum(axis=1)))


def _first_coord(space: Space) -> np.ndarray:
    if space.coords is None:
        return np.arange(space.n) / space.n
    return space.coords[:, 0]


def constant(space: Space, value: float = 1.0) -> np.ndarray:
    return np.full(space.n, float(value))


def indicator(space: Space, a: float = 0.0, b: float = 0.5) -> np.ndarray:
    """``1`` where the first coordinate lies in ``[a, b)``."""
    x = _first_coord(space)
    return ((x >= a) & (x < b)).astype(float)


def log_singularity(space: Space, x0: float = 0.5) -> np.ndarray:
    """``log(1 / (d(x, p) + spacing))`` with ``p`` the grid point nearest to ``x0``."""
    p = _nearest(space, x0)
    return np.log(1.0 / (space.dist[p] + space.spacing))


def spike(space: Space, at: float = 0.390625, height: float = 10.0) -> np.ndarray:
    """``height`` at one point on top of ``sin(2 pi x_1)``."""
    f = np.sin(2 * np.pi * _first_coord(space))
    f[_nearest(space, at)] += height
    return f


def random_bounded(space: Space, amplitude: float = 0.5, seed: int = 1) -> np.ndarray:
    """Independent uniform values in ``[-amplitude, amplitude]``."""
    return np.random.default_rng(int(seed)).uniform(-amplitude, amplitude, space.n)


def from_file(space: Space, path: str = "") -> np.ndarray:
    """Values read from ``.npy`` or whitespace-separated text."""
    p = Path(path)
    f = np.load(p) if p.suffix == ".npy" else np.loadtxt(p)
    f = np.asarray(f, dtype=float).ravel()
    if len(f) != space.n:
        raise ValueError(f"{path}: expected {space.n} values, found {len(f)}")
    return f


GENERATORS = {
    "constant": constant,
    "indicator": indicator,
    "log_singularity": log_singularity,
    "spike": spike,
    "random_bounded": random_bounded,
    "file": from_file,
}

_TERM = re.compile(r"^\s*(?:([-+0-9.eE]+)\s*\*\s*)?([a-z_]+)\s*(?:\((.*)\))?\s*$")


def _split_terms(expr: str) -> list:
    terms, depth, cur = [], 0, ""
    for i, ch in enumerate(expr):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        # a '+' splits terms unless it is inside parentheses or part of an exponent
        if ch == "+" and depth == 0 and i > 0 and expr[i - 1] not in "eE":
            terms.append(cur)
            cur = ""
        else:
            cur += ch
    terms.append(cur)
    return [t for t in terms if t.strip()]


def _value(text: str):
    text = text.strip()
    try:
        return float(text) if any(c in text for c in ".eE") else int(text)
    except ValueError:
        return text.strip("'\"")


def parse_expression(expr: str) -> list:
    """List of ``(coef, name, kwargs)`` terms.

    Examples
    --------
    >>> parse_expression("2*spike(height=3) + constant")
    [(2.0, 'spike', {'height': 3}), (1.0, 'constant', {})]
    """
    out = []
    for term in _split_terms(expr):
        m = _TERM.match(term)
        if m is None:
            raise ValueError(f"cannot parse function term {term.strip()!r}")
        coef, name, args = m.groups()
        if name not in GENERATORS:
            raise ValueError(f"unknown function {name!r}; expected one of {sorted(GENERATORS)}")
        kwargs = {}
        if args and args.strip():
            for item in args.split(","):
                if "=" not in item:
                    raise ValueError(f"argument {item.strip()!r} of {name} must be key=value")
                k, v = item.split("=", 1)
                kwargs[k.strip()] = _value(v)
        out.append((float(coef) if coef else 1.0, name, kwargs))
    if not out:
        raise ValueError("empty function expression")
    return out


def make_function(space: Space, expr: str) -> np.ndarray:
    f = np.zeros(space.n)
    for coef, name, kwargs in parse_expression(expr):
        try:
            f += coef * GENERATORS[name](space, **kwargs)
        except TypeError as exc:
            raise ValueError(f"bad arguments for {name}: {exc}") from None
    return f
