"""Hardy-space atoms, the conical square function and pairings against BMO functions."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .bmo import bmo_norm, semigroup_time
from .semigroup import Operator, heat_apply
from .space import Ball, as_ball_list, enumerate_balls

__all__ = ["Atom", "make_atom", "shrink", "square_function", "pairing_test", "atom_family"]

ATOM_RTOL = 1e-12


@dataclass(eq=False)
class Atom:
    """``a = L^M b`` with ``b`` supported in ``ball`` and
    ``||(r^2 L)^k b||_inf <= r^(2M) / mu(ball)`` for ``k = 0..M``."""

    ball: Ball
    M: int
    b: np.ndarray
    a: np.ndarray

    @property
    def r(self) -> float:
        return self.ball.radius

    def scaled(self, s: float) -> "Atom":
        return Atom(self.ball, self.M, s * self.b, s * self.a)

    def to_json(self) -> str:
        return json.dumps({"ball": {"center": self.ball.center, "radius": self.ball.radius,
                                    "members": self.ball.members.tolist()},
                           "M": self.M, "b": self.b.tolist()})


def shrink(op: Operator, members: np.ndarray, layers: int) -> np.ndarray:
    """Points of ``members`` whose ``layers``-step stencil neighbourhood stays inside ``members``.

    Neighbours are the nonzero off-diagonal entries of the operator matrix,
    so ``L^k`` applied to a vector supported on the result stays supported
    in ``members`` for ``k <= layers``.
    """
    adj = (op.matrix != 0)
    np.fill_diagonal(adj, False)
    inside = np.zeros(op.n, dtype=bool)
    inside[members] = True
    for _ in range(layers):
        outside_nbr = adj[:, ~inside].any(axis=1)
        inside &= ~outside_nbr
    return np.flatnonzero(inside)


def _powers(op: Operator, b: np.ndarray, M: int) -> list:
    out = [b]
    for _ in range(M):
        out.append(op.matrix @ out[-1])
    return out


def make_atom(op: Operator, ball: Ball, M: int = 1) -> Atom:
    """Largest multiple of a bump on the shrunk ball that is a ``(1, inf, M)``-atom.

    The profile is ``1 - (d(c, x) / (r + spacing))^2`` on the ball shrunk by
    ``M`` stencil layers.  Its scale is the largest ``s`` with
    ``||(r^2 L)^k (s phi)||_inf <= r^(2M) / mu(B)`` for all ``k <= M``, so at
    least one of these constraints is an equality.
    """
    if M not in (1, 2):
        raise ValueError(f"M must be 1 or 2, got {M}")
    sp = op.space
    core = shrink(op, ball.members, M)
    if not len(core):
        raise ValueError(f"ball of radius {ball.radius:g} around {ball.center} is empty "
                         f"after shrinking by {M} layers")
    r = ball.radius
    phi = np.zeros(op.n)
    phi[core] = 1.0 - (sp.dist[ball.center, core] / (r + sp.spacing)) ** 2
    pw = _powers(op, phi, M)
    bound = r ** (2 * M) / ball.mass
    sizes = np.array([r ** (2 * k) * np.abs(v).max() for k, v in enumerate(pw)])
    if not np.all(np.isfinite(sizes)) or sizes.max() == 0:
        raise ValueError("atom constraints force a zero scale")
    s = bound / sizes.max()
    b = s * phi
    atom = Atom(ball=ball, M=M, b=b, a=_powers(op, b, M)[-1])
    _assert_atom(op, atom)
    return atom


def _assert_atom(op: Operator, atom: Atom) -> None:
    pw = _powers(op, atom.b, atom.M)
    outside = np.ones(op.n, dtype=bool)
    outside[atom.ball.members] = False
    if not np.array_equal(pw[-1], atom.a):
        raise AssertionError("a != L^M b")
    bound = atom.r ** (2 * atom.M) / atom.ball.mass
    for k, v in enumerate(pw):
        if np.any(v[outside] != 0):
            raise AssertionError(f"L^{k} b leaves the ball")
        if atom.r ** (2 * k) * np.abs(v).max() > bound * (1 + ATOM_RTOL):
            raise AssertionError(f"size condition fails for k = {k}")


def check_atom(op: Operator, atom: Atom) -> bool:
    """True when conditions (a = L^M b, support, size) hold for ``atom``."""
    try:
        _assert_atom(op, atom)
    except AssertionError:
        return False
    return True


def atom_family(op: Operator, balls=None, per_radius: int = 8, Ms=(1, 2)) -> list:
    """Atoms on evenly spread balls of every radius whose shrunk core is nonempty."""
    balls = enumerate_balls(op.space, 2) if balls is None else as_ball_list(balls)
    out = []
    for r in np.unique(balls.radii):
        rows = np.flatnonzero(balls.radii == r)
        pick = rows[np.linspace(0, len(rows) - 1, min(per_radius, len(rows))).round().astype(int)]
        for j, row in enumerate(np.unique(pick)):
            M = Ms[j % len(Ms)]
            try:
                out.append(make_atom(op, balls[row], M))
            except ValueError:
                continue
    return out


def _dyadic_t(space) -> np.ndarray:
    t = [space.spacing]
    while t[-1] * 2 <= max(space.diameter, space.spacing) * (1 + 1e-12):
        t.append(t[-1] * 2)
    return np.array(t)


def square_function(op: Operator, f, t_grid=None) -> np.ndarray:
    """Discrete conical square function.

    ``S f(x)^2 = sum_t dlog(t) sum_{d(x, y) < t} |t^2 L e^{-t^2 L} f (y)|^2 mu(y) / mu(B(x, t))``

    where ``B(x, t) = {y : d(x, y) < t}`` and ``dlog(t) = log(t_next / t)``
    (``log 2`` on the default dyadic grid ``spacing * 2^j``).
    """
    f = np.asarray(f, dtype=float)
    sp = op.space
    t_grid = _dyadic_t(sp) if t_grid is None else np.asarray(t_grid, dtype=float)
    if len(t_grid) > 1:
        dlog = np.log(t_grid[1:] / t_grid[:-1])
        dlog = np.append(dlog, dlog[-1])
    else:
        dlog = np.array([np.log(2.0)])
    mu = sp.measure
    d = sp.dist
    acc = np.zeros(op.n)
    lam = op.eigenvalues
    for t, w in zip(t_grid, dlog):
        v = op.apply_spectral(f, t * t * lam * np.exp(-t * t * lam))
        cone = (d < t).astype(float)
        acc += w * (cone @ (v * v * mu)) / (cone @ mu)
    return np.sqrt(acc)


def pairing_test(op: Operator, f, atoms, balls=None) -> dict:
    """Pair ``f`` with each atom and compare against its BMO norm.

    Besides ``max |<f, a>| / ||f||_BMO`` the report splits every pairing as

    ``<f, a> = <f - e^{-r^2 L} f, a> + <e^{-r^2 L} f, a>``;

    the first part is at most ``||f||_BMO`` for atoms on enumerated balls,
    the second (``drift``) is recorded per atom.

    Raises
    ------
    ValueError
        If ``||f||_BMO = 0`` while some pairing exceeds ``1e-10``.
    """
    f = np.asarray(f, dtype=float)
    balls = enumerate_balls(op.space, 2) if balls is None else as_ball_list(balls)
    mu = op.space.measure
    norm = bmo_norm(op, f, balls)[0]
    pair = np.array([float(np.sum(f * at.a * mu)) for at in atoms])
    drift = np.array([float(np.sum(heat_apply(op, semigroup_time(op, at.r), f) * at.a * mu))
                      for at in atoms])
    radii = np.array([at.r for at in atoms])
    if norm == 0:
        if np.any(np.abs(pair) > 1e-10):
            raise ValueError("nonzero pairing with a function of zero BMO norm: "
                             "the operator is not conservative or an atom is invalid")
        ratio = 0.0
    else:
        ratio = float(np.abs(pair).max() / norm) if len(atoms) else 0.0
    per_radius = {float(r): float(np.abs(pair[radii == r]).max()) for r in np.unique(radii)}
    return {"n_atoms": len(atoms), "bmo_norm": float(norm), "pairings": pair, "drift": drift,
            "radii": radii, "max_ratio": ratio, "max_abs": float(np.abs(pair).max()) if len(atoms) else 0.0,
            "max_drift": float(np.abs(drift).max()) if len(atoms) else 0.0,
            "per_radius": per_radius}
