"""Balayage of Carleson measures and the iterative representation of BMO functions.

A discrete Carleson measure is a finite list of atoms ``(y, t, w)``: a point
mass ``w`` at ``y`` on the time slice ``t``.  Sweeping it through the heat
kernel gives ``x -> sum w K_{t^2}(x, y)``.  Starting from a stopping-time
decomposition, :func:`balayage_build` writes

``f = g + sweep(sigma) + remainder``

with ``g`` bounded, and :func:`iterate_balayage` repeats the construction on
the remainder until it is negligible in BMO norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bmo import bmo_norm
from .decompose import _top_average, heat_ladder, stopping_time
from .dyadic import DELTA, LatticeEnsemble
from .semigroup import Operator, heat_apply
from .space import as_ball_list, enumerate_balls

__all__ = [
    "CarlesonMeasure", "BalayageResult", "IterationResult", "balayage_build", "carleson_norm",
    "sweep", "iterate_balayage", "DEFAULT_THETA", "DEFAULT_C0", "DEFAULT_BUCKET_A",
]

DEFAULT_THETA = 1.0 / 8
DEFAULT_C0 = 2.0
DEFAULT_BUCKET_A = 8.0
MIN_THETA = 2.0 ** -12


@dataclass(eq=False)
class CarlesonMeasure:
    """Atoms ``(y[i], t[i], w[i])`` with ``t = theta * 2^-k[i]``.

    Atoms are kept unique by ``(y, k)``; :meth:`union` adds weights of
    coinciding atoms.
    """

    y: np.ndarray
    k: np.ndarray
    t: np.ndarray
    w: np.ndarray

    @classmethod
    def empty(cls) -> "CarlesonMeasure":
        return cls(np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros(0))

    @classmethod
    def from_atoms(cls, y, k, t, w) -> "CarlesonMeasure":
        y = np.asarray(y, dtype=int)
        k = np.asarray(k, dtype=int)
        t = np.asarray(t, dtype=float)
        w = np.asarray(w, dtype=float)
        if not np.all(np.isfinite(w)):
            raise ValueError("atom weights must be finite")
        if np.any(t <= 0):
            raise ValueError("atom scales must be positive")
        if not len(y):
            return cls.empty()
        keys = np.stack([k, y], axis=1)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        inv = inv.ravel()
        w_sum = np.zeros(len(uniq))
        np.add.at(w_sum, inv, w)
        t_of = np.zeros(len(uniq))
        t_of[inv] = t
        keep = w_sum != 0
        return cls(uniq[keep, 1], uniq[keep, 0], t_of[keep], w_sum[keep])

    def __len__(self) -> int:
        return len(self.y)

    @property
    def total(self) -> float:
        return float(np.abs(self.w).sum())

    def union(self, other: "CarlesonMeasure") -> "CarlesonMeasure":
        return CarlesonMeasure.from_atoms(np.concatenate([self.y, other.y]),
                                          np.concatenate([self.k, other.k]),
                                          np.concatenate([self.t, other.t]),
                                          np.concatenate([self.w, other.w]))

    def scaled(self, s: float) -> "CarlesonMeasure":
        return CarlesonMeasure(self.y.copy(), self.k.copy(), self.t.copy(), s * self.w)

    def to_csv(self) -> str:
        lines = ["y,t,w"]
        lines += [f"{int(a)},{b!r},{c!r}" for a, b, c in zip(self.y, self.t, self.w)]
        return "\n".join(lines) + "\n"


@dataclass(eq=False)
class BalayageResult:
    g: np.ndarray
    sigma: CarlesonMeasure
    remainder: np.ndarray
    contraction: float
    theta: float
    lam: float
    f_levels: dict = field(default_factory=dict)
    residual: float = 0.0


def sweep(op: Operator, sigma: CarlesonMeasure) -> np.ndarray:
    """``x -> sum_atoms w K_{t^2}(x, y)`` with ``K`` the kernel density against ``mu``."""
    out = np.zeros(op.n)
    if not len(sigma):
        return out
    mu = op.space.measure
    for t in np.unique(sigma.t):
        sel = sigma.t == t
        v = np.zeros(op.n)
        np.add.at(v, sigma.y[sel], sigma.w[sel])
        out += heat_apply(op, float(t) ** 2, v / mu)
    return out


def carleson_norm(sigma: CarlesonMeasure, balls) -> float:
    """``max_B (sum of |w| over atoms with y in B and t < r_B) / mu(B)``."""
    if not len(sigma):
        return 0.0
    balls = as_ball_list(balls)
    n = max(int(sigma.y.max()) + 1, max(int(b.members.max()) + 1 for b in balls))
    mask = balls.mask_for(n).astype(float)
    ts = np.unique(sigma.t)
    # cum[:, j] = |w| per point over atoms with t <= ts[j - 1]; column 0 is empty
    cum = np.zeros((n, len(ts) + 1))
    for j, t in enumerate(ts):
        sel = sigma.t == t
        np.add.at(cum[:, j + 1], sigma.y[sel], np.abs(sigma.w[sel]))
    cum = np.cumsum(cum, axis=1)
    col = np.searchsorted(ts, balls.radii, side="left")
    boxed = np.einsum("bn,nb->b", mask, cum[:, col])
    return float((boxed / balls.masses).max())


def balayage_build(op: Operator, f, ensemble: LatticeEnsemble, theta: float = DEFAULT_THETA,
                   C0: float = DEFAULT_C0, balls=None) -> BalayageResult:
    """One balayage step ``f = g + sweep(sigma) + remainder``.

    Each system of the ensemble runs a stopping time with threshold
    ``lam = C0 ||f||_BMO`` (raised to the top-cube average if needed).  The
    coefficient parts are grouped by cube level ``k``, giving

    ``f_k = mean over systems of sum_{l(Q) = 2^-k} a_Q 1_Q``,

    and ``g`` is the mean of the bounded parts plus the coarse semigroup term.
    The atoms of ``sigma`` are ``(y, theta 2^-k, f_k(y) mu(y))`` and

    ``remainder = sum_k (I - e^{-theta^2 4^-k L}) f_k``.
    """
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    f = np.asarray(f, dtype=float)
    balls = enumerate_balls(op.space, 2) if balls is None else as_ball_list(balls)
    norm = bmo_norm(op, f, balls)[0]
    if norm == 0:
        return BalayageResult(g=f.copy(), sigma=CarlesonMeasure.empty(), remainder=np.zeros_like(f),
                              contraction=0.0, theta=theta, lam=0.0)
    ladders = [heat_ladder(op, f, s) for s in ensemble.systems]
    entry = max(_top_average(L, s.top) for L, s in zip(ladders, ensemble.systems))
    lam = max(C0 * norm, entry)
    n = len(f)
    M = len(ensemble.systems)
    g = np.zeros(n)
    levels: dict = {}
    for s, L in zip(ensemble.systems, ladders):
        forest = stopping_time(op, f, s, lam=lam, ladder=L)
        g += L.at(s.top.level) + forest.g_part
        for Q, star in forest.selected:
            part = levels.setdefault(Q.level, np.zeros(n))
            part[Q.members] += forest.coeff(Q, star)[Q.members]
    g /= M
    mu = op.space.measure
    ys, ks, ts, ws = [], [], [], []
    remainder = np.zeros(n)
    for k in sorted(levels):
        fk = levels[k] / M
        levels[k] = fk
        t = theta * DELTA ** k
        smooth = heat_apply(op, t * t, fk)
        remainder += fk - smooth
        nz = np.flatnonzero(fk)
        ys.append(nz)
        ks.append(np.full(len(nz), k))
        ts.append(np.full(len(nz), t))
        ws.append(fk[nz] * mu[nz])
    sigma = (CarlesonMeasure.from_atoms(np.concatenate(ys), np.concatenate(ks), np.concatenate(ts),
                                        np.concatenate(ws)) if ys else CarlesonMeasure.empty())
    residual = float(np.abs(f - g - sweep(op, sigma) - remainder).max())
    contraction = bmo_norm(op, remainder, balls)[0] / norm
    return BalayageResult(g=g, sigma=sigma, remainder=remainder, contraction=float(contraction),
                          theta=theta, lam=float(lam), f_levels=levels, residual=residual)


@dataclass(eq=False)
class IterationResult:
    g_total: np.ndarray
    sigma_total: CarlesonMeasure
    remainder: np.ndarray
    history: list
    theta: float
    constant: float
    residual: float

    def history_csv(self) -> str:
        keys = ["iteration", "theta", "g_inf", "carleson_norm", "contraction", "remainder_bmo",
                "bucket_coarse", "bucket_middle", "bucket_fine"]
        rows = [",".join(keys)]
        rows += [",".join(repr(h[k]) for k in keys) for h in self.history]
        return "\n".join(rows) + "\n"


def _buckets(sigma: CarlesonMeasure, radius: float, A: float) -> tuple[float, float, float]:
    """Mass of ``sigma`` with cube length ``2^-k`` above ``A r``, in ``(r, A r]``, and at most ``r``."""
    if not len(sigma):
        return 0.0, 0.0, 0.0
    ell = DELTA ** sigma.k.astype(float)
    w = np.abs(sigma.w)
    return (float(w[ell > A * radius].sum()),
            float(w[(ell > radius) & (ell <= A * radius)].sum()),
            float(w[ell <= radius].sum()))


def iterate_balayage(op: Operator, f, ensemble: LatticeEnsemble, theta: float = DEFAULT_THETA,
                      max_iter: int = 10, rho_target: float = 0.75, C0: float = DEFAULT_C0,
                      balls=None, auto_theta: bool = True, bucket_A: float = DEFAULT_BUCKET_A,
                      tol: float = 1e-10) -> IterationResult:
    """Iterate :func:`balayage_build` on successive remainders.

    ``f = g_total + sweep(sigma_total) + remainder`` holds after every step.
    The loop stops after ``max_iter`` steps, once the contraction exceeds
    ``rho_target`` for the second time, or when the remainder norm drops to
    ``tol`` times that of ``f``.  With ``auto_theta`` the first step halves
    ``theta`` until its contraction is at most ``rho_target``.

    Each history entry also splits the new atoms' mass into three buckets
    relative to the radius ``r`` of the ball realising the remainder's BMO
    norm: cube lengths above ``bucket_A r``, between ``r`` and ``bucket_A r``,
    and at most ``r``.

    Raises
    ------
    ValueError
        If the first step does not contract (contraction >= 1); ``theta``
        should then be halved.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if not 0 < rho_target < 1:
        raise ValueError("rho_target must lie in (0, 1)")
    f = np.asarray(f, dtype=float)
    balls = enumerate_balls(op.space, 2) if balls is None else as_ball_list(balls)
    norm_f = bmo_norm(op, f, balls)[0]
    step = balayage_build(op, f, ensemble, theta, C0, balls)
    while auto_theta and step.contraction > rho_target and theta / 2 >= MIN_THETA:
        theta /= 2
        step = balayage_build(op, f, ensemble, theta, C0, balls)
    if step.contraction >= 1:
        raise ValueError(f"first balayage step does not contract ({step.contraction:.4g} >= 1) "
                         f"at theta = {theta:g}; halve theta")
    g_total = np.zeros_like(f)
    sigma_total = CarlesonMeasure.empty()
    history = []
    failures = 0
    current = f
    for it in range(1, max_iter + 1):
        if it > 1:
            step = balayage_build(op, current, ensemble, theta, C0, balls)
        g_total = g_total + step.g
        sigma_total = sigma_total.union(step.sigma)
        current = step.remainder
        rem_norm, wit = bmo_norm(op, current, balls)
        coarse, middle, fine = _buckets(step.sigma, wit.radius, bucket_A)
        history.append({
            "iteration": it, "theta": float(theta), "g_inf": float(np.abs(step.g).max()),
            "carleson_norm": carleson_norm(step.sigma, balls), "contraction": step.contraction,
            "remainder_bmo": float(rem_norm), "bucket_coarse": coarse, "bucket_middle": middle,
            "bucket_fine": fine,
        })
        if step.contraction > rho_target:
            failures += 1
            if failures >= 2:
                break
        if rem_norm <= tol * norm_f:
            break
    residual = float(np.abs(f - g_total - sweep(op, sigma_total) - current).max())
    size = float(np.abs(g_total).max()) + carleson_norm(sigma_total, balls)
    constant = size / norm_f if norm_f > 0 else 0.0
    return IterationResult(g_total=g_total, sigma_total=sigma_total, remainder=current,
                           history=history, theta=float(theta), constant=constant, residual=residual)
