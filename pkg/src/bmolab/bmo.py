"""BMO norms adapted to a semigroup, John-Nirenberg tails and the distance to bounded functions.

For a ball ``B`` of radius ``r`` the local oscillation is ``|f - exp(-r^2 L) f|``
averaged over ``B``.  Semigroup times are clamped below at ``spacing**2``,
where the discrete kernels stop resolving finer scales.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .semigroup import Operator, heat_apply
from .space import Ball, BallList, as_ball_list

__all__ = [
    "BmoReport", "oscillations", "bmo_norm", "jn_tail", "tail_curve", "epsilon_L",
    "dist_upper", "bmo_report", "LAMBDA0_FACTOR",
]

# lambda_0 = LAMBDA0_FACTOR * ||f||_BMO
LAMBDA0_FACTOR = 2.0
N_LAMBDA = 64
# norms below this fraction of sup|f| are semigroup roundoff and reported as 0
ZERO_RTOL = 1e-12


def semigroup_time(op: Operator, r: float) -> float:
    return max(r * r, op.space.spacing ** 2)


def oscillations(op: Operator, f, radii) -> dict:
    """Map each radius to the vector ``|f - exp(-max(r^2, s^2) L) f|``."""
    f = np.asarray(f, dtype=float)
    return {float(r): np.abs(f - heat_apply(op, semigroup_time(op, r), f)) for r in np.unique(radii)}


def _grouped(balls: BallList):
    radii = balls.radii
    for r in np.unique(radii):
        yield float(r), np.flatnonzero(radii == r)


def bmo_norm(op: Operator, f, balls: Sequence[Ball]) -> tuple[float, Ball]:
    """``max_B mu(B)^-1 sum_{x in B} |f - e^{-r_B^2 L} f|(x) mu(x)`` with the maximising ball.

    A value below ``ZERO_RTOL * max|f|`` is returned as exactly ``0``.
    """
    if not len(balls):
        raise ValueError("empty ball list")
    balls = as_ball_list(balls)
    mu = op.space.measure
    mask = balls.mask_for(op.n)
    osc = oscillations(op, f, balls.radii)
    avg = np.empty(len(balls))
    for r, rows in _grouped(balls):
        avg[rows] = (mask[rows] @ (osc[r] * mu)) / balls.masses[rows]
    i = int(np.argmax(avg))
    val = float(avg[i])
    f = np.asarray(f, dtype=float)
    if val <= ZERO_RTOL * float(np.abs(f).max(initial=0.0)):
        val = 0.0
    return val, balls[i]


def _tails(op: Operator, f, balls: BallList, lambdas: np.ndarray, osc=None) -> np.ndarray:
    """``sup_B mu({x in B : osc_B(x) > lambda}) / mu(B)`` for each lambda."""
    mu = op.space.measure
    mask = balls.mask_for(op.n).astype(float)
    osc = oscillations(op, f, balls.radii) if osc is None else osc
    out = np.zeros(len(lambdas))
    for r, rows in _grouped(balls):
        above = (osc[r][:, None] > lambdas[None, :]) * mu[:, None]
        frac = (mask[rows] @ above) / balls.masses[rows][:, None]
        out = np.maximum(out, frac.max(axis=0))
    return out


def jn_tail(op: Operator, f, balls: Sequence[Ball], lam: float) -> float:
    """Largest fraction of a ball where the oscillation exceeds ``lam``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return float(_tails(op, f, as_ball_list(balls), np.array([float(lam)]))[0])


def tail_curve(op: Operator, f, balls: Sequence[Ball], lambdas) -> np.ndarray:
    lambdas = np.asarray(lambdas, dtype=float)
    return _tails(op, f, as_ball_list(balls), lambdas)


@dataclass
class BmoReport:
    norm: float
    witness: Ball
    tail_curve: list
    epsilon_L: float
    lambda0: float
    dist_upper: float | None = None
    dist_M: float | None = None
    extras: dict = field(default_factory=dict)


def _epsilon_from_tail(lams: np.ndarray, tails: np.ndarray) -> float:
    pos = (tails > 0) & (lams > 0)
    if not pos.any():
        return 0.0
    return float(np.max(lams[pos] / np.log(1.0 / tails[pos])))


def epsilon_L(op: Operator, f, balls: Sequence[Ball], n_lambda: int = N_LAMBDA,
              return_curve: bool = False):
    """Estimate the John-Nirenberg rate of ``f``.

    With ``lambda_min = 2 ||f||_BMO`` the tail is sampled on ``n_lambda``
    evenly spaced values from ``lambda_min`` to the largest oscillation and

    ``eps = max { lam / ln(1 / tail(lam)) : tail(lam) > 0 }``,

    the smallest rate with ``tail(lam) <= exp(-lam / eps)`` on the grid.

    Returns
    -------
    eps, lambda_min : float, float
        Followed by the ``(lambdas, tails)`` curve if ``return_curve``.
    """
    balls = as_ball_list(balls)
    norm, _ = bmo_norm(op, f, balls)
    lam_min = LAMBDA0_FACTOR * norm
    osc = oscillations(op, f, balls.radii)
    top = max(float(v.max()) for v in osc.values())
    if norm == 0 or top <= lam_min:
        lams = np.linspace(lam_min, max(top, lam_min), n_lambda)
        tails = np.zeros(n_lambda)
        eps = 0.0
    else:
        lams = np.linspace(lam_min, top, n_lambda)
        tails = _tails(op, f, balls, lams, osc)
        eps = _epsilon_from_tail(lams, tails)
    if return_curve:
        return eps, lam_min, (lams, tails)
    return eps, lam_min


def dist_upper(op: Operator, f, balls: Sequence[Ball], budget: float = 1.0,
               lambda0: float | None = None, g=None, n_grid: int = N_LAMBDA) -> tuple[float, float]:
    """Upper bound on the BMO distance from ``f`` to functions bounded by ``budget * lambda0``.

    Every function on a finite space is bounded, so an unrestricted
    truncation ``clamp(f, -M, M)`` with ``M = ||f||_inf`` always reaches
    zero.  The bound is therefore taken over ``n_grid`` truncation levels
    ``M`` in ``[0, min(||f||_inf, budget * lambda0)]``:

    ``min_M ||f - clamp(f, -M, M)||_BMO``.

    A candidate ``g`` (e.g. from a global decomposition) is admitted too,
    giving ``||f - g||_BMO``, provided ``||g||_inf`` respects the same budget.

    Returns
    -------
    bound, M : float, float
        ``M`` is the best truncation level (``nan`` when ``g`` wins).
    """
    balls = as_ball_list(balls)
    f = np.asarray(f, dtype=float)
    if lambda0 is None:
        lambda0 = LAMBDA0_FACTOR * bmo_norm(op, f, balls)[0]
    top = min(float(np.abs(f).max()), budget * lambda0)
    best, best_M = np.inf, 0.0
    for M in np.linspace(0.0, top, n_grid):
        val = bmo_norm(op, f - np.clip(f, -M, M), balls)[0]
        if val < best:
            best, best_M = val, float(M)
    if g is not None:
        g = np.asarray(g, dtype=float)
        if np.abs(g).max() <= budget * lambda0 * (1 + 1e-12):
            val = bmo_norm(op, f - g, balls)[0]
            if val < best:
                best, best_M = val, float("nan")
    return float(best), best_M


def bmo_report(op: Operator, f, balls: Sequence[Ball], with_dist: bool = True) -> BmoReport:
    balls = as_ball_list(balls)
    norm, wit = bmo_norm(op, f, balls)
    eps, lam0, (lams, tails) = epsilon_L(op, f, balls, return_curve=True)
    rep = BmoReport(norm=norm, witness=wit, tail_curve=list(zip(lams.tolist(), tails.tolist())),
                    epsilon_L=eps, lambda0=lam0)
    if with_dist:
        rep.dist_upper, rep.dist_M = dist_upper(op, f, balls, lambda0=lam0)
    return rep
