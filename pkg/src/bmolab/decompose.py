"""Stopping-time decompositions of BMO functions over dyadic systems.

The pipeline has four stages:

* :func:`stopping_time` selects maximal cubes where a dilated average of the
  oscillation exceeds ``lambda`` and splits ``(f - e^{-l(Q0)^2 L} f) 1_{Q0}``
  into a bounded part and a sum of cube coefficients.
* :func:`graded_refine` inserts intermediate generations so that every
  generation fills at most half of each cube of the previous one.
* :func:`averaged_decompose` replaces single semigroup times by averages
  along the refined chains, which lowers the oscillation of the coefficient
  part by a factor of ``m``.
* :func:`global_decompose` averages the single-system output over an
  ensemble of shifted lattices, giving ``f = g + h`` with ``g`` bounded and
  ``h`` of small BMO norm.

Throughout, the dilation of a cube is ``2Q = Q ∪ {x : d(x, Q) <= l(Q)}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bmo import LAMBDA0_FACTOR, bmo_norm, epsilon_L
from .dyadic import DELTA, DyadicCube, DyadicSystem, GradedSequence, LatticeEnsemble
from .semigroup import Operator, heat_apply
from .space import RADIUS_RTOL, Ball, as_ball_list, doubling_fit, enumerate_balls

__all__ = [
    "Geometry", "HeatLadder", "StoppingForest", "RefinedSequence", "Decomposition",
    "AveragedPieces", "GradingError", "geometry", "heat_ladder", "stopping_time",
    "coefficient_checks", "graded_refine", "averaged_decompose", "global_decompose",
    "refinement_depth", "EPS_PRIME_FACTOR",
]

EPS_PRIME_FACTOR = 1.05
LAMBDA_FACTOR = 1.1
WINDOW_RTOL = 1e-12


class GradingError(ValueError):
    """The refined sequence could not be made half-graded."""


@dataclass(eq=False)
class Geometry:
    """Dilated-cube data of a dyadic system, independent of operator and function.

    ``dilated[g]`` is the indicator of ``2Q`` for the cube with ``gid == g``;
    ``mass2[g] = mu(2Q)``; ``D`` is the largest ``mu(2 parent) / mu(2 child)``.
    """

    system: DyadicSystem
    cubes: list
    dilated: np.ndarray
    mass2: np.ndarray
    mass: np.ndarray
    D: float
    mass_ratio: float


def geometry(system: DyadicSystem) -> Geometry:
    cached = getattr(system, "_geometry", None)
    if cached is not None:
        return cached
    sp = system.space
    d = sp.dist
    mu = sp.measure
    cubes = list(system.all_cubes())
    dil = np.zeros((len(cubes), sp.n), dtype=bool)
    for i, lev in enumerate(system.levels):
        lab = system.labels[i]
        order = np.argsort(lab, kind="stable")
        starts = np.searchsorted(lab[order], np.arange(len(lev)))
        # distance from every cube of this level to every point
        dmin = np.minimum.reduceat(d[order], starts, axis=0)
        h = DELTA ** (system.k_min + i)
        block = dmin <= h * (1 + RADIUS_RTOL)
        for j, q in enumerate(lev):
            dil[q.gid] = block[j]
    mass2 = dil.astype(float) @ mu
    mass = np.array([mu[q.members].sum() for q in cubes])
    D, ratio = 1.0, 1.0
    for q in cubes:
        if q.parent is not None:
            D = max(D, mass2[q.parent.gid] / mass2[q.gid])
            ratio = max(ratio, mass[q.parent.gid] / mass[q.gid])
    geo = Geometry(system=system, cubes=cubes, dilated=dil, mass2=mass2, mass=mass, D=float(D),
                   mass_ratio=float(ratio))
    system._geometry = geo
    return geo


@dataclass(eq=False)
class HeatLadder:
    """``e^{-l_k^2 L} f`` for every level ``k`` and dilated-cube averages of the oscillations.

    ``avg[g, i]`` is the mean of ``|f - e^{-l_k^2 L} f|`` over ``2Q`` for the
    cube ``gid == g`` and level ``k = k_min + i``.
    """

    f: np.ndarray
    heat: np.ndarray
    osc: np.ndarray
    avg: np.ndarray
    k_min: int

    def at(self, k: int) -> np.ndarray:
        return self.heat[k - self.k_min]

    def osc_at(self, k: int) -> np.ndarray:
        return self.osc[k - self.k_min]


def heat_ladder(op: Operator, f, system: DyadicSystem) -> HeatLadder:
    f = np.asarray(f, dtype=float)
    geo = geometry(system)
    ks = range(system.k_min, system.k_max + 1)
    heat = np.stack([heat_apply(op, (DELTA ** k) ** 2, f) for k in ks])
    osc = np.abs(f[None, :] - heat)
    mu = system.space.measure
    avg = (geo.dilated.astype(float) @ (osc * mu).T) / geo.mass2[:, None]
    return HeatLadder(f=f, heat=heat, osc=osc, avg=avg, k_min=system.k_min)


@dataclass(eq=False)
class StoppingForest:
    """Output of :func:`stopping_time`.

    ``generations[0] == [(Q0, None)]``; for ``k >= 1`` each entry is
    ``(Q_k, Q_k_star)`` with ``Q_k_star`` the generation ``k - 1`` cube
    containing ``Q_k``.
    """

    root: DyadicCube
    generations: list
    lam: float
    g_part: np.ndarray
    h: np.ndarray
    ladder: HeatLadder
    system: DyadicSystem
    op: Operator
    window: np.ndarray
    D: float
    exceptions: int
    star_self: np.ndarray
    reconstruction_residual: float

    def coeff(self, Q: DyadicCube, star: DyadicCube) -> np.ndarray:
        """``a_Q = e^{-l(Q)^2 L} f - e^{-l(Q*)^2 L} f`` (meaningful on ``2Q``)."""
        return self.ladder.at(Q.level) - self.ladder.at(star.level)

    @property
    def selected(self) -> list:
        return [pair for gen in self.generations[1:] for pair in gen]

    def _window_mask(self) -> np.ndarray:
        return (self.window > self.lam) & (self.window <= self.D * self.lam * (1 + WINDOW_RTOL))

    @property
    def window_ok(self) -> bool:
        """``lam < avg <= D lam`` at every selected cube."""
        return bool(np.all(self._window_mask()))

    def window_fraction(self) -> float:
        if not len(self.window):
            return 1.0
        return float(self._window_mask().mean())

    @property
    def in_window_regime(self) -> bool:
        """True when ``lam`` dominates the own-time average of every selected star.

        In this regime the upper window bound ``avg <= D lam`` is guaranteed;
        below it a child of a star can only be bounded by ``D`` times the
        star's own average.
        """
        return bool(np.all(self.star_self <= self.lam))

    def gamma_k(self) -> list:
        """Per generation, ``max_{Q*} mu(E_k ∩ Q*) / mu(Q*)``."""
        mu = self.system.space.measure
        out = []
        for gen in self.generations[1:]:
            by_star: dict = {}
            for Q, star in gen:
                by_star.setdefault(star.gid, [star, 0.0])[1] += mu[Q.members].sum()
            out.append(max(v / mu[s.members].sum() for s, v in by_star.values()))
        return out

    def as_graded(self, gamma: float = 0.5) -> GradedSequence:
        return GradedSequence(root=self.root, generations=[[Q for Q, _ in gen] for gen in self.generations[1:]],
                              gamma=gamma)

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "generations": [
            [{"level": Q.level, "members": Q.members.tolist(),
              "star": None if s is None else [s.level, s.index]} for Q, s in gen]
            for gen in self.generations]}


def _top_average(ladder: HeatLadder, Q0: DyadicCube) -> float:
    return float(ladder.avg[Q0.gid, Q0.level - ladder.k_min])


def stopping_time(op: Operator, f, system: DyadicSystem, Q0: DyadicCube | None = None,
                  lam: float = 1.0, ladder: HeatLadder | None = None) -> StoppingForest:
    """Recursive maximal-cube selection against the threshold ``lam``.

    Starting from ``Q0``, the children of every selected cube ``P`` are
    searched from coarse to fine; a strict descendant ``R`` is selected when

    ``mean over 2R of |f - e^{-l(P)^2 L} f| > lam``

    and its own descendants are then handled in the next generation.  The
    recursion ends at singleton cubes.  The result satisfies

    ``(f - e^{-l(Q0)^2 L} f) 1_{Q0} = g_part + sum_Q a_Q 1_Q``

    exactly, where ``g_part`` collects ``f - e^{-l(P)^2 L} f`` on the part
    of each selected ``P`` that is not covered by its selected subcubes.

    Every selected cube satisfies ``lam < avg <= D max(lam, s(P))`` with
    ``s(P)`` the mean over ``2P`` of ``|f - e^{-l(P)^2 L} f|``; this is
    asserted.  When ``lam >= s(P)`` for all stars
    (:attr:`StoppingForest.in_window_regime`) it is the window
    ``lam < avg <= D lam``.

    Raises
    ------
    ValueError
        If the mean over ``2 Q0`` of ``|f - e^{-l(Q0)^2 L} f|`` exceeds ``lam``.
    """
    Q0 = system.top if Q0 is None else Q0
    ladder = heat_ladder(op, f, system) if ladder is None else ladder
    geo = geometry(system)
    top_avg = _top_average(ladder, Q0)
    if top_avg > lam:
        raise ValueError(f"entry condition fails: mean oscillation over 2Q0 is {top_avg:.6g} > lambda = {lam:.6g}")
    f = ladder.f
    n = len(f)
    k0 = ladder.k_min
    generations = [[(Q0, None)]]
    g_part = np.zeros(n)
    h = np.zeros(n)
    window = []
    star_self = []
    exceptions = 0
    frontier = [Q0]
    while frontier:
        new = []
        for P in frontier:
            col = P.level - k0
            own = float(ladder.avg[P.gid, col])
            chosen = []
            stack = list(reversed(P.children))
            while stack:
                R = stack.pop()
                a = ladder.avg[R.gid, col]
                if a > lam:
                    if a > geo.D * max(lam, own) * (1 + WINDOW_RTOL):
                        raise AssertionError(f"selected cube average {a:.6g} exceeds D max(lambda, s(P))")
                    chosen.append(R)
                    window.append(a)
                    star_self.append(own)
                else:
                    stack.extend(reversed(R.children))
            covered = np.zeros(n, dtype=bool)
            for R in chosen:
                covered[R.members] = True
                new.append((R, P))
                h[R.members] += ladder.at(R.level)[R.members] - ladder.at(P.level)[R.members]
            rest = P.members[~covered[P.members]]
            g_part[rest] += f[rest] - ladder.at(P.level)[rest]
            exceptions += int(np.sum(ladder.osc_at(P.level)[rest] > lam))
        if new:
            generations.append(new)
        frontier = [R for R, _ in new]
    target = np.zeros(n)
    target[Q0.members] = (f - ladder.at(Q0.level))[Q0.members]
    resid = float(np.abs(g_part + h - target).max())
    return StoppingForest(root=Q0, generations=generations, lam=float(lam), g_part=g_part, h=h,
                          ladder=ladder, system=system, op=op, window=np.array(window), D=geo.D,
                          exceptions=exceptions, star_self=np.array(star_self),
                          reconstruction_residual=resid)


def _pair_groups(pairs):
    groups: dict = {}
    for Q, star in pairs:
        groups.setdefault((Q.level, star.level), []).append(Q)
    return groups


def coefficient_checks(forest: StoppingForest, op: Operator | None = None, n_t: int = 4) -> dict:
    """Measured constants of the coefficient functions, per generation.

    For every selected ``Q`` with coefficient ``a_Q`` and ``x`` in ``2Q``:

    * ``C_size = max |a_Q| / lam``
    * ``C_smooth = max |L a_Q| l(Q)^2 / lam``
    * ``C_holder = max |(I - e^{-t^2 L}) a_Q| / ((t / l(Q))^2 lam)`` over ``t = l(Q) 2^-j``
    * ``C_int[m] = max sum_y K_{t^2}(x, y) |(l(Q)^2 L)^m a_Q(y)| mu(y) / lam`` for ``m = 0, 1``

    Coefficients depend only on the pair of levels ``(l(Q), l(Q*))``, so the
    spectral work is shared by every cube with the same pair.
    """
    op = forest.op if op is None else op
    geo = geometry(forest.system)
    lam_val = forest.lam
    ev = op.eigenvalues
    U = op.eigenvectors
    fhat = U.T @ forest.ladder.f
    per_gen = []
    for gen in forest.generations[1:]:
        out = {"C_size": 0.0, "C_smooth": 0.0, "C_holder": 0.0, "C_int_0": 0.0, "C_int_1": 0.0}
        for (kq, ks), cubes in _pair_groups(gen).items():
            lq, ls = DELTA ** kq, DELTA ** ks
            coef_hat = (np.exp(-lq ** 2 * ev) - np.exp(-ls ** 2 * ev)) * fhat
            a = U @ coef_hat
            La = U @ (ev * coef_hat)
            holder = [(t, U @ ((1 - np.exp(-t ** 2 * ev)) * coef_hat))
                      for t in (lq * 2.0 ** -j for j in range(n_t))]
            absa = np.abs(a)
            absLa = np.abs(La) * lq ** 2
            ints = []
            for t in (lq * 2.0 ** -j for j in range(n_t)):
                P = op.spectral_matrix(np.exp(-t ** 2 * ev))
                ints.append((np.abs(P) @ absa, np.abs(P) @ absLa))
            for Q in cubes:
                mask = geo.dilated[Q.gid]
                out["C_size"] = max(out["C_size"], absa[mask].max() / lam_val)
                out["C_smooth"] = max(out["C_smooth"], absLa[mask].max() / lam_val)
                for t, v in holder:
                    out["C_holder"] = max(out["C_holder"],
                                          np.abs(v[mask]).max() / ((t / lq) ** 2 * lam_val))
                for i0, i1 in ints:
                    out["C_int_0"] = max(out["C_int_0"], i0[mask].max() / lam_val)
                    out["C_int_1"] = max(out["C_int_1"], i1[mask].max() / lam_val)
        per_gen.append({k: float(v) for k, v in out.items()})
    total = {k: max([g[k] for g in per_gen], default=0.0) for k in
             ("C_size", "C_smooth", "C_holder", "C_int_0", "C_int_1")}
    return {"per_generation": per_gen, **total}


def refinement_depth(lam: float, eps_prime: float, n_D: float) -> int:
    """Largest integer strictly smaller than ``lam / ((n_D + 1) eps_prime)``."""
    x = lam / ((n_D + 1.0) * eps_prime)
    return int(math.ceil(x)) - 1


@dataclass(eq=False)
class RefinedSequence:
    """Half-graded refinement of a stopping forest.

    ``chains[k - 1][i - 1]`` is the list of cubes of ``G_{k,i}`` for
    ``i = 1..m``, with ``G_{k,m}`` the original generation ``k``.
    """

    forest: StoppingForest
    m: int
    m_requested: int
    chains: list
    n_eff: float
    lower_ratio_min: float

    @property
    def sequence(self) -> GradedSequence:
        gens = [step for chain in self.chains for step in chain]
        return GradedSequence(root=self.forest.root, generations=gens, gamma=0.5)

    def violations(self) -> list:
        return self.sequence.check(self.forest.system.space.measure, 0.5)


def _walk_up(C: DyadicCube, stop: DyadicCube, inE: np.ndarray, mu: np.ndarray):
    """Smallest strict ancestor ``A`` of ``C`` strictly inside ``stop`` with ``mu(E ∩ A) <= mu(A) / 2``."""
    A = C.parent
    while A is not None and A is not stop:
        mem = A.members
        frac = mu[mem][inE[mem]].sum() / mu[mem].sum()
        if frac <= 0.5 * (1 + 1e-12):
            return A, float(frac)
        A = A.parent
    return None, None


def _refine_once(forest: StoppingForest, m: int):
    mu = forest.system.space.measure
    n = len(mu)
    chains = []
    low = 1.0
    for gen in forest.generations[1:]:
        star_of = {Q.gid: star for Q, star in gen}
        steps = [None] * m
        steps[m - 1] = [Q for Q, _ in gen]
        cur = steps[m - 1]
        for i in range(m - 2, -1, -1):
            inE = np.zeros(n, dtype=bool)
            for Q in cur:
                inE[Q.members] = True
            chosen = {}
            for Q in cur:
                star = star_of[Q.gid]
                A, frac = _walk_up(Q, star, inE, mu)
                if A is None:
                    return None
                chosen[A.gid] = A
                low = min(low, frac)
                star_of[A.gid] = star
            # drop cubes nested inside another chosen cube
            kept = []
            for A in chosen.values():
                B = A.parent
                nested = False
                while B is not None:
                    if B.gid in chosen:
                        nested = True
                        break
                    B = B.parent
                if not nested:
                    kept.append(A)
            kept.sort(key=lambda q: (q.level, q.index))
            steps[i] = kept
            cur = kept
        # top step: E_{k,1} must fill at most half of each star cube
        inE = np.zeros(n, dtype=bool)
        for Q in steps[0]:
            inE[Q.members] = True
        for star in {s.gid: s for _, s in gen}.values():
            mem = star.members
            if mu[mem][inE[mem]].sum() > 0.5 * mu[mem].sum() * (1 + 1e-12):
                return None
        chains.append(steps)
    return chains, low


def graded_refine(forest: StoppingForest, eps_prime: float, n_D: float | None = None) -> RefinedSequence:
    """Insert intermediate generations so that the sequence becomes half-graded.

    With ``m`` the largest integer below ``lam / ((n_D + 1) eps_prime)``,
    the sets ``E_{k,m} = E_k ⊂ E_{k,m-1} ⊂ ... ⊂ E_{k,1} ⊂ E_{k-1}`` are
    built by replacing each cube of the current set with its smallest
    ancestor ``A`` (strictly inside the enclosing previous-generation cube)
    with ``mu(E ∩ A) <= mu(A) / 2``, and discarding chosen cubes nested in
    other chosen cubes.  Each chosen ``A`` also satisfies
    ``mu(E ∩ A) >= 2^(-n_eff - 1) mu(A)`` where ``n_eff`` is the larger of
    ``n_D`` and ``log2`` of the largest parent/child mass ratio.

    If some ancestor walk reaches the enclosing cube, or the top step
    ``mu(E_{k,1} ∩ Q*) <= mu(Q*) / 2`` fails, ``m`` is decreased until the
    construction succeeds.

    Raises
    ------
    GradingError
        If ``m < 1`` from the start, or even ``m = 1`` fails (the stopping
        forest itself is not half-graded).
    """
    geo = geometry(forest.system)
    if n_D is None:
        sp = forest.system.space
        n_D = doubling_fit(sp, enumerate_balls(sp, 2)).n_D
    m0 = refinement_depth(forest.lam, eps_prime, n_D)
    if m0 < 1:
        raise GradingError(f"lambda / ((n_D + 1) eps') = {forest.lam / ((n_D + 1) * eps_prime):.4g} "
                           "is at most 1; lower eps' or raise lambda")
    n_eff = max(float(n_D), math.log2(geo.mass_ratio))
    for m in range(m0, 0, -1):
        res = _refine_once(forest, m)
        if res is not None:
            chains, low = res
            out = RefinedSequence(forest=forest, m=m, m_requested=m0, chains=chains, n_eff=n_eff,
                                  lower_ratio_min=low)
            if low < 2.0 ** (-n_eff - 1) * (1 - 1e-12):
                raise AssertionError(f"interpolating cube fills {low:.4g} < 2^(-n_eff-1) of itself")
            return out
    raise GradingError("the stopping forest is not half-graded; raise lambda")


@dataclass(eq=False)
class AveragedPieces:
    refined: RefinedSequence
    g2: np.ndarray
    g3: np.ndarray
    h: np.ndarray
    residual: float
    g3_residual: float

    @property
    def m(self) -> int:
        return self.refined.m

    @property
    def g(self) -> np.ndarray:
        return self.g2 + self.g3


def _chain_average(refined: RefinedSequence, ladder: HeatLadder):
    """``E_{Q,L} f`` for every original cube ``Q`` (keyed by gid) and the chain stars.

    ``stars[k - 1][i - 1][gid]`` is the cube of ``G_{k-1,i}`` containing the
    ``G_{k,i}`` cube ``gid``.
    """
    m = refined.m
    root = refined.forest.root
    E = {root.gid: ladder.at(root.level)}
    stars = []
    prev = [{root.gid: root} for _ in range(m)]
    for steps in refined.chains:
        lookup = [{R.gid: R for R in steps[i]} for i in range(m)]
        stars.append([{R.gid: _container(R, prev[i]) for R in steps[i]} for i in range(m)])
        for Q in steps[m - 1]:
            acc = np.zeros_like(ladder.f)
            for i in range(m):
                acc += ladder.at(_container(Q, lookup[i]).level)
            E[Q.gid] = acc / m
        prev = lookup
    return E, stars


def _container(Q: DyadicCube, by_gid: dict) -> DyadicCube:
    A = Q
    while A is not None:
        if A.gid in by_gid:
            return by_gid[A.gid]
        A = A.parent
    raise AssertionError("cube is not covered by the previous generation")


def averaged_decompose(op: Operator, f, system: DyadicSystem, Q0: DyadicCube | None = None,
                       lam: float = 1.0, eps: float = 1.0, n_D: float | None = None,
                       eps_prime_factor: float = EPS_PRIME_FACTOR,
                       ladder: HeatLadder | None = None, forest: StoppingForest | None = None):
    """Averaged split ``(f - e^{-l(Q0)^2 L} f) 1_{Q0} = g2 + g3 + h``.

    With the refined chains ``Q = Q_{k,m} ⊂ Q_{k,m-1} ⊂ ... ⊂ Q_{k,1}`` the
    averaging operator is ``E_Q = (1/m) sum_{i=1}^m e^{-l(Q_{k,i})^2 L}`` and

    * ``h = (1/m) sum_k sum_i sum_{R in G_{k,i}} (e^{-l(R)^2 L} f - e^{-l(R*_i)^2 L} f) 1_R``
      where ``R*_i`` is the cube of ``G_{k-1,i}`` containing ``R``;
    * ``g2 = sum_P (f - E_P f) 1_{P minus selected subcubes}``;
    * ``g3 = sum_Q (E_Q f - E_{Q*} f) 1_Q - h``.

    With ``m = 1`` this is exactly the output of :func:`stopping_time`.

    Returns
    -------
    g_Q0, h_Q0 : ndarray
    pieces : AveragedPieces
    """
    Q0 = system.top if Q0 is None else Q0
    ladder = heat_ladder(op, f, system) if ladder is None else ladder
    if forest is None:
        forest = stopping_time(op, f, system, Q0, lam, ladder=ladder)
    if eps <= 0:
        raise ValueError("eps must be positive")
    refined = graded_refine(forest, eps_prime_factor * eps, n_D)
    m = refined.m
    f = ladder.f
    n = len(f)
    E, stars = _chain_average(refined, ladder)
    h = np.zeros(n)
    for k, steps in enumerate(refined.chains):
        for i in range(m):
            for R in steps[i]:
                S = stars[k][i][R.gid]
                h[R.members] += (ladder.at(R.level) - ladder.at(S.level))[R.members] / m
    g2 = np.zeros(n)
    telescoped = np.zeros(n)
    gens = forest.generations
    for idx, gen in enumerate(gens):
        children = gens[idx + 1] if idx + 1 < len(gens) else []
        for P, _ in gen:
            covered = np.zeros(n, dtype=bool)
            for R, star in children:
                if star is P:
                    covered[R.members] = True
            rest = P.members[~covered[P.members]]
            g2[rest] += f[rest] - E[P.gid][rest]
    for gen in gens[1:]:
        for Q, star in gen:
            telescoped[Q.members] += (E[Q.gid] - E[star.gid])[Q.members]
    g3 = telescoped - h
    target = np.zeros(n)
    target[Q0.members] = (f - ladder.at(Q0.level))[Q0.members]
    residual = float(np.abs(g2 + g3 + h - target).max())
    g3_alt = target - g2 - h
    pieces = AveragedPieces(refined=refined, g2=g2, g3=g3, h=h, residual=residual,
                            g3_residual=float(np.abs(g3 - g3_alt).max()))
    return g2 + g3, h, pieces


@dataclass(eq=False)
class Decomposition:
    g: np.ndarray
    h: np.ndarray
    epsilon: float
    certificates: dict
    lam: float
    lambda0: float
    runs: list = field(default_factory=list)


def global_decompose(op: Operator, f, ensemble: LatticeEnsemble, eps: float,
                     balls=None, n_D: float | None = None, lam: float | None = None,
                     eps_prime_factor: float = EPS_PRIME_FACTOR,
                     lambda_factor: float = LAMBDA_FACTOR, max_doublings: int = 8) -> Decomposition:
    """Randomised decomposition ``f = g + h`` averaged over an ensemble of lattices.

    For each system ``w`` the averaged decomposition runs on the top cube
    (the whole space) and ``g^w = e^{-l(Q_top)^2 L} f + g2 + g3``; then
    ``g`` is the ensemble mean and ``h = f - g``.

    The threshold is ``lam = max(lambda_0, entry average, lambda_factor (n_D + 1) eps')``
    with ``eps' = eps_prime_factor * eps``, doubled whenever a system fails
    to produce a half-graded refinement.  The certificates hold
    ``g_inf``, ``h_bmo``, ``A1_measured = g_inf / lambda_0`` and
    ``A2_measured = h_bmo / eps``.
    """
    f = np.asarray(f, dtype=float)
    sp = op.space
    balls = enumerate_balls(sp, 2) if balls is None else as_ball_list(balls)
    if n_D is None:
        n_D = doubling_fit(sp, balls).n_D
    norm = bmo_norm(op, f, balls)[0]
    lambda0 = LAMBDA0_FACTOR * norm
    ladders = [heat_ladder(op, f, s) for s in ensemble.systems]
    eps_prime = eps_prime_factor * eps
    if eps <= 0:
        g = f.copy() if norm == 0 else None
        if g is None:
            raise ValueError("eps must be positive for a function with nonzero BMO norm")
        return Decomposition(g=g, h=np.zeros_like(f), epsilon=0.0, lam=0.0, lambda0=lambda0,
                             certificates={"g_inf": float(np.abs(g).max()), "h_bmo": 0.0,
                                           "A1_measured": 0.0, "A2_measured": 0.0})
    entry = max(_top_average(L, s.top) for L, s in zip(ladders, ensemble.systems))
    if lam is None:
        lam = max(lambda0, entry, lambda_factor * (n_D + 1.0) * eps_prime)
    for _ in range(max_doublings + 1):
        try:
            gs, runs = [], []
            for s, L in zip(ensemble.systems, ladders):
                g_loc, h_loc, pieces = averaged_decompose(op, f, s, s.top, lam, eps, n_D=n_D,
                                                          eps_prime_factor=eps_prime_factor, ladder=L)
                gs.append(L.at(s.top.level) + g_loc)
                runs.append(pieces)
            break
        except GradingError:
            lam *= 2.0
    else:
        raise GradingError("no half-graded refinement after repeated doubling of lambda")
    g = np.mean(gs, axis=0)
    h = f - g
    h_bmo = bmo_norm(op, h, balls)[0]
    g_inf = float(np.abs(g).max())
    cert = {
        "g_inf": g_inf, "h_bmo": float(h_bmo),
        "A1_measured": g_inf / lambda0 if lambda0 > 0 else 0.0,
        "A2_measured": float(h_bmo) / eps,
        "lambda": float(lam), "m": int(min(r.m for r in runs)),
        "max_residual": float(max(r.residual for r in runs)),
        "g2_inf_over_lambda": float(max(np.abs(r.g2).max() for r in runs)) / lam,
        "g3_inf_over_lambda": float(max(np.abs(r.g3).max() for r in runs)) / lam,
    }
    return Decomposition(g=g, h=h, epsilon=float(eps), certificates=cert, lam=float(lam),
                         lambda0=lambda0, runs=runs)
