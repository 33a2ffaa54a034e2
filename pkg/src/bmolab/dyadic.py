"""Dyadic cube systems on grid spaces, random shifted lattices and graded sequences.

Cubes at level ``k`` have side ``delta**k`` with ``delta = 1/2``.  A system is
built from half-open boxes ``shift + [j h, (j+1) h)`` per axis, intersected
with the grid.  On periodic grids the boxes wrap around; on reflecting grids
an edge box holding at most half of a full box is merged into its inward
neighbour, so that every cube stays comparable to a ball of radius ``h``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .space import RADIUS_RTOL, Space

DELTA = 0.5

__all__ = [
    "DELTA", "DyadicCube", "DyadicSystem", "AxiomReport", "LatticeEnsemble",
    "GradedSequence", "build_shifted_dyadic", "verify_axioms", "sample_ensemble",
    "boundary_hit_rate", "annulus_ratio", "fit_annulus", "default_k_range",
]


@dataclass(eq=False)
class DyadicCube:
    level: int
    side: float
    center: int
    members: np.ndarray
    parent: "DyadicCube | None" = None
    children: list = field(default_factory=list)
    index: int = 0
    gid: int = 0

    @property
    def size(self) -> int:
        return len(self.members)

    def __repr__(self) -> str:
        return f"DyadicCube(level={self.level}, index={self.index}, n={self.size})"


@dataclass(eq=False)
class DyadicSystem:
    """Nested partitions of a space, one per level ``k_min..k_max``.

    ``labels[k - k_min]`` maps each point to the index of its level-``k``
    cube inside ``levels[k - k_min]``.
    """

    space: Space
    levels: list
    labels: list
    k_min: int
    k_max: int
    shift: np.ndarray
    c1: float = 0.25
    C1: float = 2.0
    c1_measured: float = float("inf")

    def cubes(self, k: int) -> list:
        return self.levels[k - self.k_min]

    def label(self, k: int) -> np.ndarray:
        return self.labels[k - self.k_min]

    def cube_of(self, x: int, k: int) -> DyadicCube:
        return self.cubes(k)[self.label(k)[x]]

    @property
    def top(self) -> DyadicCube:
        """The single coarsest cube (the whole space)."""
        return self.levels[0][0]

    def all_cubes(self):
        for lev in self.levels:
            yield from lev

    def descendants(self, Q: DyadicCube):
        """Strict descendants of ``Q``, coarse to fine (breadth first)."""
        frontier = list(Q.children)
        while frontier:
            yield from frontier
            frontier = [c for q in frontier for c in q.children]

    def to_json(self) -> str:
        return json.dumps({
            "k_min": self.k_min, "k_max": self.k_max,
            "shift": [float(v) for v in self.shift],
            "levels": {str(self.k_min + i): [
                {"center": int(q.center), "members": q.members.tolist(),
                 "parent": None if q.parent is None else int(q.parent.index)}
                for q in lev] for i, lev in enumerate(self.levels)},
        })


def default_k_range(space: Space) -> tuple[int, int]:
    """Levels from the whole space down to singletons."""
    return 0, int(np.ceil(np.log2(space.side)))


def _axis_labels(pos: np.ndarray, s: float, shift: float, h: float, periodic: bool) -> np.ndarray:
    """Per-axis box labels for grid positions ``pos`` (one per point)."""
    nboxes = int(round(1.0 / h))
    idx = np.floor((pos - shift) / h + 1e-9).astype(np.int64)
    if periodic:
        return np.mod(idx, nboxes)
    # count distinct grid positions, not points, so rows of a 2-D grid count once
    _, pos_inv = np.unique(np.round(pos / s).astype(np.int64), return_inverse=True)
    uniq, inv = np.unique(idx, return_inverse=True)
    counts = np.bincount(inv[np.unique(pos_inv.ravel(), return_index=True)[1]])
    capacity = h / s
    lab = np.arange(len(uniq))
    if len(uniq) > 1:
        left_sliver = counts[0] <= capacity / 2 + 1e-9
        right_sliver = counts[-1] <= capacity / 2 + 1e-9
        if len(uniq) == 2 and left_sliver and right_sliver:
            lab[:] = 0
        else:
            if left_sliver:
                lab[0] = lab[1]
            if right_sliver:
                lab[-1] = lab[-2]
    return lab[inv]


def build_shifted_dyadic(space: Space, shift=None, k_range=None) -> DyadicSystem:
    """Build the dyadic system of boxes ``shift + 2**-k * (j + [0, 1)^dim)``.

    Parameters
    ----------
    space : Space
        A grid space from :func:`~bmolab.space.build_grid_space`.
    shift : array_like, optional
        Offset in ``[0, 1)^dim`` (length units).  Defaults to the origin.
    k_range : (int, int), optional
        ``(k_min, k_max)``; defaults to :func:`default_k_range`.

    Returns
    -------
    DyadicSystem
        Empty boxes are dropped, parent and child links are filled in and
        ``c1_measured`` holds the largest inner-ball constant over all cubes.
    """
    if space.coords is None or space.side is None:
        raise ValueError("dyadic systems are built on grid spaces")
    dim = space.dim
    shift = np.zeros(dim) if shift is None else np.atleast_1d(np.asarray(shift, dtype=float))
    if shift.shape != (dim,):
        raise ValueError(f"shift must have {dim} components")
    if np.any(shift < 0) or np.any(shift >= 1):
        raise ValueError(f"shift must lie in [0, 1)^{dim}, got {shift.tolist()}")
    k_min, k_max = default_k_range(space) if k_range is None else map(int, k_range)
    if k_min < 0 or k_max < k_min:
        raise ValueError(f"invalid k_range ({k_min}, {k_max})")
    periodic = space.boundary == "periodic"
    s = space.spacing
    coords = space.coords
    d = space.dist
    levels, labels = [], []
    c1_meas = np.inf
    gid = 0
    for k in range(k_min, k_max + 1):
        h = DELTA ** k
        keys = np.zeros(space.n, dtype=np.int64)
        for a in range(dim):
            lab = _axis_labels(coords[:, a], s, shift[a], h, periodic)
            keys = keys * (space.side + 2 ** k + 2) + lab
        uniq, inv = np.unique(keys, return_inverse=True)
        inv = inv.ravel()
        order = np.argsort(inv, kind="stable")
        bounds = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
        cubes = []
        for j in range(len(uniq)):
            members = order[bounds[j]:bounds[j + 1]]
            center = _pick_center(space, members, shift, h, periodic)
            cubes.append(DyadicCube(level=k, side=h, center=center, members=members, index=j,
                                    gid=gid))
            gid += 1
        if len(cubes) > 1:
            centers = np.array([q.center for q in cubes])
            own = inv[None, :] == np.arange(len(cubes))[:, None]
            c1_meas = min(c1_meas, float(np.where(own, np.inf, d[centers]).min()) / h)
        if levels:
            parent_lab = labels[-1]
            for q in cubes:
                p = levels[-1][parent_lab[q.members[0]]]
                q.parent = p
                p.children.append(q)
        levels.append(cubes)
        labels.append(inv)
    return DyadicSystem(space=space, levels=levels, labels=labels, k_min=k_min, k_max=k_max,
                        shift=shift, c1_measured=c1_meas)


def _pick_center(space: Space, members: np.ndarray, shift, h: float, periodic: bool) -> int:
    pts = space.coords[members]
    if periodic:
        # nominal box midpoint on the torus
        j = np.floor((pts[0] - shift) / h + 1e-9)
        mid = np.mod(shift + (j + 0.5) * h, 1.0)
        diff = np.abs(pts - mid)
        diff = np.minimum(diff, 1.0 - diff)
    else:
        mid = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
        diff = pts - mid
    return int(members[np.argmin((diff ** 2).sum(axis=1))])


@dataclass
class AxiomReport:
    """Pass/fail per dyadic axiom with the first witness found."""

    passed: dict
    witnesses: dict
    c1: float
    C1: float

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    @property
    def violations(self) -> int:
        return sum(not v for v in self.passed.values())


def verify_axioms(system: DyadicSystem, c1: float | None = None, C1: float | None = None) -> AxiomReport:
    """Check the five dyadic axioms exactly on the finite space.

    * ``nesting``: every cube lies inside its recorded parent, one level up.
    * ``disjoint``: cubes of one level are pairwise disjoint.
    * ``cover``: cubes of one level cover the space.
    * ``ball_sandwich``: ``B(x_Q, c1 h) ⊆ Q ⊆ B(x_Q, C1 h)`` on the point set.
    * ``ancestor_balls``: ``B(x_Q, C1 h_Q) ⊆ B(x_P, C1 h_P)`` for every ancestor ``P`` of ``Q``.
    """
    c1 = system.c1 if c1 is None else c1
    C1 = system.C1 if C1 is None else C1
    sp = system.space
    d = sp.dist
    n = sp.n
    passed = {a: True for a in ("nesting", "disjoint", "cover", "ball_sandwich", "ancestor_balls")}
    wit = {}

    def fail(axiom, witness):
        if passed[axiom]:
            passed[axiom] = False
            wit[axiom] = witness

    for i, lev in enumerate(system.levels):
        k = system.k_min + i
        count = np.zeros(n, dtype=np.int64)
        for q in lev:
            count[q.members] += 1
        if np.any(count > 1):
            fail("disjoint", {"level": k, "point": int(np.argmax(count > 1))})
        if np.any(count == 0):
            fail("cover", {"level": k, "point": int(np.argmax(count == 0))})
        own = np.zeros((len(lev), n), dtype=bool)
        for j, q in enumerate(lev):
            own[j, q.members] = True
        if i > 0:
            up = system.levels[i - 1]
            parent_idx = np.array([-1 if q.parent is None or q.parent.level != k - 1
                                   else q.parent.index for q in lev])
            ok = parent_idx >= 0
            if ok.all():
                parent_own = np.zeros((len(up), n), dtype=bool)
                for j, p in enumerate(up):
                    parent_own[j, p.members] = True
                ok = ~(own & ~parent_own[parent_idx]).any(axis=1)
                ok &= np.array([q.parent is up[q.parent.index] for q in lev])
            if not ok.all():
                q = lev[int(np.argmin(ok))]
                fail("nesting", {"cube": (q.level, q.index),
                             "parent": None if q.parent is None else (q.parent.level, q.parent.index)})
        h = DELTA ** k
        rows = d[[q.center for q in lev]]
        inner = rows <= c1 * h * (1 + RADIUS_RTOL)
        bad_in = (inner & ~own).any(axis=1)
        bad_out = (own & (rows > C1 * h * (1 + RADIUS_RTOL))).any(axis=1)
        if bad_in.any():
            fail("ball_sandwich", {"cube": (k, int(np.argmax(bad_in))), "side": "inner"})
        if bad_out.any():
            fail("ball_sandwich", {"cube": (k, int(np.argmax(bad_out))), "side": "outer"})

    # ancestor ball inclusion, vectorised per pair of levels
    nlev = len(system.levels)
    centers = [np.array([q.center for q in lev]) for lev in system.levels]
    balls = [d[centers[i]] <= C1 * DELTA ** (system.k_min + i) * (1 + RADIUS_RTOL) for i in range(nlev)]
    for i in range(1, nlev):
        # indices of the ancestors at level j, obtained by following parent links
        anc = np.arange(len(system.levels[i]))
        for j in range(i - 1, -1, -1):
            parents = [system.levels[j + 1][a].parent for a in anc]
            if any(p is None for p in parents):
                break
            anc = np.array([p.index for p in parents])
            bad = balls[i] & ~balls[j][anc]
            rows = np.flatnonzero(bad.any(axis=1))
            if rows.size:
                q = system.levels[i][rows[0]]
                fail("ancestor_balls", {"cube": (q.level, q.index), "ancestor_level": system.k_min + j})
                break
        if not passed["ancestor_balls"]:
            break
    return AxiomReport(passed=passed, witnesses=wit, c1=c1, C1=C1)


@dataclass(eq=False)
class LatticeEnsemble:
    """``M`` shifted dyadic systems drawn from a Philox stream seeded by ``seed``."""

    seed: int
    M: int
    shifts: np.ndarray
    systems: list

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.M, 1.0 / self.M)

    def __len__(self) -> int:
        return self.M

    def __iter__(self):
        return iter(self.systems)


def draw_shifts(seed: int, M: int, dim: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.random((M, dim))


def sample_ensemble(space: Space, M: int, seed: int, k_range=None) -> LatticeEnsemble:
    """Draw ``M`` i.i.d. uniform shifts and build one system per shift."""
    if M < 1:
        raise ValueError("M must be >= 1")
    shifts = draw_shifts(seed, M, space.dim)
    systems = [build_shifted_dyadic(space, sh, k_range) for sh in shifts]
    return LatticeEnsemble(seed=int(seed), M=int(M), shifts=shifts, systems=systems)


def boundary_hit_rate(ensemble: LatticeEnsemble, x: int, k: int, eps: float) -> float:
    """Fraction of systems in which ``x`` lies in the ``eps``-boundary of a level-``k`` cube.

    With the two-sided boundary ``{y in Q : d(y, X \\ Q) < eps} ∪ {y ∉ Q : d(y, Q) < eps}``,
    ``x`` lies in the boundary of some level-``k`` cube exactly when a point
    outside its own cube is closer than ``eps``.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if eps == 0:
        return 0.0
    hits = 0
    for sys in ensemble.systems:
        lab = sys.label(k)
        row = sys.space.dist[x]
        other = lab != lab[x]
        if other.any() and row[other].min() < eps:
            hits += 1
    return hits / ensemble.M


def annulus_ratio(system: DyadicSystem, Q: DyadicCube, t: float) -> float:
    """``mu(Q_t) / mu(Q)`` with ``Q_t = {x not in Q : d(x, Q) <= t l(Q)}``."""
    if not 0 < t <= 1:
        raise ValueError("t must lie in (0, 1]")
    sp = system.space
    inside = np.zeros(sp.n, dtype=bool)
    inside[Q.members] = True
    near = sp.dist[Q.members].min(axis=0) <= t * Q.side * (1 + RADIUS_RTOL)
    ann = near & ~inside
    return float(sp.measure[ann].sum() / sp.measure[Q.members].sum())


def fit_annulus(system: DyadicSystem, t_grid: Sequence[float]) -> tuple[float, float, np.ndarray]:
    """Fit ``mu(Q_t) <= C t**eta mu(Q)`` over every cube of ``system``.

    ``eta`` is the log-log regression slope of the worst ratio against ``t``
    (over the ``t`` where it is positive); ``C`` is then the smallest
    constant making the bound hold at every cube and every ``t``.

    Returns
    -------
    eta, C, worst : float, float, ndarray
        ``worst[i]`` is the largest ratio at ``t_grid[i]``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    cubes = [q for q in system.all_cubes() if q.level > system.k_min]
    worst = np.array([max(annulus_ratio(system, q, t) for q in cubes) for t in t_grid])
    pos = worst > 0
    if pos.sum() >= 2:
        eta = float(np.polyfit(np.log(t_grid[pos]), np.log(worst[pos]), 1)[0])
    else:
        eta = 1.0
    C = float(np.max(worst / t_grid ** eta))
    return eta, C, worst


@dataclass(eq=False)
class GradedSequence:
    """Nested generations of disjoint cubes ``E_1 ⊇ E_2 ⊇ ...`` under a root cube."""

    root: DyadicCube
    generations: list
    gamma: float

    def masks(self, n: int) -> list:
        out = []
        for gen in self.generations:
            m = np.zeros(n, dtype=bool)
            for q in gen:
                m[q.members] = True
            out.append(m)
        return out

    def check(self, measure: np.ndarray, gamma: float | None = None) -> list:
        """Return a list of violations (empty when the sequence is ``gamma``-graded).

        Generation ``0`` is the root cube.
        """
        gamma = self.gamma if gamma is None else gamma
        n = len(measure)
        viol = []
        prev = [self.root]
        for g, gen in enumerate(self.generations, start=1):
            seen = np.zeros(n, dtype=bool)
            for q in gen:
                if seen[q.members].any():
                    viol.append(("disjoint", g, q))
                seen[q.members] = True
            for q in gen:
                if not any(np.isin(q.members, p.members).all() for p in prev):
                    viol.append(("nested", g, q))
            for p in prev:
                frac = measure[p.members][seen[p.members]].sum() / measure[p.members].sum()
                if frac > gamma * (1 + 1e-12):
                    viol.append(("mass", g, p, float(frac)))
            prev = gen
        return viol

    def worst_fraction(self, measure: np.ndarray) -> list:
        """Per generation, the largest ``mu(E_k ∩ Q) / mu(Q)`` over previous-generation ``Q``."""
        n = len(measure)
        out = []
        prev = [self.root]
        for gen in self.generations:
            m = np.zeros(n, dtype=bool)
            for q in gen:
                m[q.members] = True
            out.append(max(measure[p.members][m[p.members]].sum() / measure[p.members].sum()
                           for p in prev))
            prev = gen
        return out
