"""Finite metric measure spaces, ball enumeration and doubling diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_POINTS = 2 ** 16
# relative slack used when testing d(x, y) <= r
RADIUS_RTOL = 1e-9

__all__ = [
    "Space", "Ball", "BallList", "DoublingFit", "MAX_POINTS",
    "build_grid_space", "space_from_matrix", "enumerate_balls",
    "doubling_fit", "ball", "as_ball_list", "dilate",
]


@dataclass(eq=False)
class Space:
    """A finite metric measure space ``(X, d, mu)``.

    Grid spaces carry their coordinates and compute the distance matrix
    lazily; spaces read from JSON carry the matrix directly.
    """

    measure: np.ndarray
    spacing: float
    coords: np.ndarray | None = None
    dim: int | None = None
    side: int | None = None
    boundary: str | None = None
    _dist: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.measure)

    @property
    def dist(self) -> np.ndarray:
        if self._dist is None:
            self._dist = _grid_distances(self.coords, self.boundary)
        return self._dist

    @property
    def diameter(self) -> float:
        return float(self.dist.max()) if self.n > 1 else 0.0

    @property
    def total_measure(self) -> float:
        return float(self.measure.sum())

    def check_metric(self, max_triples: int = 512 ** 3, seed: int = 0) -> float:
        """Return the worst triangle-inequality excess (<= 0 when it holds).

        All triples are checked when ``n**3 <= max_triples``, otherwise a
        deterministic random sample of that many triples.
        """
        d = self.dist
        n = self.n
        if n ** 3 <= max_triples:
            # d(i,k) - d(i,j) - d(j,k), maximised over j for each (i,k)
            worst = -np.inf
            for j in range(n):
                excess = d - d[:, j][:, None] - d[j, :][None, :]
                worst = max(worst, float(excess.max()))
            return worst
        rng = np.random.default_rng(seed)
        i, j, k = rng.integers(0, n, size=(3, max_triples))
        return float((d[i, k] - d[i, j] - d[j, k]).max())

    def to_json(self) -> str:
        return json.dumps({
            "points": list(range(self.n)),
            "dist": [float(v) for v in self.dist.ravel()],
            "measure": [float(v) for v in self.measure],
            "spacing": float(self.spacing),
        })

    @classmethod
    def from_json(cls, text: str) -> "Space":
        doc = json.loads(text)
        n = len(doc["points"])
        dist = np.asarray(doc["dist"], dtype=float).reshape(n, n)
        return space_from_matrix(dist, np.asarray(doc["measure"], dtype=float),
                                 spacing=doc.get("spacing"))


def _grid_distances(coords: np.ndarray, boundary: str) -> np.ndarray:
    diff = np.abs(coords[:, None, :] - coords[None, :, :])
    if boundary == "periodic":
        diff = np.minimum(diff, 1.0 - diff)
    return np.sqrt((diff ** 2).sum(-1))


def build_grid_space(dim: int, side: int, boundary: str = "reflecting") -> Space:
    """Uniform grid on ``[0, 1)^dim`` with ``side`` points per axis.

    Points sit at ``i / side``; each carries mass ``side**-dim``.  With
    ``boundary="periodic"`` distances are geodesic on the torus.

    Examples
    --------
    >>> sp = build_grid_space(1, 4)
    >>> sp.coords.ravel().tolist(), sp.measure.tolist(), sp.spacing
    ([0.0, 0.25, 0.5, 0.75], [0.25, 0.25, 0.25, 0.25], 0.25)
    """
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    if boundary not in ("periodic", "reflecting"):
        raise ValueError(f"boundary must be 'periodic' or 'reflecting', got {boundary!r}")
    if side < 2:
        raise ValueError(f"side must be >= 2, got {side}")
    n = side ** dim
    if n > MAX_POINTS:
        raise ValueError(f"grid has {n} points; the limit is {MAX_POINTS} (side**dim <= 2**16)")
    axis = np.arange(side) / side
    if dim == 1:
        coords = axis[:, None]
    else:
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        coords = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return Space(measure=np.full(n, 1.0 / n), spacing=1.0 / side, coords=coords,
                 dim=dim, side=side, boundary=boundary)


def space_from_matrix(dist, measure, spacing=None) -> Space:
    dist = np.asarray(dist, dtype=float)
    measure = np.asarray(measure, dtype=float)
    if dist.shape != (len(measure), len(measure)):
        raise ValueError("dist must be an n x n matrix matching measure")
    if np.any(measure <= 0):
        raise ValueError("measure must be strictly positive")
    if not np.allclose(dist, dist.T) or np.any(np.diag(dist) != 0) or np.any(dist < 0):
        raise ValueError("dist must be symmetric, nonnegative, with zero diagonal")
    if spacing is None:
        pos = dist[dist > 0]
        spacing = float(pos.min()) if pos.size else 1.0
    return Space(measure=measure, spacing=float(spacing), _dist=dist)


@dataclass(frozen=True, eq=False)
class Ball:
    center: int
    radius: float
    members: np.ndarray
    mass: float

    def __contains__(self, i) -> bool:
        return bool(np.any(self.members == i))


def ball(space: Space, center: int, radius: float) -> Ball:
    """Closed ball ``{i : d(center, i) <= radius}``."""
    members = np.flatnonzero(space.dist[center] <= radius * (1 + RADIUS_RTOL))
    return Ball(int(center), float(radius), members, float(space.measure[members].sum()))


class BallList(list):
    """List of balls with cached dense membership arrays.

    ``mask`` is the ``(n_balls, n_points)`` indicator matrix; ``radii`` and
    ``masses`` are aligned with it.  The cache assumes the list is not
    mutated after the first access.
    """

    _arrays = None

    def _build(self):
        if self._arrays is None:
            if not len(self):
                raise ValueError("empty ball list")
            n = max(int(b.members.max()) for b in self) + 1
            mask = np.zeros((len(self), n), dtype=bool)
            for row, b in enumerate(self):
                mask[row, b.members] = True
            radii = np.array([b.radius for b in self])
            masses = np.array([b.mass for b in self])
            self._arrays = (mask, radii, masses)
        return self._arrays

    def mask_for(self, n_points: int) -> np.ndarray:
        mask = self._build()[0]
        if mask.shape[1] < n_points:
            mask = np.pad(mask, ((0, 0), (0, n_points - mask.shape[1])))
        return mask

    @property
    def radii(self) -> np.ndarray:
        return self._build()[1]

    @property
    def masses(self) -> np.ndarray:
        return self._build()[2]


def as_ball_list(balls: Sequence[Ball]) -> BallList:
    return balls if isinstance(balls, BallList) else BallList(balls)


def radius_grid(space: Space, radii_per_octave: int) -> np.ndarray:
    """Geometric radii from the spacing up to the first value >= diameter."""
    diam = space.diameter
    radii = []
    j = 0
    while True:
        r = space.spacing * 2.0 ** (j / radii_per_octave)
        radii.append(r)
        if r >= diam * (1 - RADIUS_RTOL):
            break
        j += 1
    return np.array(radii)


def enumerate_balls(space: Space, radii_per_octave: int = 2) -> BallList:
    """All balls with radii on a geometric grid, deduplicated by member set.

    Ordering is by radius, then center.  When two (center, radius) pairs
    produce the same member set, the first one in that order is kept.
    """
    if radii_per_octave < 1:
        raise ValueError("radii_per_octave must be >= 1")
    d = space.dist
    seen = set()
    out = BallList()
    for r in radius_grid(space, radii_per_octave):
        inside = d <= r * (1 + RADIUS_RTOL)
        for c in range(space.n):
            row = inside[c]
            key = np.packbits(row).tobytes()
            if key in seen:
                continue
            seen.add(key)
            members = np.flatnonzero(row)
            out.append(Ball(c, float(r), members, float(space.measure[members].sum())))
    return out


def dilate(space: Space, members: np.ndarray, length: float) -> np.ndarray:
    """Indices within ``length`` of the set ``members`` (the set included)."""
    near = space.dist[members].min(axis=0) <= length * (1 + RADIUS_RTOL)
    return np.flatnonzero(near)


@dataclass
class DoublingFit:
    C_D: float
    n_D: float
    worst_ball: Ball | None = None
    worst_lambda: float | None = None
    worst_ratio: float | None = None

    def holds(self, space: Space, balls: Sequence[Ball], lambdas=(2, 4, 8)) -> bool:
        ratios, lams = _doubling_ratios(space, balls, lambdas)
        return bool(np.all(ratios <= self.C_D * lams ** self.n_D * (1 + 1e-12)))


def _doubling_ratios(space: Space, balls: Sequence[Ball], lambdas):
    d = space.dist
    mu = space.measure
    ratios, lams = [], []
    for b in balls:
        row = d[b.center]
        for lam in lambdas:
            big = mu[row <= lam * b.radius * (1 + RADIUS_RTOL)].sum()
            ratios.append(big / b.mass)
            lams.append(float(lam))
    return np.array(ratios), np.array(lams)


def doubling_fit(space: Space, balls: Sequence[Ball], lambdas=(2, 4, 8),
                 n_step: float = 0.01, C_cap: float = 1.0) -> DoublingFit:
    """Fit ``mu(B(x, lam r)) <= C_D lam**n_D mu(B(x, r))`` over the given balls.

    For each exponent on a grid of step ``n_step`` the smallest admissible
    constant is ``C(n) = max(1, max ratio / lam**n)``.  The fit returned is
    the smallest grid exponent with ``C(n) <= C_cap`` together with ``C(n)``;
    with the default ``C_cap=1`` this is the doubling dimension.
    """
    if not len(balls):
        raise ValueError("balls must be nonempty")
    ratios, lams = _doubling_ratios(space, balls, lambdas)
    logr = np.log(np.maximum(ratios, 1.0))
    # smallest n with ratio / lam**n <= C_cap for all pairs
    need = (logr - np.log(C_cap)) / np.log(lams)
    n_exact = max(0.0, float(need.max()))
    n_D = float(np.ceil(n_exact / n_step - 1e-9) * n_step) + 0.0
    n_D = max(n_D, 0.0)
    scaled = ratios / lams ** n_D
    C_D = max(1.0, float(scaled.max()))
    w = int(np.argmax(scaled))
    n_l = len(lambdas)
    return DoublingFit(C_D=C_D, n_D=n_D, worst_ball=balls[w // n_l],
                       worst_lambda=float(lams[w]), worst_ratio=float(ratios[w]))
