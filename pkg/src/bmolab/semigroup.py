"""Nonnegative self-adjoint operators on grid spaces and their heat semigroups.

Every operator is stored with its full spectral decomposition ``L = U diag(lam) U^T``
so that ``exp(-tL)`` and its time derivatives are exact matrix functions.
Heat kernels are returned as densities against the measure: for a kernel
``K`` one has ``(exp(-tL) f)(x) = sum_y K[x, y] f[y] mu[y]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .space import RADIUS_RTOL, Space

__all__ = [
    "Operator", "GaussianFit", "DerivativeFit", "build_operator", "heat_apply",
    "heat_kernel", "gaussian_fit", "drift_bound", "time_derivative_check",
    "dyadic_times", "path_laplacian",
]

KINDS = ("laplacian", "schrodinger", "bessel")
# kernel entries below this fraction of the largest entry are treated as roundoff
KERNEL_FLOOR = 1e-12


@dataclass(eq=False)
class Operator:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    kind: str
    space: Space
    params: dict = field(default_factory=dict)
    conservative: bool = False
    _kernels: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def apply_spectral(self, f: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
        """``U diag(multiplier) U^T f``; ``f`` may be a vector or a column stack."""
        U = self.eigenvectors
        return U @ (multiplier.reshape(-1, *([1] * (np.ndim(f) - 1))) * (U.T @ f))

    def spectral_matrix(self, multiplier: np.ndarray) -> np.ndarray:
        U = self.eigenvectors
        return (U * multiplier) @ U.T

    def to_json(self) -> str:
        params = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return json.dumps({"kind": self.kind, "params": params, "N": self.n})


def path_laplacian(side: int, periodic: bool) -> np.ndarray:
    """Second-difference matrix ``degree - adjacency`` on a path or cycle (unit spacing).

    On a cycle neighbours are accumulated, so ``side = 2`` gives the matrix
    ``[[2, -2], [-2, 2]]``, the restriction of the infinite periodic lattice.
    """
    A = np.zeros((side, side))
    i = np.arange(side)
    if periodic:
        np.add.at(A, (i, (i + 1) % side), 1.0)
        np.add.at(A, (i, (i - 1) % side), 1.0)
    else:
        A[i[:-1], i[1:]] = 1.0
        A[i[1:], i[:-1]] = 1.0
    return np.diag(A.sum(axis=1)) - A


def _grid_laplacian(space: Space) -> np.ndarray:
    if space.coords is not None and space.side is not None:
        L1 = path_laplacian(space.side, space.boundary == "periodic")
        if space.dim == 1:
            L = L1
        else:
            eye = np.eye(space.side)
            L = np.kron(L1, eye) + np.kron(eye, L1)
        return L / space.spacing ** 2
    # general space: nearest-neighbour graph at the minimal spacing
    if not np.allclose(space.measure, space.measure[0]):
        raise ValueError("graph Laplacians on general spaces need a uniform measure")
    d = space.dist
    A = ((d > 0) & (d <= space.spacing * (1 + RADIUS_RTOL))).astype(float)
    return (np.diag(A.sum(axis=1)) - A) / space.spacing ** 2


def _eigh(M: np.ndarray):
    try:
        lam, U = np.linalg.eigh(M)
    except np.linalg.LinAlgError:
        lam, U = scipy.linalg.eigh(M, driver="ev")
    top = max(float(np.abs(lam).max()), 1.0) if lam.size else 1.0
    if lam.size and lam.min() < -1e-10 * top:
        raise ValueError(f"operator is not positive semidefinite (min eigenvalue {lam.min():.3e})")
    lam = np.where(lam < KERNEL_FLOOR * top, 0.0, lam)
    return lam, U


def build_operator(space: Space, kind: str = "laplacian", V=None, lambda_b: float | None = None) -> Operator:
    """Build a nonnegative self-adjoint operator on ``space``.

    Parameters
    ----------
    kind : {"laplacian", "schrodinger", "bessel"}
        ``laplacian``: graph second difference divided by ``spacing**2``.
        ``schrodinger``: laplacian plus ``diag(V)`` with ``V >= 0``.
        ``bessel``: 1-D operator ``-d^2/dx^2 + (lambda_b**2 - lambda_b) / x**2``
        on positions ``x_i = (i + 1) / side`` in ``(0, 1]``, with a zero
        boundary value at the excluded endpoint ``x = 0`` and a reflecting
        right end.
    V : array_like or float, optional
        Potential for ``schrodinger``.
    lambda_b : float, optional
        Parameter for ``bessel``; must be positive.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown operator kind {kind!r}; expected one of {KINDS}")
    L = _grid_laplacian(space)
    params: dict = {}
    if kind == "schrodinger":
        if V is None:
            raise ValueError("schrodinger operator needs a potential V")
        V = np.broadcast_to(np.asarray(V, dtype=float), (space.n,)).copy()
        if np.any(V < 0):
            raise ValueError(f"potential must be nonnegative (min {V.min():.3g})")
        L = L + np.diag(V)
        params["V"] = V
    elif kind == "bessel":
        if space.dim != 1:
            raise ValueError("bessel operator is defined on 1-D spaces only")
        if lambda_b is None or lambda_b <= 0:
            raise ValueError(f"bessel parameter must be positive, got {lambda_b}")
        if space.boundary == "periodic":
            raise ValueError("bessel operator needs a reflecting (non-periodic) grid")
        x = space.coords[:, 0] + space.spacing
        L = L.copy()
        L[0, 0] += 1.0 / space.spacing ** 2
        L = L + np.diag((lambda_b ** 2 - lambda_b) / x ** 2)
        params["lambda_b"] = float(lambda_b)
    L = 0.5 * (L + L.T)
    lam, U = _eigh(L)
    conservative = bool(np.allclose(L.sum(axis=1), 0.0, atol=1e-9 * max(1.0, np.abs(L).max())))
    return Operator(matrix=L, eigenvalues=lam, eigenvectors=U, kind=kind, space=space,
                    params=params, conservative=conservative)


def heat_apply(op: Operator, t: float, f) -> np.ndarray:
    """``exp(-tL) f`` computed spectrally; ``t = 0`` returns a copy of ``f``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    f = np.asarray(f, dtype=float)
    if t == 0:
        return f.copy()
    return op.apply_spectral(f, np.exp(-t * op.eigenvalues))


def heat_kernel(op: Operator, t: float) -> np.ndarray:
    """Density ``K_t`` of ``exp(-tL)`` against the measure (cached per ``t``)."""
    if t <= 0:
        raise ValueError("t must be positive")
    key = float(t)
    K = op._kernels.get(key)
    if K is None:
        K = op.spectral_matrix(np.exp(-t * op.eigenvalues)) / op.space.measure[None, :]
        K.setflags(write=False)
        op._kernels[key] = K
    return K


def dyadic_times(space: Space) -> np.ndarray:
    """Times ``4**j * spacing**2`` covering ``[spacing**2, diam**2]``."""
    s2 = space.spacing ** 2
    top = max(space.diameter ** 2, s2)
    out = [s2]
    while out[-1] * 4 <= top * (1 + 1e-12):
        out.append(out[-1] * 4)
    return np.array(out)


@dataclass
class GaussianFit:
    C: float
    c: float
    max_violation: float
    witness: tuple | None = None
    per_c: dict = field(default_factory=dict)


C_LADDER = (1.0, 2.0, 4.0, 8.0, 16.0)


def _ball_masses(space: Space, radius: float) -> np.ndarray:
    return (space.dist <= radius * (1 + RADIUS_RTOL)) @ space.measure


def _gaussian_constant(kernels, space: Space, t_grid, c: float, scale_t: bool):
    """Smallest ``C`` with ``|K_t| <= C / (t^a mu(B(x, sqrt t))) exp(-d^2 / (c t))``."""
    d2 = space.dist ** 2
    best, wit = 0.0, None
    for t, K in zip(t_grid, kernels):
        absK = np.abs(K)
        top = absK.max()
        if top == 0:
            continue
        keep = absK > KERNEL_FLOOR * top
        vol = _ball_masses(space, np.sqrt(t))
        with np.errstate(divide="ignore"):
            logv = np.log(absK) + np.log(vol)[:, None] + d2 / (c * t)
        if scale_t:
            logv = logv + np.log(t)
        logv = np.where(keep, logv, -np.inf)
        i = np.unravel_index(np.argmax(logv), logv.shape)
        val = float(np.exp(logv[i]))
        if val > best:
            best, wit = val, (float(t), int(i[0]), int(i[1]))
    return best, wit


def gaussian_fit(op: Operator, t_grid=None, ladder=C_LADDER) -> GaussianFit:
    """Fit the Gaussian upper bound ``K_t(x, y) <= C / mu(B(x, sqrt t)) exp(-d^2 / (c t))``.

    For each ``c`` on the ladder the smallest admissible ``C`` is computed
    exactly over all tested ``(t, x, y)``; the pair with the smallest ``C``
    is returned.  Entries below ``1e-12`` times the largest entry at the
    same ``t`` are roundoff of an exponentially small value and are skipped.
    ``max_violation`` is the largest excess ``K - bound`` at the chosen pair.
    """
    sp = op.space
    t_grid = dyadic_times(sp) if t_grid is None else np.asarray(t_grid, dtype=float)
    kernels = [heat_kernel(op, t) for t in t_grid]
    per_c = {}
    for c in ladder:
        per_c[c] = _gaussian_constant(kernels, sp, t_grid, c, scale_t=False)
    c_best = min(ladder, key=lambda c: (per_c[c][0], c))
    C, wit = per_c[c_best]
    if sp.n == 1:
        C = max(C, 1.0)
    viol = _max_violation(kernels, sp, t_grid, C, c_best, scale_t=False)
    return GaussianFit(C=C, c=c_best, max_violation=viol, witness=wit,
                       per_c={c: v[0] for c, v in per_c.items()})


def _max_violation(kernels, space, t_grid, C, c, scale_t):
    d2 = space.dist ** 2
    worst = -np.inf
    for t, K in zip(t_grid, kernels):
        absK = np.abs(K)
        top = absK.max()
        vol = _ball_masses(space, np.sqrt(t))
        bound = C / vol[:, None] * np.exp(-d2 / (c * t))
        if scale_t:
            bound = bound / t
        excess = np.where(absK > KERNEL_FLOOR * top, absK - bound * (1 + 1e-12), -np.inf)
        worst = max(worst, float(excess.max()))
    return worst


def drift_bound(op: Operator, f, t: float, K: float) -> tuple[float, float]:
    """Sup norms of ``(e^{-tL} - e^{-KtL}) f`` and ``tL (e^{-tL} - e^{-KtL}) f``."""
    if t <= 0 or K < 1:
        raise ValueError("need t > 0 and K >= 1")
    lam = op.eigenvalues
    diff = np.exp(-t * lam) - np.exp(-K * t * lam)
    f = np.asarray(f, dtype=float)
    d0 = float(np.abs(op.apply_spectral(f, diff)).max())
    d1 = float(np.abs(op.apply_spectral(f, t * lam * diff)).max())
    return d0, d1


@dataclass
class DerivativeFit:
    C1: float
    c1: float
    max_violation: float
    witness: tuple | None = None


def time_derivative_check(op: Operator, t_grid=None, ladder=C_LADDER) -> DerivativeFit:
    """Fit ``|d/dt K_t(x, y)| <= C1 / (t mu(B(x, sqrt t))) exp(-d^2 / (c1 t))``.

    The derivative kernel is ``-U diag(lam e^{-t lam}) U^T / mu`` evaluated
    exactly; the fit follows :func:`gaussian_fit`.
    """
    sp = op.space
    t_grid = dyadic_times(sp) if t_grid is None else np.asarray(t_grid, dtype=float)
    lam = op.eigenvalues
    kernels = [op.spectral_matrix(-lam * np.exp(-t * lam)) / sp.measure[None, :] for t in t_grid]
    per_c = {c: _gaussian_constant(kernels, sp, t_grid, c, scale_t=True) for c in ladder}
    c_best = min(ladder, key=lambda c: (per_c[c][0], c))
    C, wit = per_c[c_best]
    viol = _max_violation(kernels, sp, t_grid, C, c_best, scale_t=True)
    return DerivativeFit(C1=C, c1=c_best, max_violation=viol, witness=wit)
