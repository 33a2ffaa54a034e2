"""
Bounded plus small-oscillation split over random lattices
==========================================================

Averaging the single-system construction over shifted dyadic lattices gives
``f = g + h`` where ``g`` is bounded by a multiple of ``||f||_BMO`` and ``h``
has BMO norm comparable to the tail rate ``epsilon_L(f)``.
"""

from bmolab import (build_grid_space, build_operator, enumerate_balls, epsilon_L, global_decompose,
                    make_function, sample_ensemble)
from bmolab.functions import DEFAULT_SUITE

space = build_grid_space(1, 256)
op = build_operator(space)
balls = enumerate_balls(space)
ensemble = sample_ensemble(space, 50, seed=0)

for expr in DEFAULT_SUITE:
    f = make_function(space, expr)
    eps = 1.1 * epsilon_L(op, f, balls)[0]
    dec = global_decompose(op, f, ensemble, eps, balls=balls)
    c = dec.certificates
    print(f"{expr}\n    ||g||/lam0 = {c['A1_measured']:.3f}   ||h||_BMO/eps = {c['A2_measured']:.3f}   "
          f"lam = {c['lambda']:.3f}   m = {c['m']}")
