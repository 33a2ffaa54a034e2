"""
A stopping-time split on one dyadic system
==========================================

Cubes are selected where the dilated mean oscillation exceeds a threshold
``lam``.  The output splits ``(f - e^{-l(Q0)^2 L} f) 1_{Q0}`` exactly into a
bounded part and a sum of cube coefficients.
"""

import numpy as np

from bmolab import (bmo_norm, build_grid_space, build_operator, build_shifted_dyadic, coefficient_checks,
                    enumerate_balls, make_function, stopping_time)

space = build_grid_space(1, 256)
op = build_operator(space)
balls = enumerate_balls(space)
system = build_shifted_dyadic(space, [0.0])

f = make_function(space, "log_singularity(x0=0.5)")
norm = bmo_norm(op, f, balls)[0]

###############################################################################
# Raising the threshold thins out the generations.

for mult in (1.0, 2.0, 3.0, 4.0):
    forest = stopping_time(op, f, system, lam=mult * norm)
    sizes = [len(gen) for gen in forest.generations[1:]]
    print(f"lam = {mult:.0f} x norm: generations {sizes}, gamma_k {np.round(forest.gamma_k(), 4).tolist()}, "
          f"window ok: {forest.window_ok}, residual {forest.reconstruction_residual:.1e}")

###############################################################################
# Measured constants of the coefficients at ``lam = 2 ||f||``.

forest = stopping_time(op, f, system, lam=2 * norm)
report = coefficient_checks(forest)
for key in ("C_size", "C_smooth", "C_holder", "C_int_0", "C_int_1"):
    print(f"{key:9s} {report[key]:.4f}")
print("bounded part sup / lam:", np.abs(forest.g_part).max() / forest.lam)
