"""
Oscillation norms and tail rates on a path
==========================================

The BMO norm attached to the heat semigroup compares ``f`` on every ball
with its own smoothed version at the ball's time scale.  A logarithmic
singularity has a finite norm, and its oscillation tails decay
exponentially with a rate ``epsilon_L``.
"""

import numpy as np

from bmolab import bmo_norm, build_grid_space, build_operator, enumerate_balls, epsilon_L, make_function

space = build_grid_space(1, 256)
op = build_operator(space, "laplacian")
balls = enumerate_balls(space, radii_per_octave=2)
print(f"{space.n} points, {len(balls)} distinct balls")

###############################################################################
# Norm and the ball that realises it.

f = make_function(space, "log_singularity(x0=0.5)")
norm, witness = bmo_norm(op, f, balls)
print(f"||f||_BMO = {norm:.6f}, attained on a ball of radius {witness.radius:.4f} around point {witness.center}")

###############################################################################
# Tail rate.  ``epsilon_L`` is the smallest rate with
# ``tail(lam) <= exp(-lam / epsilon_L)`` on the tested thresholds.

eps, lam_min, (lams, tails) = epsilon_L(op, f, balls, return_curve=True)
print(f"epsilon_L = {eps:.6f}, thresholds from {lam_min:.3f}")
for lam, tail in list(zip(lams, tails))[::12]:
    print(f"  lam = {lam:6.3f}  tail = {tail:.3e}  bound = {np.exp(-lam / eps):.3e}")

###############################################################################
# Bounded functions have zero rate but a positive norm.

g = make_function(space, "indicator(a=0, b=0.5)")
print(f"indicator: norm = {bmo_norm(op, g, balls)[0]:.4f}, epsilon_L = {epsilon_L(op, g, balls)[0]}")
