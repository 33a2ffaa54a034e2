"""
Sweeping Carleson measures and pairing with atoms
=================================================

Iterated balayage writes ``f = g + sweep(sigma) + remainder`` with ``g``
bounded and ``sigma`` a Carleson measure, shrinking the remainder at each
step.  Atoms of the Hardy space pair with ``f`` at most by its BMO norm plus
a drift term.
"""

import numpy as np

from bmolab import (bmo_norm, build_grid_space, build_operator, enumerate_balls, iterate_balayage,
                    make_function, pairing_test, sample_ensemble)
from bmolab.hardy import atom_family

space = build_grid_space(1, 256)
op = build_operator(space)
balls = enumerate_balls(space)
ensemble = sample_ensemble(space, 20, seed=5)
f = make_function(space, "log_singularity(x0=0.5)")

###############################################################################
# Iteration history.

result = iterate_balayage(op, f, ensemble, balls=balls)
print(result.history_csv())
print(f"theta = {result.theta}, (||g|| + ||sigma||_C) / ||f|| = {result.constant:.3f}, "
      f"residual {result.residual:.1e}")

###############################################################################
# Atoms on balls of every radius, paired with ``f``.

atoms = atom_family(op, balls)
rep = pairing_test(op, f, atoms, balls)
print(f"{rep['n_atoms']} atoms; max |<f, a>| / ||f|| = {rep['max_ratio']:.4f}; "
      f"max drift = {rep['max_drift']:.4f}")
ok = np.abs(rep["pairings"]) <= np.abs(rep["drift"]) + bmo_norm(op, f, balls)[0]
print("split bound holds for every atom:", bool(ok.all()))
