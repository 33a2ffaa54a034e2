"""Numerical laboratory for BMO spaces adapted to semigroups on finite metric measure spaces."""

from .bmo import bmo_norm, bmo_report, dist_upper, epsilon_L, jn_tail
from .carleson import CarlesonMeasure, balayage_build, carleson_norm, iterate_balayage, sweep
from .decompose import (averaged_decompose, coefficient_checks, global_decompose, graded_refine,
                        stopping_time)
from .dyadic import build_shifted_dyadic, sample_ensemble, verify_axioms
from .functions import make_function
from .hardy import make_atom, pairing_test, square_function
from .semigroup import build_operator, gaussian_fit, heat_apply, heat_kernel
from .space import build_grid_space, doubling_fit, enumerate_balls

__version__ = "0.1.0"
