"""Path-integral class operators and Heisenberg projections for time-averaged position."""
from .analytic import (ScaleConstants, apply_kernel_to_state, c_matrix_element,
                       classical_limit_form, fit_smearing_length, free_evolution,
                       p_matrix_element, propagator, scale_constants, xbar_eigenfunction)
from .core import (ExtentError, GaussianState, Grid, GridState, Interval, Partition,
                   SystemParams, lambda_cgs, make_partition, sample_gaussian)
from .decoherence import DecoherenceMatrix, DecoherenceReport, decoherence_matrix, hbar_sweep
from .oracle import (EvolutionPlan, PotentialSpec, build_xbar_operator, class_operator_apply,
                     projection_apply)
from .specfun import cerf, e_delta, e_delta_smeared, erf_complex
from .symbols import weyl_symbol

__version__ = "0.1.0"
