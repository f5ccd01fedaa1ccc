"""keldysh-lab: desk-scale laboratory for closed-time-contour fermion
dynamics.

Exact Fock-space evolution is the ground truth; the contour covariance (in
continuum and time-discretized form), Wick determinants, the exterior-algebra
cumulant engine and the determinant/decay-constant bounds all cross-check
against it and against each other.
"""
from .models import (Interaction, ModelError, OneParticleModel,
                     antisymmetrize_blocks, density_density, preset_model,
                     random_antisymmetric_vertex, random_model)
from .fock import (EvolutionState, FockError, FockSpace, build_evolution_state,
                   build_fock_space, exact_expectation, exact_moments,
                   interaction_operator, quadratic_operator, trotter_generating)
from .covariance import (ContinuumCovariance, CommutingCovariance,
                         CovarianceError, DiscreteKeldyshSystem, KeldyshPoint,
                         build_continuum_covariance, build_discrete_inverse,
                         commuting_covariance, determinant_identity,
                         equiv_block, grid_consistency, invert_system)
from .grassmann import (GrassmannError, GrassmannPolynomial, grassmann_exp,
                        grassmann_log, grassmann_multiply, left_derivative)
from .cumulants import (CumulantTable, cumulant_table, cumulants_from_generating,
                        generating_polynomial, moment_tensors)
from .wick import (WickQuery, first_order_correction, free_moment_tensors,
                   free_two_point, gaussian_ordered_moment, wick_moment)
from .bounds import (BoundsError, CombesThomasParams, ConstantsReport,
                     combes_thomas_report, constants_report,
                     cumulant_diff_norms, decay_bounds_analytic,
                     decay_constants_numeric, det_bound,
                     det_bound_property_test, empirical_det_bound,
                     interaction_norm, k_zeta, k_zeta_infinite_chain,
                     one_inf_norm, spectral_infima, verify_cumulant_bound)

__version__ = "0.1.0"
