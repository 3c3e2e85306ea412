"""Calculus of variations and path integrals over mollifier-regularized fields."""

__version__ = "0.1.0"

from .mollifiers import Mollifier, MollifierFamily, build_family, mollifier, moments
from .generalized import GenFunction, Window, convolve, mollifier_inner, order_estimate, window
from .variation import (Functional, VariationProbe, el_residual, gateaux, gateaux_mixed, legendre_clebsch,
                        lie_exp_variation)
from .ocontrol import (OCProblem, Trajectory, extremize, integrate_adjoint, oc_action, pmp_residuals,
                       second_variation_blocks)
from .oscillator import HOConfig, build_ho, coherent_overlap, ho_table
from .pathintegral import delta_integrate, discrete_action, ho_propagator, oc_propagate, quad_gaussian_pi
from .scalarfield import ScalarLattice, scalar_boundary_cost, scalar_oc_action, scalar_pmp_check
