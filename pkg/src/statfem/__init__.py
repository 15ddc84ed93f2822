"""Statistical finite elements: PC displacement priors conditioned on sensor data."""

from .chaos import (LognormalInput, MultiIndexSet, PCExpansion, SampleSet, hermite_eval,
                    lognormal_pc, lognormal_transform, mc_moments, multi_index_set, pc_moments,
                    pc_regression, propagate_prior)
from .errors import (CholeskyError, ConvergenceError, MeshError, RankDeficientError,
                     SampleSolveError, SensorLocationError, SingularSystemError, StatFEMError)
from .fem import (BarProblem, MaterialParams, analytic_bar, equilibrium_residual, projection_matrix,
                  recover_stress, solve, solve_linear_elastic, solve_st_venant)
from .inference import (GaussianField, Hyperparameters, ObservationSet, SensorGaussian,
                        estimate_hyperparameters, generate_observations, kernel_matrix,
                        log_kernel_derivatives, marginal_covariance, neg_log_marginal,
                        neg_log_marginal_grad, posterior_update, rmse, true_response)
from .mesh import Mesh, make_bar_mesh, make_plate_hole_mesh, read_mesh, write_mesh

__version__ = "0.1.0"

__all__ = [
    "BarProblem", "CholeskyError", "ConvergenceError", "GaussianField", "Hyperparameters",
    "LognormalInput", "MaterialParams", "Mesh", "MeshError", "MultiIndexSet", "ObservationSet",
    "PCExpansion", "RankDeficientError", "SampleSet", "SampleSolveError", "SensorGaussian",
    "SensorLocationError", "SingularSystemError", "StatFEMError", "analytic_bar", "equilibrium_residual",
    "estimate_hyperparameters", "generate_observations", "hermite_eval", "kernel_matrix",
    "log_kernel_derivatives", "lognormal_pc", "lognormal_transform", "make_bar_mesh",
    "make_plate_hole_mesh", "marginal_covariance", "mc_moments", "multi_index_set", "neg_log_marginal",
    "neg_log_marginal_grad", "pc_moments", "pc_regression", "posterior_update", "projection_matrix",
    "propagate_prior", "read_mesh", "recover_stress", "rmse", "solve", "solve_linear_elastic",
    "solve_st_venant", "true_response", "write_mesh",
]
