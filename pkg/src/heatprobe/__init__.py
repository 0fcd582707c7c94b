"""heatprobe: simulation and numerical potential theory for systems of
non-linear stochastic heat equations driven by space-time white noise.

Subpackage map:

* kernel     exact heat kernel on [0,1] (zero-flux / absorbing) and its
             integral identities
* solver     explicit finite-difference scheme, counter-based noise,
             streaming ensembles, increment-moment fits
* malliavin  pathwise derivative propagation and Gram-matrix scaling
* potential  discrete energies, capacities, covers, box dimensions
* stats      KDE, hitting probabilities, level sets, dimension reports
* cli        JSON-configured experiment runner
"""

from ._fits import FitError, ScalingFit, loglog_fit
from .kernel import (KernelConfig, DomainError, TruncationError, eval_green,
                     free_space, kernel_mass, l2_window, l2q_upper,
                     local_l2_lower, semigroup_residual)
from .solver import (BlowUpError, CoefficientModel, GridSpec, RngSpec,
                     StabilityError, Trajectory, bounded_smooth_model,
                     constant_model, ensemble_run, linear_test_model,
                     model_from_spec, moment_scaling, simulate)
from .malliavin import (DerivativeSlab, MalliavinMatrix, QuadratureSet,
                        TwoPointMatrix, bloc_scaling, eigen_scaling,
                        make_anchor_ladder, one_point_matrix,
                        propagate_derivatives, quadrature_nodes,
                        two_point_matrix, two_point_scaling)
from .potential import (CompactSetMesh, CoverReport, DiscreteMeasure,
                        RieszKernelSpec, ball_mesh, box_dimension, capacity,
                        energy, hausdorff_upper, interval_mesh,
                        parabolic_distance, riesz_kernel, square_mesh)
from .stats import (DimensionReport, HitReport, KdeEstimate, LevelSetSample,
                    density_bound_check, dimension_report, hit_probability,
                    increment_collapse, kde_density, level_set,
                    sandwich_experiment, wilson_interval)

__version__ = "0.1.0"
