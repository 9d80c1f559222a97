"""Transport-based solver for isentropic compressible flow on the unit
sphere: geodesic geometry, icosphere meshes, optimal transport, a
variational (minimizing-movement) time stepper, Helmholtz projections,
and tangent-bundle particle dynamics.
"""

__version__ = "0.1.0"

from .kernels import BACKEND
from .sphere_geom import (exp_map, log_map, distance, parallel_transport,
                          tangent_basis)
from .mesh import Mesh, Density, build_icosphere, mollify
from .energy import (theta_power, theta_power_shortcut, theta_log,
                     theta_custom, internal_energy, special_fisher)
from .ot import (cost_matrix, transport_lp, w2_squared_exact, w1_exact,
                 sinkhorn, c_transform, push_forward_displacement)
from .jko import (jko_step, JkoResult, JkoConvergenceError,
                  fisher_gap_check, minimizer_bounds_check)
from .helmholtz import (helmholtz_decompose, weighted_decompose,
                        solve_poisson, spectral_gap_estimate)
from .tangent_flow import (PhasePoint, TrajectoryBundle, step_predictor,
                           integrate_predictor, integrate_integral_equation,
                           tangent_cost, vorticity_diagnostic,
                           path_regularity)
from .euler_solver import (run, SolverState, EnergyLedger, NumericalAbort,
                           make_initial, hamiltonian, onofri_check,
                           weak_continuity_residual, gronwall_compare)
