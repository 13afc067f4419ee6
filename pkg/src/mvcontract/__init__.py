"""Simulation and rate certification for exponentially ergodic McKean-Vlasov SDEs.

The package builds the distance-shaping functions that turn coupling
estimates into Wasserstein contraction rates, evaluates the rate constants
numerically with auditable witnesses, simulates reflection/synchronously
coupled interacting-particle systems, and cross-validates the particle
dynamics against a 1-d nonlinear Fokker-Planck solve.
"""

__version__ = "0.1.0"

from .certify import beta_sweep, certify_scenario
from .decayfit import FitResult, fit_exponential_rate
from .distance import (G2Constants, GammaSpec, PsiFunction, build_psi_eigen,
                       build_psi_explicit, c_psi, identity_psi, rate_constants_g2)
from .errors import (BlowUpError, DegenerateCouplingError, DomainError, FitError,
                     IntegrabilityError, MvContractError, NumericsError,
                     ScenarioFormatError, SolverError, StructureError)
from .experiments import (DecayCurve, estimate_stationary, initial_coupling,
                          run_decay_experiment, scenario_cost)
from .fpe1d import (FPProblem, FPSolver, Grid1D, convolve_w, problem_from_scenario,
                    solve_fp, w1_particle_grid)
from .model import (CoefficientSet, GradientKernel, LyapunovSpec, MomentKernel,
                    PairwiseKernel, check_cc1, check_decomposition, check_lyapunov,
                    diffusion_matrix, evaluate_drift, evaluate_drift_batch)
from .rates import (ExtremumResult, RateCertificate, SearchBudget, alpha_lb,
                    fit_lyapunov_constants, kappa_lb, lambda_lb, pattern_search,
                    puncture_mass, theorem22_rate)
from .rng import NoiseField, aux_generator
from .scenarios import (FpeConfig, SamplerSpec, Scenario, builtin_scenario,
                        emit_scenario, load_scenario)
from .simulator import (CoupledEnsemble, ParticleEnsemble, SimConfig,
                        order_violation_count, step_coupled, step_em,
                        step_synchronous)
from .transport import (CostSpec, cost_matrix, d_phi_distance, empirical_distance,
                        empirical_ratio_distance, optimal_assignment, phi_cost,
                        plain_cost, sinkhorn_distance, weighted_cost)
