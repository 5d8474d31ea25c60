"""Finite-particle mean-field Langevin dynamics and particle-approximation diagnostics."""
from .model import (Dataset, DimensionError, LinearFeature, Loss, ProblemSpec, TanhGated,
                    TanhLinear, as_ensemble, bounded_feature, energy_f, first_variation,
                    load_dataset, model_predict, neuron_eval, quadratic_feature, regularity,
                    risk_f0, save_dataset, wasserstein_gradient)
from .dynamics import (CouplingPlan, DivergenceError, InitLaw, IntegratorConfig, Trajectory,
                       mfld_step, read_ensemble, run_coupled, run_mfld, run_shared_noise,
                       second_moment_trace, write_ensemble)
from .gaussian import AnalyticGaussian, gaussian_entropy, gaussian_kl, gaussian_w2
from .estimators import kl_knn, w2_empirical
from .diagnostics import (GapReport, MomentMeasure, ProximalGibbs, bregman, bregman_mc_bound,
                          bridge_residual, mean_field_minimizer, n_particle_gibbs_logdensity,
                          prop1_gap_check, prop2_inequality_check, proximal_gibbs_logdensity,
                          variance_bound_mc)
from .bounds import (BoundInputs, convergence_envelope, delta_eta, delta_eta_n,
                     lsi_holley_stroock, new_poc_bound, prior_discrete_bound, prior_poc_bound)
from .experiments import ExperimentConfig, StudyReport, emit_report, run_study

__version__ = "0.1.0"
