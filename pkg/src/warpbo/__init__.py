"""Multi-fidelity Bayesian optimization with a learned fidelity warping network.

A Gaussian-process surrogate over (design, fidelity) pairs whose fidelity
coordinates pass through a small learnable sigmoid network, driven by a
cost-normalized entropy-search acquisition inside a budgeted loop.
"""

from .acquisition import AcqConfig, es_per_cost, expected_improvement, pmin_entropy, sample_representers
from .data import BudgetLedger, Dataset, EvaluationRecord, RunResult
from .external import EvaluationError, ExternalEvaluator, external_objective
from .globalopt import Box, direct_maximize, lhs_sample, random_maximize
from .gp import ModelParams, ModelState, NumericalError, PosteriorGaussian, fit, nlml, nlml_grad, posterior, sample_joint
from .kernels import ArbfParams, FactorizedKernelParams, FiniteRankParams, arbf_eval, factorized_eval, finite_rank_eval, gram_matrix
from .learn import LearnConfig, learn_hyperparameters, quasi_newton_minimize
from .loop import LoopConfig, best_at_target, initialize, propose_next, run
from .objectives import CostModel, ObjectiveSpec, make_objective, mf_branin, mf_curve, mf_park4, noisy_wrap
from .warp import WarpParams, warp_forward, warp_init, warp_jacobian

__version__ = "0.1.0"
