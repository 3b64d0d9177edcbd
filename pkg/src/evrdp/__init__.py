"""Monte Carlo privacy accounting with verified release."""

from evrdp.accountant import (AccountantQuery, EpsilonEstimate, OnlineState,
                              TargetBelowResolution, delta_of_eps,
                              eps_of_delta, online_init, online_read,
                              online_step, relative_error)
from evrdp.bounds import (BoundMethod, MomentBoundResult, RdpCurve,
                          is_moment_bound_holder, is_moment_bound_js,
                          is_moment_bound_max, r_lambda_x, smc_moment_bound)
from evrdp.estimators import (DeltaEstimate, EstimatorConfig, Method,
                              estimate, heuristic_theta, is_estimate,
                              smc_estimate)
from evrdp.mechanisms import MechanismKind, MechanismSpec
from evrdp.oracle import (ConvolutionBracket, GridSpec, QuadratureSpec,
                          convolution_delta, gaussian_exact_delta,
                          quadrature_delta_single)
from evrdp.sampling import sample_prv
from evrdp.verifier import (EvrPlan, Infeasible, Rejected, Verdict,
                            build_plan, delta_offset_heuristic,
                            plan_sample_size, run_evr, verify)

__version__ = "0.1.0"

__all__ = [
    "AccountantQuery",
    "BoundMethod",
    "ConvolutionBracket",
    "DeltaEstimate",
    "EpsilonEstimate",
    "EstimatorConfig",
    "EvrPlan",
    "GridSpec",
    "Infeasible",
    "MechanismKind",
    "MechanismSpec",
    "Method",
    "MomentBoundResult",
    "OnlineState",
    "QuadratureSpec",
    "RdpCurve",
    "Rejected",
    "TargetBelowResolution",
    "Verdict",
    "build_plan",
    "convolution_delta",
    "delta_of_eps",
    "delta_offset_heuristic",
    "eps_of_delta",
    "estimate",
    "gaussian_exact_delta",
    "heuristic_theta",
    "is_estimate",
    "is_moment_bound_holder",
    "is_moment_bound_js",
    "is_moment_bound_max",
    "online_init",
    "online_read",
    "online_step",
    "plan_sample_size",
    "quadrature_delta_single",
    "r_lambda_x",
    "relative_error",
    "run_evr",
    "sample_prv",
    "smc_estimate",
    "smc_moment_bound",
    "verify",
]
