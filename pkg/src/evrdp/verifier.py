"""Estimate-Verify-Release: gate a mechanism on a Monte Carlo DP check.

A proposed (eps, delta_est) is accepted when a fresh Monte Carlo estimate
delta_hat of delta_Y(eps) falls below delta_est / tau - Delta. If the second
moment of the estimator is at most nu and the sample size satisfies

  m >= (2 nu / Delta^2) ln(tau / delta_est),

Bennett's inequality bounds the probability of accepting a proposal with
delta_est < tau delta_Y(eps) by delta_est / tau, so the released mechanism
is (eps, delta_est / tau)-DP.
"""

import dataclasses
import math
from typing import Any, Callable, Optional, Sequence

import numpy as np

from evrdp import bounds
from evrdp import estimators
from evrdp import mechanisms
from evrdp.bounds import BoundMethod
from evrdp.estimators import EstimatorConfig, Method

MAX_SAMPLES = 2**63 - 1


class _Sentinel:
  __slots__ = ("_name",)

  def __init__(self, name):
    self._name = name

  def __repr__(self):
    return self._name

  def __bool__(self):
    return False


# Output of ``run_evr`` when verification fails; the payload never ran.
Rejected = _Sentinel("Rejected")
# Output of ``plan_sample_size`` when the required m exceeds 2**63 - 1.
Infeasible = _Sentinel("Infeasible")


def is_rejected(value: Any) -> bool:
  return value is Rejected


def delta_offset_heuristic(tau: float, rho: float, delta_est: float) -> float:
  """Default threshold offset Delta = 0.4 (1/tau - 1/rho) delta_est.

  Args:
    tau: Underestimation factor in (0, 1).
    rho: Overestimation factor in (tau, 1].
    delta_est: Proposed delta, positive.

  Returns:
    Delta > 0.

  Raises:
    ValueError: If tau >= rho, tau <= 0, rho > 1 or delta_est <= 0.
  """
  if not tau > 0.0:
    raise ValueError(f"tau must be positive, got {tau}")
  if not tau < rho:
    raise ValueError(f"tau must be < rho, got tau={tau}, rho={rho}")
  if not rho <= 1.0:
    raise ValueError(f"rho must be <= 1, got {rho}")
  if not delta_est > 0.0:
    raise ValueError(f"delta_est must be positive, got {delta_est}")
  return 0.4 * (1.0 / tau - 1.0 / rho) * delta_est


def plan_sample_size(nu: float, delta_offset: float, tau: float,
                     delta_est: float):
  """Smallest m with exp(-m Delta^2 / (2 nu)) <= delta_est / tau.

  Args:
    nu: Bound on the estimator's second moment, positive.
    delta_offset: Delta, positive.
    tau: Underestimation factor in (0, 1].
    delta_est: Proposed delta with 0 < delta_est < tau.

  Returns:
    ceil((2 nu / Delta^2) ln(tau / delta_est)) as an int, or ``Infeasible``
    if it exceeds 2**63 - 1.

  Raises:
    ValueError: If nu or Delta is not positive, tau is outside (0, 1], or
      delta_est is outside (0, tau).
  """
  if not nu > 0.0:
    raise ValueError(f"nu must be positive, got {nu}")
  if not delta_offset > 0.0:
    raise ValueError(f"delta_offset must be positive, got {delta_offset}")
  if not 0.0 < tau <= 1.0:
    raise ValueError(f"tau must lie in (0, 1], got {tau}")
  if not 0.0 < delta_est < tau:
    raise ValueError(f"need 0 < delta_est < tau, got delta_est={delta_est}, "
                     f"tau={tau}")
  if math.isinf(nu):
    return Infeasible
  log_ratio = math.log(tau / delta_est)
  # Work in logs so extreme nu / Delta^2 cannot overflow.
  log_m = math.log(2.0) + math.log(nu) - 2.0 * math.log(delta_offset) + (
      math.log(log_ratio))
  if log_m > math.log(MAX_SAMPLES):
    return Infeasible
  m = max(1, math.ceil(2.0 * nu / delta_offset**2 * log_ratio))
  while not bennett_tail(m, nu, delta_offset) <= delta_est / tau:
    m += 1
  return m if m <= MAX_SAMPLES else Infeasible


def bennett_tail(m: int, nu: float, delta_offset: float) -> float:
  """exp(-m Delta^2 / (2 nu)), the false-positive bound at sample size m."""
  return math.exp(-m * delta_offset**2 / (2.0 * nu))


@dataclasses.dataclass(frozen=True)
class EvrPlan:
  """Parameters of one verification.

  Attributes:
    epsilon: Proposed epsilon, >= 0.
    delta_est: Proposed delta in (0, 1).
    tau: Underestimation factor in (0, 1].
    rho: Overestimation factor in [tau, 1].
    delta_offset: Delta >= 0 subtracted from the threshold.
    m: Sample size (0 when the plan is infeasible).
    nu: Second-moment bound the sample size was planned with.
    estimator: Estimator configuration; its m equals ``m``.
    feasible: False when Bennett's sample size overflows.
    nu_source: "analytic" or "empirical" (a user-supplied nu, for which the
      false-positive guarantee rests on an estimate).
    bound: The analytic bound behind nu, if any.
  """
  epsilon: float
  delta_est: float
  tau: float
  rho: float
  delta_offset: float
  m: int
  nu: float
  estimator: EstimatorConfig
  feasible: bool = True
  nu_source: str = "analytic"
  bound: Optional[bounds.MomentBoundResult] = None

  def __post_init__(self):
    if not (math.isfinite(self.epsilon) and self.epsilon >= 0.0):
      raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")
    if not 0.0 < self.delta_est < 1.0:
      raise ValueError(f"delta_est must lie in (0, 1), got {self.delta_est}")
    if not 0.0 < self.tau <= self.rho <= 1.0:
      raise ValueError(f"need 0 < tau <= rho <= 1, got tau={self.tau}, "
                       f"rho={self.rho}")
    if not self.delta_offset >= 0.0:
      raise ValueError(f"delta_offset must be >= 0, got {self.delta_offset}")
    if not self.threshold > 0.0:
      raise ValueError(
          f"threshold delta_est/tau - delta_offset = {self.threshold} must be "
          "positive; the verifier would reject everything")
    if self.nu_source not in ("analytic", "empirical"):
      raise ValueError(f"unknown nu_source {self.nu_source!r}")

  @property
  def threshold(self) -> float:
    return self.delta_est / self.tau - self.delta_offset

  @property
  def fp_bound(self) -> float:
    return self.delta_est / self.tau


@dataclasses.dataclass(frozen=True)
class Verdict:
  """Outcome of a verification.

  Attributes:
    accepted: delta_hat < threshold.
    delta_hat: The Monte Carlo estimate.
    threshold: delta_est / tau - Delta.
    plan: The plan that was run.
    fp_bound: delta_est / tau, the guaranteed false-positive rate when the
      plan's sample size meets Bennett's condition for a valid nu.
    heuristic_nu: True when nu came from an estimate rather than a bound.
    estimate: The full estimate, when the verifier ran one.
  """
  accepted: bool
  delta_hat: float
  threshold: float
  plan: EvrPlan
  fp_bound: float
  heuristic_nu: bool = False
  estimate: Optional[estimators.DeltaEstimate] = None


def fresh_seed() -> int:
  """A seed drawn from OS entropy."""
  return int(np.random.SeedSequence().generate_state(1, np.uint64)[0])


def _default_theta_grid(spec, epsilon):
  eff = estimators.sampling_spec(spec)
  star = estimators.heuristic_theta(eff, epsilon)
  upper = max(star, 1.0 / eff.sigma**2)
  grid = np.linspace(0.1 * upper, 1.2 * upper, 12)
  return tuple(float(t) for t in grid if t > 0)


def _analytic_nu(spec, epsilon, method, bound_method, theta, theta_grid):
  if method is Method.SMC:
    if bound_method not in (None, BoundMethod.SMC_RDP):
      raise ValueError(f"bound {bound_method.value} does not apply to the "
                       "simple estimator")
    return bounds.smc_moment_bound(spec, epsilon, 2.0), None
  bound_method = bound_method or BoundMethod.IS_HOLDER
  if bound_method is BoundMethod.SMC_RDP:
    raise ValueError("bound smc_rdp does not apply to the importance sampler")
  if theta is None and bound_method is BoundMethod.IS_HOLDER:
    grid = theta_grid or _default_theta_grid(spec, epsilon)
    theta, res = bounds.optimal_theta(spec, epsilon, grid)
    return res, theta
  if theta is None:
    theta = estimators.heuristic_theta(estimators.sampling_spec(spec), epsilon)
  if bound_method is BoundMethod.IS_JS:
    return bounds.is_moment_bound_js(spec, epsilon, theta), theta
  if bound_method is BoundMethod.IS_MAX:
    best = min((bounds.is_moment_bound_max(spec, epsilon, theta, lam)
                for lam in range(1, 17)), key=lambda r: r.log_nu)
    return best, theta
  return bounds.is_moment_bound_holder(spec, epsilon, theta), theta


def build_plan(spec: mechanisms.MechanismSpec, epsilon: float,
               delta_est: float, tau: float, rho: Optional[float] = None,
               bound_method: Optional[BoundMethod] = None,
               estimator_method: Method = Method.IS,
               seed: Optional[int] = None, nu: Optional[float] = None,
               delta_offset: Optional[float] = None,
               theta: Optional[float] = None,
               theta_grid: Optional[Sequence[float]] = None,
               chunk_size: Optional[int] = None,
               threads: Optional[int] = None) -> EvrPlan:
  """Assembles Delta, nu and Bennett's sample size into a plan.

  Args:
    spec: Mechanism specification.
    epsilon: Proposed epsilon.
    delta_est: Proposed delta.
    tau: Underestimation factor in (0, 1].
    rho: Overestimation factor; defaults to (1 + tau) / 2.
    bound_method: Theorem for nu; defaults to ``smc_rdp`` for the simple
      estimator and ``is_holder`` for importance sampling.
    estimator_method: ``Method.SMC`` or ``Method.IS``.
    seed: Verifier seed; None draws a fresh one.
    nu: Override for the second-moment bound. The plan is then marked
      ``nu_source="empirical"``.
    delta_offset: Override for Delta; defaults to the heuristic.
    theta: Tilting parameter for IS; None minimizes the Hoelder bound over
      ``theta_grid`` (or uses the heuristic for the js and max bounds).
    theta_grid: Candidates for the bound-minimizing theta.
    chunk_size: Estimator chunk size.
    threads: Estimator worker threads.

  Returns:
    An ``EvrPlan``; ``feasible`` is False (and m = 0) when Bennett's sample
    size exceeds 2**63 - 1.

  Raises:
    ValueError: On invalid ranges or a non-positive threshold.
  """
  method = Method(estimator_method)
  if bound_method is not None:
    bound_method = BoundMethod(bound_method)
  if rho is None:
    rho = 0.5 * (1.0 + tau)
  if delta_offset is None:
    delta_offset = delta_offset_heuristic(tau, rho, delta_est)
  if method is Method.IS and spec.q == 0.0:
    raise ValueError("importance sampling is undefined when q == 0")
  if delta_est / tau - delta_offset <= 0.0:
    raise ValueError("threshold delta_est/tau - delta_offset must be positive")
  bound = None
  if nu is None:
    bound, theta = _analytic_nu(spec, epsilon, method, bound_method, theta,
                                theta_grid)
    nu_value, source = bound.nu, "analytic"
  else:
    if method is Method.IS and theta is None:
      theta = estimators.heuristic_theta(estimators.sampling_spec(spec),
                                         epsilon)
    nu_value, source = float(nu), "empirical"
  m = plan_sample_size(nu_value, delta_offset, tau, delta_est)
  feasible = m is not Infeasible
  config = EstimatorConfig(
      method=method, m=m if feasible else 1,
      seed=fresh_seed() if seed is None else int(seed),
      theta_override=theta if method is Method.IS else None,
      threads=threads,
      **({} if chunk_size is None else {"chunk_size": chunk_size}))
  return EvrPlan(float(epsilon), float(delta_est), float(tau), float(rho),
                 float(delta_offset), m if feasible else 0, nu_value, config,
                 feasible, source, bound)


def decide(plan: EvrPlan, delta_hat: float,
           estimate: Optional[estimators.DeltaEstimate] = None) -> Verdict:
  """Applies the acceptance rule delta_hat < delta_est / tau - Delta."""
  return Verdict(bool(delta_hat < plan.threshold), float(delta_hat),
                 plan.threshold, plan, plan.fp_bound,
                 plan.nu_source == "empirical", estimate)


def verify(spec: mechanisms.MechanismSpec, plan: EvrPlan) -> Verdict:
  """Runs the planned estimator and applies the acceptance rule.

  Args:
    spec: Mechanism specification.
    plan: A feasible plan.

  Returns:
    The ``Verdict``.

  Raises:
    ValueError: If the plan is infeasible; estimator errors propagate.
  """
  if not plan.feasible:
    raise ValueError("plan is infeasible: Bennett's sample size exceeds "
                     "2**63 - 1")
  config = plan.estimator.replace(m=plan.m)
  est = estimators.estimate(spec, plan.epsilon, config)
  return decide(plan, est.value, est)


def run_evr(spec: mechanisms.MechanismSpec, plan: EvrPlan,
            payload: Callable[[], Any]):
  """Executes ``payload`` only if verification accepts.

  Args:
    spec: Mechanism specification.
    plan: A feasible plan.
    payload: Zero-argument callable, typically the mechanism run.

  Returns:
    The payload's return value, or ``Rejected`` without calling it.
  """
  verdict = verify(spec, plan)
  if not verdict.accepted:
    return Rejected
  return payload()
