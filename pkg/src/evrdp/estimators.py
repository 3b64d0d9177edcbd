"""Simple Monte Carlo and importance-sampling estimators of delta_Y(eps).

For a composed privacy loss Y, delta_Y(eps) = E[(1 - e^{eps - Y})_+]. The
simple estimator averages that contribution over untilted paths. The
importance-sampling estimator tilts one uniformly chosen base draw per path
toward the rare region and multiplies each contribution by its likelihood
ratio.

Sums are taken with ``math.fsum`` over all nonzero contributions, which is
exact before the final rounding, so results are bit-identical under any
chunk size or thread count.
"""

import dataclasses
import enum
import math
from typing import Optional

import numpy as np

from evrdp import mechanisms
from evrdp import sampling
from evrdp.sampling import TiltPlan  # re-exported

__all__ = [
    "Method", "EstimatorConfig", "DeltaEstimate", "TiltPlan",
    "contributions", "summarize", "smc_estimate", "heuristic_theta",
    "resolve_tilt", "is_estimate", "estimate", "estimate_zero_mass",
]

# Contributions below this are counted as exact zeros by the zero-mass probe.
ZERO_GUARD = 1e-300


class Method(str, enum.Enum):
  SMC = "smc"
  IS = "is"


@dataclasses.dataclass(frozen=True)
class EstimatorConfig:
  """Sampling budget and randomness of one estimate.

  Attributes:
    method: ``Method.SMC`` or ``Method.IS``.
    m: Number of sample paths.
    seed: Seed of the counter-based generator.
    chunk_size: Paths per work unit; never changes the result.
    theta_override: Tilting parameter for IS; None selects the heuristic.
    threads: Worker threads; None uses ``EVRDP_THREADS`` or the CPU count.
  """
  method: Method = Method.SMC
  m: int = 10**6
  seed: int = 0
  chunk_size: int = sampling.DEFAULT_CHUNK_SIZE
  theta_override: Optional[float] = None
  threads: Optional[int] = None

  def __post_init__(self):
    object.__setattr__(self, "method", Method(self.method))
    if int(self.m) != self.m or self.m < 1:
      raise ValueError(f"m must be a positive integer, got {self.m}")
    if int(self.chunk_size) != self.chunk_size or self.chunk_size < 1:
      raise ValueError(
          f"chunk_size must be a positive integer, got {self.chunk_size}")
    if self.method is Method.SMC and self.theta_override is not None:
      raise ValueError("theta_override is only meaningful for method 'is'")
    if self.theta_override is not None and not math.isfinite(
        self.theta_override):
      raise ValueError(f"theta_override must be finite, got "
                       f"{self.theta_override}")
    object.__setattr__(self, "m", int(self.m))
    object.__setattr__(self, "chunk_size", int(self.chunk_size))

  def replace(self, **changes) -> "EstimatorConfig":
    return dataclasses.replace(self, **changes)


@dataclasses.dataclass(frozen=True)
class DeltaEstimate:
  """Monte Carlo estimate of delta_Y(eps).

  Attributes:
    value: The estimate.
    second_moment: Mean of squared per-path contributions.
    std_error: sqrt(max(second_moment - value^2, 0) / m).
    m: Number of paths.
    method: Estimator used.
    theta: Tilting parameter (None for SMC).
    epsilon: The queried epsilon.
  """
  value: float
  second_moment: float
  std_error: float
  m: int
  method: Method
  theta: Optional[float]
  epsilon: float


def _check_epsilon(epsilon):
  if not math.isfinite(epsilon):
    raise ValueError(f"epsilon must be finite, got {epsilon}")


def contributions(values: np.ndarray, log_weights: Optional[np.ndarray],
                  epsilon: float) -> np.ndarray:
  """Nonzero per-path contributions w_i (1 - e^{eps - y_i}) for y_i > eps.

  Args:
    values: Privacy-loss samples y_i.
    log_weights: Log importance weights, or None for unit weights.
    epsilon: Query point.

  Returns:
    The positive contributions, in path order.
  """
  hit = values > epsilon
  c = -np.expm1(epsilon - values[hit])
  if log_weights is not None:
    c *= np.exp(log_weights[hit])
  return c


def summarize(parts, m: int, method: Method, theta: Optional[float],
              epsilon: float) -> DeltaEstimate:
  """Reduces nonzero contributions to a ``DeltaEstimate`` with exact sums."""
  c = np.concatenate(parts) if len(parts) else np.zeros(0)
  value = math.fsum(c.tolist()) / m
  second = math.fsum((c * c).tolist()) / m
  se = math.sqrt(max(second - value * value, 0.0) / m)
  return DeltaEstimate(value, second, se, m, method, theta, float(epsilon))


def smc_estimate(spec: mechanisms.MechanismSpec, epsilon: float,
                 config: EstimatorConfig) -> DeltaEstimate:
  """Simple Monte Carlo estimate (1/m) sum_i (1 - e^{eps - y_i})_+.

  Args:
    spec: Mechanism specification.
    epsilon: Query point.
    config: Sampling configuration with ``method == Method.SMC``.

  Returns:
    The estimate with its empirical second moment and standard error.

  Raises:
    ValueError: If epsilon is not finite or the config is not SMC.
  """
  _check_epsilon(epsilon)
  if config.method is not Method.SMC:
    raise ValueError("smc_estimate needs a config with method 'smc'")
  # A Gaussian composition is sampled as its single equivalent mechanism.
  parts = sampling.iter_chunk_samples(
      sampling_spec(spec), config.m, config.seed, None, config.chunk_size,
      lambda v, w, s: contributions(v, None, epsilon), config.threads)
  return summarize(parts, config.m, Method.SMC, None, epsilon)


def heuristic_theta(spec: mechanisms.MechanismSpec, epsilon: float) -> float:
  """Tilting parameter that moves a single base draw's loss to about eps.

  theta* = 1 / (2 sigma^2) + ln((e^eps - (1 - q)) / q).

  Args:
    spec: Mechanism specification with q > 0.
    epsilon: Target epsilon; e^eps must exceed 1 - q.

  Returns:
    theta*, finite and possibly negative.

  Raises:
    ValueError: If q == 0, epsilon is not finite or e^eps <= 1 - q.
  """
  _check_epsilon(epsilon)
  q = spec.q
  if q == 0.0:
    raise ValueError("heuristic_theta is undefined when q == 0")
  if epsilon > 30.0:
    log_num = epsilon + math.log1p(-(1.0 - q) * math.exp(-epsilon))
  else:
    gap = math.expm1(epsilon) + q
    if not gap > 0.0:
      raise ValueError(
          f"e^eps must exceed 1 - q; got eps={epsilon}, q={q}")
    log_num = math.log(gap)
  return 0.5 / (spec.sigma * spec.sigma) + log_num - math.log(q)


def sampling_spec(spec: mechanisms.MechanismSpec) -> mechanisms.MechanismSpec:
  """Spec actually simulated by the estimators.

  A k-fold Gaussian composition is sampled as one Gaussian with noise
  sigma / sqrt(k): same PRV, and tilting one of k coordinates of a Gaussian
  composition would leave the other k - 1 untouched.
  """
  return mechanisms.single_equivalent(spec)


def resolve_tilt(spec: mechanisms.MechanismSpec, epsilon: float,
                 config: EstimatorConfig) -> TiltPlan:
  """Tilt used by ``is_estimate`` for this spec, epsilon and config."""
  eff = sampling_spec(spec)
  theta = (config.theta_override if config.theta_override is not None
           else heuristic_theta(eff, epsilon))
  return TiltPlan.for_spec(eff, theta)


def _check_is(spec, config):
  if config.method is not Method.IS:
    raise ValueError("is_estimate needs a config with method 'is'")
  if spec.q == 0.0:
    raise ValueError("importance sampling is undefined when q == 0")
  if spec.k < 1:
    raise ValueError("importance sampling needs k >= 1")


def is_estimate(spec: mechanisms.MechanismSpec, epsilon: float,
                config: EstimatorConfig) -> DeltaEstimate:
  """Importance-sampling estimate with one exponentially tilted coordinate.

  Each path draws a coordinate i uniformly, draws t_i from the tilt
  e^{theta t} P(t) / M_P(theta) and the rest from P, and weighs the
  contribution by k M_P(theta) / sum_j e^{theta t_j}.

  Args:
    spec: Mechanism specification with q > 0 and k >= 1.
    epsilon: Query point.
    config: Sampling configuration with ``method == Method.IS``.

  Returns:
    The estimate. With theta == 0 the proposal equals P, so the estimate
    coincides with ``smc_estimate`` on the same seed.

  Raises:
    ValueError: On q == 0, k == 0, non-finite epsilon, or invalid theta.
  """
  _check_epsilon(epsilon)
  _check_is(spec, config)
  tilt = resolve_tilt(spec, epsilon, config)
  if tilt.theta == 0.0:
    est = smc_estimate(spec, epsilon, config.replace(
        method=Method.SMC, theta_override=None))
    return dataclasses.replace(est, method=Method.IS, theta=0.0)
  parts = sampling.iter_chunk_samples(
      sampling_spec(spec), config.m, config.seed, tilt, config.chunk_size,
      lambda v, w, s: contributions(v, w, epsilon), config.threads)
  return summarize(parts, config.m, Method.IS, tilt.theta, epsilon)


def estimate(spec: mechanisms.MechanismSpec, epsilon: float,
             config: EstimatorConfig) -> DeltaEstimate:
  """Dispatches to ``smc_estimate`` or ``is_estimate`` by config method."""
  if config.method is Method.IS:
    return is_estimate(spec, epsilon, config)
  return smc_estimate(spec, epsilon, config)


def estimate_zero_mass(spec: mechanisms.MechanismSpec, epsilon: float,
                       config: EstimatorConfig) -> float:
  """Fraction of paths whose contribution is zero.

  Args:
    spec: Mechanism specification.
    epsilon: Query point.
    config: Estimator configuration; IS configs probe the tilted paths.

  Returns:
    Empirical Pr[contribution <= 1e-300], in [0, 1].

  Raises:
    ValueError: As the underlying estimator.
  """
  _check_epsilon(epsilon)
  tilt = None
  if config.method is Method.IS:
    _check_is(spec, config)
    tilt = resolve_tilt(spec, epsilon, config)
    if tilt.theta == 0.0:
      tilt = None

  def count(v, w, s):
    c = np.zeros(v.size)
    hit = v > epsilon
    c[hit] = -np.expm1(epsilon - v[hit])
    if w is not None and tilt is not None:
      c[hit] *= np.exp(w[hit])
    return int(np.count_nonzero(c <= ZERO_GUARD))

  counts = sampling.iter_chunk_samples(
      sampling_spec(spec), config.m, config.seed, tilt, config.chunk_size, count,
      config.threads)
  return sum(counts) / config.m
