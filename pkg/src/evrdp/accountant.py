"""Monte Carlo privacy accountant: delta(eps), eps(delta) and online updates.

``eps_of_delta`` draws one batch and bisects on it: on a fixed batch the map
eps -> delta_hat(eps) is continuous, convex and nonincreasing, so no new
samples are needed per query. The online accountant keeps one running sum
per path and adds one fresh privacy-loss draw per composition step, reusing
the earlier draws; after i steps it holds exactly the values an offline run
with k = i and the same seed would draw.
"""

import dataclasses
import enum
import math
from typing import Optional, Sequence

import numpy as np

from evrdp import _rng
from evrdp import estimators
from evrdp import mechanisms
from evrdp import sampling
from evrdp.estimators import DeltaEstimate, EstimatorConfig, Method

# Queries supported by fewer contributing paths are refused.
MIN_CONTRIBUTORS = 10
_REL_TOL = 1e-6
_EPS_TOL = 1e-12
_PILOT_PATHS = 1 << 16
_PILOT_ROUNDS = 3


class TargetBelowResolution(ValueError):
  """The batch cannot resolve the requested delta.

  Attributes:
    floor: Smallest delta the batch resolves with at least
      ``MIN_CONTRIBUTORS`` contributing paths (0 if none).
  """

  def __init__(self, message: str, floor: float):
    super().__init__(message)
    self.floor = floor


class Direction(str, enum.Enum):
  DELTA_OF_EPS = "delta_of_eps"
  EPS_OF_DELTA = "eps_of_delta"


@dataclasses.dataclass(frozen=True)
class AccountantQuery:
  """One accounting question.

  Attributes:
    direction: ``delta_of_eps`` (target is eps) or ``eps_of_delta`` (target
      is delta in (0, 1)).
    target: The fixed eps or delta.
    spec: Mechanism specification.
    estimator: Sampling configuration.
  """
  direction: Direction
  target: float
  spec: mechanisms.MechanismSpec
  estimator: EstimatorConfig

  def __post_init__(self):
    object.__setattr__(self, "direction", Direction(self.direction))
    if not math.isfinite(self.target):
      raise ValueError(f"target must be finite, got {self.target}")
    if self.direction is Direction.EPS_OF_DELTA and not 0.0 < self.target < 1.0:
      raise ValueError(f"delta target must lie in (0, 1), got {self.target}")


@dataclasses.dataclass(frozen=True)
class EpsilonEstimate:
  """Result of inverting delta_hat on a batch.

  Attributes:
    epsilon: eps with delta_hat(eps) within 1e-6 relative of the target.
    achieved_delta: delta_hat(epsilon) on the batch.
    target_delta: The requested delta.
    contributors: Paths with y_i > epsilon.
    m: Batch size.
    method: Estimator used.
    theta: Tilting parameter (None for SMC).
  """
  epsilon: float
  achieved_delta: float
  target_delta: float
  contributors: int
  m: int
  method: Method
  theta: Optional[float] = None

  def __iter__(self):
    return iter((self.epsilon, self.achieved_delta))


class SampleBatch:
  """Privacy-loss samples sorted once for repeated delta/eps queries.

  Args:
    values: Privacy-loss samples.
    log_weights: Log importance weights, or None for unit weights.
    method: Estimator that produced the samples.
    theta: Tilting parameter, if any.
  """

  def __init__(self, values: np.ndarray,
               log_weights: Optional[np.ndarray] = None,
               method: Method = Method.SMC, theta: Optional[float] = None):
    self.values = np.asarray(values, dtype=float)
    self.log_weights = None if log_weights is None else np.asarray(
        log_weights, dtype=float)
    self.m = self.values.size
    self.method = Method(method)
    self.theta = theta
    self._order = None

  def _sorted(self):
    if self._order is None:
      order = np.argsort(-self.values, kind="stable")
      self._order = order
      self._desc = self.values[order]
      self._w = (None if self.log_weights is None
                 else np.exp(self.log_weights[order]))
    return self._desc, self._w

  def contributors(self, epsilon: float) -> int:
    """Number of paths with y_i > epsilon."""
    desc, _ = self._sorted()
    return int(np.searchsorted(-desc, -epsilon, side="left"))

  def _fast_delta(self, epsilon):
    desc, w = self._sorted()
    n = self.contributors(epsilon)
    c = -np.expm1(epsilon - desc[:n])
    if w is not None:
      c *= w[:n]
    return float(np.sum(c)) / self.m

  def estimate(self, epsilon: float) -> DeltaEstimate:
    """Exact-sum estimate at epsilon, identical to the streaming estimators."""
    c = estimators.contributions(self.values, self.log_weights, epsilon)
    return estimators.summarize([c], self.m, self.method, self.theta, epsilon)

  def delta(self, epsilon: float) -> float:
    return self.estimate(epsilon).value

  def resolution_floor(self) -> float:
    """delta_hat at the eps where exactly MIN_CONTRIBUTORS paths contribute."""
    desc, _ = self._sorted()
    if desc.size <= MIN_CONTRIBUTORS:
      return 0.0
    return self._fast_delta(float(desc[MIN_CONTRIBUTORS]))

  def solve(self, delta: float,
            allow_negative_epsilon: bool = False) -> EpsilonEstimate:
    """Bisects for eps with delta_hat(eps) = delta on this batch.

    Args:
      delta: Target in (0, 1).
      allow_negative_epsilon: Search eps < 0 when delta_hat(0) < delta.

    Returns:
      An ``EpsilonEstimate``.

    Raises:
      ValueError: If delta is outside (0, 1).
      TargetBelowResolution: If fewer than ``MIN_CONTRIBUTORS`` paths would
        contribute at the solution, or no eps >= 0 reaches delta and
        negative eps is not allowed.
    """
    if not 0.0 < delta < 1.0:
      raise ValueError(f"delta must lie in (0, 1), got {delta}")
    desc, _ = self._sorted()
    floor = self.resolution_floor()
    lo = 0.0
    if self._fast_delta(lo) < delta:
      if not allow_negative_epsilon:
        raise TargetBelowResolution(
            f"delta_hat(0) = {self._fast_delta(0.0):.6g} < target {delta:.6g}: "
            "no eps >= 0 reaches the target on this batch", floor)
      step = 1.0
      while self._fast_delta(-step) < delta:
        step *= 2.0
      lo = -step
    hi = max(float(desc[0]) if desc.size else 0.0, lo)
    if delta < floor or self._fast_delta(lo) <= 0.0:
      raise TargetBelowResolution(
          f"target {delta:.6g} is below the batch resolution {floor:.6g} "
          f"(fewer than {MIN_CONTRIBUTORS} contributing paths)", floor)
    # delta_hat(lo) >= delta > delta_hat(hi) = 0.
    eps = lo
    for _ in range(200):
      eps = 0.5 * (lo + hi)
      d = self._fast_delta(eps)
      if abs(d - delta) <= 0.1 * _REL_TOL * delta or hi - lo <= _EPS_TOL:
        break
      if d > delta:
        lo = eps
      else:
        hi = eps
    achieved = self.delta(eps)
    # Polish with exact sums in case the fast sum and fsum disagree.
    for _ in range(200):
      if abs(achieved - delta) <= _REL_TOL * delta or hi - lo <= _EPS_TOL:
        break
      if achieved > delta:
        lo = eps
      else:
        hi = eps
      eps = 0.5 * (lo + hi)
      achieved = self.delta(eps)
    n = self.contributors(eps)
    if n < MIN_CONTRIBUTORS:
      raise TargetBelowResolution(
          f"only {n} paths contribute at the solution", floor)
    return EpsilonEstimate(float(eps), achieved, float(delta), n, self.m,
                           self.method, self.theta)


def draw_batch(spec: mechanisms.MechanismSpec, config: EstimatorConfig,
               theta: Optional[float] = None) -> SampleBatch:
  """Draws one batch for repeated queries; IS batches need a theta."""
  eff = estimators.sampling_spec(spec)
  if config.method is Method.SMC:
    b = sampling.sample_prv(eff, config.m, config.seed, None,
                            config.chunk_size, config.threads)
    return SampleBatch(b.values, None, Method.SMC)
  if theta is None:
    raise ValueError("an importance-sampled batch needs theta")
  if theta == 0.0:
    b = sampling.sample_prv(eff, config.m, config.seed, None,
                            config.chunk_size, config.threads)
    return SampleBatch(b.values, None, Method.IS, 0.0)
  tilt = sampling.TiltPlan.for_spec(eff, theta)
  b = sampling.sample_prv(eff, config.m, config.seed, tilt, config.chunk_size,
                          config.threads)
  return SampleBatch(b.values, b.log_weights, Method.IS, theta)


def delta_of_eps(query: AccountantQuery) -> DeltaEstimate:
  """delta_Y(eps) for ``query.target`` with the configured estimator.

  Raises:
    ValueError: If the query direction is not ``delta_of_eps``.
  """
  if query.direction is not Direction.DELTA_OF_EPS:
    raise ValueError("query direction must be delta_of_eps")
  return estimators.estimate(query.spec, query.target, query.estimator)


def _pilot_theta(spec, delta, config):
  """Tilt for eps(delta) chosen on small pilot batches with separate seeds.

  Candidates start at theta = 0 and follow theta <- heuristic(eps_hat) for a
  few rounds. Each candidate is scored by the relative standard error of
  its own pilot at its own solution; the lowest score wins. When no pilot
  resolves the target (a rare-event query), the last fixed-point tilt is used.
  """
  eff = estimators.sampling_spec(spec)
  theta, eps = 0.0, 0.0
  best, best_score = None, math.inf
  for r in range(_PILOT_ROUNDS + 1):
    pilot = config.replace(m=min(config.m, _PILOT_PATHS),
                           seed=(config.seed + 0x9E3779B97F4A7C15 * (r + 1))
                           % 2**64)
    batch = draw_batch(spec, pilot, theta)
    try:
      sol = batch.solve(delta)
    except TargetBelowResolution:
      desc, _ = batch._sorted()
      eps = max(float(desc[min(MIN_CONTRIBUTORS, desc.size - 1)]), eps + 1.0)
    else:
      est = batch.estimate(sol.epsilon)
      score = est.std_error / est.value
      if score < best_score:
        best, best_score = theta, score
      eps = max(sol.epsilon, 0.0)
    theta = estimators.heuristic_theta(eff, eps)
  return theta if best is None else best


def eps_of_delta(query: AccountantQuery,
                 allow_negative_epsilon: bool = False) -> EpsilonEstimate:
  """Smallest eps with delta_hat(eps) <= delta, on a single shared batch.

  For importance sampling without ``theta_override`` the tilt is chosen by a
  few small pilot batches (separate seeds), then one main batch is drawn.

  Args:
    query: Query with direction ``eps_of_delta``.
    allow_negative_epsilon: Permit eps < 0 when delta_hat(0) < delta.

  Returns:
    An ``EpsilonEstimate`` (unpacks as ``(epsilon, achieved_delta)``).

  Raises:
    ValueError: If the query direction is wrong.
    TargetBelowResolution: If the batch cannot resolve the target.
  """
  if query.direction is not Direction.EPS_OF_DELTA:
    raise ValueError("query direction must be eps_of_delta")
  config = query.estimator
  theta = None
  if config.method is Method.IS:
    if query.spec.q == 0.0:
      raise ValueError("importance sampling is undefined when q == 0")
    theta = (config.theta_override if config.theta_override is not None
             else _pilot_theta(query.spec, query.target, config))
  batch = draw_batch(query.spec, config, theta)
  return batch.solve(query.target, allow_negative_epsilon)


def relative_error(estimate: float, truth: float) -> float:
  """|estimate - truth| / truth.

  Raises:
    ValueError: If truth <= 0.
  """
  if not truth > 0.0:
    raise ValueError(f"truth must be positive, got {truth}")
  return abs(estimate - truth) / truth


@dataclasses.dataclass(frozen=True)
class OnlineState:
  """Running privacy-loss sums of m paths after ``step`` compositions.

  Attributes:
    sums: Per-path sum of the privacy losses drawn so far.
    step: Number of composed mechanisms.
    seed: Seed of the path draws; step i reads substream (seed, i).
    kind: Mechanism family of every step.
    history: (sigma, q) of each step, in order.
    chunk_size: Paths per sampling work unit.
    threads: Worker threads for sampling.
  """
  sums: np.ndarray
  step: int
  seed: int
  kind: mechanisms.MechanismKind
  history: tuple = ()
  chunk_size: int = sampling.DEFAULT_CHUNK_SIZE
  threads: Optional[int] = None

  @property
  def m(self) -> int:
    return self.sums.size

  def spec(self) -> mechanisms.MechanismSpec:
    """Spec of the composition so far (homogeneous histories only)."""
    if len(set(self.history)) > 1:
      raise ValueError("history mixes mechanisms; no single spec describes it")
    sigma, q = self.history[0] if self.history else (1.0, 1.0)
    return mechanisms.MechanismSpec(self.kind, sigma, q, self.step)


def online_init(prototype: mechanisms.MechanismSpec, m: int, seed: int,
                method: Method = Method.SMC,
                chunk_size: int = sampling.DEFAULT_CHUNK_SIZE,
                threads: Optional[int] = None) -> OnlineState:
  """Starts an online accountant with m paths and no composed mechanism.

  Args:
    prototype: Mechanism family; its k is ignored.
    m: Number of paths, fixed for the accountant's lifetime.
    seed: Seed of all future draws.
    method: Must be ``Method.SMC``; tilted paths cannot be reused across k.
    chunk_size: Paths per sampling work unit.
    threads: Worker threads.

  Returns:
    An ``OnlineState`` at step 0.

  Offline estimates sample a Gaussian composition as one equivalent
  mechanism, so for the Gaussian family online reads match ``offline_values``
  bit for bit but offline estimates only in distribution.

  Raises:
    ValueError: If m < 1 or method is IS.
  """
  if Method(method) is not Method.SMC:
    raise ValueError("online accounting supports the simple estimator only: "
                     "a tilt chosen for one k would bias reuse at other k")
  if int(m) != m or m < 1:
    raise ValueError(f"m must be a positive integer, got {m}")
  return OnlineState(np.zeros(int(m)), 0, int(seed), prototype.kind, (),
                     chunk_size, threads)


def online_step(state: OnlineState, sigma: Optional[float] = None,
                q: Optional[float] = None) -> OnlineState:
  """Composes one more mechanism, drawing one privacy loss per path.

  Args:
    state: Current state.
    sigma: Noise multiplier of the new step; defaults to the previous one.
    q: Subsampling rate of the new step; defaults to the previous one (1
      for the Gaussian family).

  Returns:
    The new state; ``state`` itself is not modified.

  Raises:
    ValueError: If parameters are missing on the first step or do not fit
      the family.
  """
  prev = state.history[-1] if state.history else (None, None)
  sigma = prev[0] if sigma is None else float(sigma)
  if q is None:
    q = 1.0 if state.kind is mechanisms.MechanismKind.GAUSSIAN else prev[1]
  if sigma is None or q is None:
    raise ValueError("the first online step needs sigma (and q)")
  mechanisms.MechanismSpec(state.kind, sigma, q, 1)  # validates the pair
  step = state.step + 1
  key = _rng.derive_key(state.seed)
  y = sampling.step_log_ratios(key, step, state.m, sigma, float(q),
                               state.chunk_size, state.threads)
  return dataclasses.replace(state, sums=state.sums + y, step=step,
                             history=state.history + ((sigma, float(q)),))


def online_batch(state: OnlineState) -> SampleBatch:
  return SampleBatch(state.sums, None, Method.SMC)


def online_read(state: OnlineState, epsilon: Optional[float] = None,
                delta: Optional[float] = None,
                allow_negative_epsilon: bool = False):
  """Reads delta_hat(eps) or eps(delta) from the current sums.

  Exactly one of ``epsilon`` and ``delta`` must be given.

  Returns:
    A ``DeltaEstimate`` for an eps query or an ``EpsilonEstimate`` for a
    delta query.

  Raises:
    ValueError: If both or neither targets are given.
    TargetBelowResolution: As ``SampleBatch.solve``.
  """
  if (epsilon is None) == (delta is None):
    raise ValueError("give exactly one of epsilon and delta")
  batch = online_batch(state)
  if epsilon is not None:
    if not math.isfinite(epsilon):
      raise ValueError(f"epsilon must be finite, got {epsilon}")
    return batch.estimate(epsilon)
  return batch.solve(delta, allow_negative_epsilon)


def offline_values(history: Sequence, m: int, seed: int,
                   chunk_size: int = sampling.DEFAULT_CHUNK_SIZE,
                   threads: Optional[int] = None) -> np.ndarray:
  """From-scratch path sums for a (possibly heterogeneous) step history."""
  if not history:
    return np.zeros(m)
  steps = sampling._Steps(tuple(float(s) for s, _ in history),
                          tuple(float(q) for _, q in history))
  spec = mechanisms.MechanismSpec.subsampled_gaussian(
      history[0][0], history[0][1], len(history))
  parts = sampling.iter_chunk_samples(spec, m, seed, None, chunk_size,
                                      lambda v, w, s: v, threads, steps)
  return np.concatenate(parts)
