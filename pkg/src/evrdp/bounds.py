"""Analytic upper bounds on the second moment of the delta estimators.

The verifier needs a bound nu >= E[delta_hat^2] to size its sample. For the
simple estimator, a Chernoff-type argument gives

  E[(1 - e^{eps - Y})_+^u] <= min_lam M_Y(lam) e^{-eps lam}
                                    u^u lam^lam / (u + lam)^(u + lam).

For the importance-sampling estimator the second moment equals
k M_P(theta) E_P[delta^2 / sum_i e^{theta t_i}], which is bounded either
through a lower bound on sum_i e^{theta t_i} on the event Y >= eps
(``is_moment_bound_js``), through the law of max_i t_i (``is_moment_bound_max``),
or through a Hoelder split between the two (``is_moment_bound_holder``).

All candidate bounds are evaluated in log space and exponentiated last.
"""

import dataclasses
import enum
import functools
import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from evrdp import _quadrature
from evrdp import mechanisms
from evrdp._quadrature import QuadratureSpec

DEFAULT_LAMBDA_GRID = tuple(range(1, 65)) + (128, 256)
DEFAULT_A_GRID = (1.0, 1.25, 1.5, 2.0, 3.0, 4.0, 8.0, math.inf)

# Right truncation: Phi(-_Z_HI) < 1e-12, so r(lam, x_hi) >= (1 - 1e-12) r(lam, inf).
_Z_HI = 7.1
# Left truncation: the integrand at x_lo is this many nats below its peak.
_LEFT_DROP = 60.0


class BoundMethod(str, enum.Enum):
  SMC_RDP = "smc_rdp"
  IS_JS = "is_js"
  IS_MAX = "is_max"
  IS_HOLDER = "is_holder"


@dataclasses.dataclass(frozen=True)
class RdpCurve:
  """Renyi DP guarantee alpha -> eps_R(alpha) of a (composed) mechanism.

  Attributes:
    evaluator: Maps an order alpha > 1 to eps_R(alpha) >= 0 in nats. May
      raise ``ValueError`` for orders it does not cover.
    name: Label used in reports.
  """
  evaluator: Callable[[float], float]
  name: str = "custom"

  def __call__(self, alpha: float) -> float:
    if not alpha > 1.0:
      raise ValueError(f"Renyi order must exceed 1, got {alpha}")
    value = float(self.evaluator(alpha))
    if math.isnan(value) or value < 0.0:
      raise ValueError(f"curve undefined at order {alpha}")
    return value

  @classmethod
  def gaussian(cls, sigma: float, k: int = 1) -> "RdpCurve":
    """eps_R(alpha) = k alpha / (2 sigma^2)."""
    if not sigma > 0:
      raise ValueError(f"sigma must be positive, got {sigma}")
    return cls(lambda alpha: k * alpha / (2.0 * sigma * sigma),
               f"gaussian(sigma={sigma}, k={k})")

  @classmethod
  def zero(cls) -> "RdpCurve":
    return cls(lambda alpha: 0.0, "zero")

  @classmethod
  def from_mechanism(cls, spec: mechanisms.MechanismSpec) -> "RdpCurve":
    """Exact curve at integer orders, eps_R(alpha) = log M_Y(alpha-1)/(alpha-1)."""
    def evaluate(alpha):
      if alpha != int(alpha) or alpha < 2:
        raise ValueError(f"exact curve is defined at integer orders >= 2, "
                         f"got {alpha}")
      lam = int(alpha) - 1
      return spec.k * _log_mgf(spec.sigma, spec.q, lam) / lam
    return cls(evaluate, f"exact({spec.kind.value}, sigma={spec.sigma}, "
                         f"q={spec.q}, k={spec.k})")


@dataclasses.dataclass(frozen=True)
class MomentBoundResult:
  """Upper bound nu on a second moment and the optimizer state behind it.

  Attributes:
    nu: The bound. SMC bounds are capped at the trivial value 1.
    method: Which theorem produced it.
    log_nu: Uncapped log bound.
    lambda_star: Chernoff order of the winning candidate.
    theta: Tilting parameter (IS methods).
    a: Hoelder exponent on the simple-estimator factor.
    b: Conjugate exponent, 1/a + 1/b = 1.
    lambda_star_mc: Order used for the simple-estimator moment factor.
    saturated: True if no candidate beat the trivial value (SMC) or no
      finite candidate existed (IS).
  """
  nu: float
  method: BoundMethod
  log_nu: float
  lambda_star: Optional[int] = None
  theta: Optional[float] = None
  a: Optional[float] = None
  b: Optional[float] = None
  lambda_star_mc: Optional[int] = None
  saturated: bool = False


@functools.lru_cache(maxsize=4096)
def _log_mgf(sigma: float, q: float, lam: int) -> float:
  spec = mechanisms.MechanismSpec.subsampled_gaussian(sigma, q)
  return mechanisms.log_mgf_single(spec, lam)


def _exp_or_inf(v: float) -> float:
  return math.exp(v) if v < 709.0 else math.inf


def log_mgf_bound_from_rdp(curve: RdpCurve, lam: float) -> float:
  """log M_Y(lam) <= lam * eps_R(lam + 1)."""
  if not lam > 0:
    raise ValueError(f"lam must be positive, got {lam}")
  return lam * curve(lam + 1.0)


def mgf_bound_from_rdp(curve: RdpCurve, lam: float) -> float:
  """Upper bound exp(lam * eps_R(lam + 1)) on the PRV's MGF at lam.

  Args:
    curve: RDP guarantee of the mechanism.
    lam: Positive order.

  Returns:
    The bound, or ``math.inf`` when it exceeds the float range.

  Raises:
    ValueError: If lam <= 0 or the curve is undefined at lam + 1.
  """
  return _exp_or_inf(log_mgf_bound_from_rdp(curve, lam))


def _check_grid(grid, name):
  grid = tuple(grid)
  if not grid:
    raise ValueError(f"{name} must be nonempty")
  return grid


def _log_smc_candidates(spec, epsilon, u, lambdas, curve):
  lam = np.asarray(lambdas, dtype=float)
  if curve is None:
    log_m = np.array([spec.k * _log_mgf(spec.sigma, spec.q, int(l))
                      for l in lambdas])
  else:
    log_m = np.array([log_mgf_bound_from_rdp(curve, l) for l in lambdas])
  return (log_m - epsilon * lam + u * math.log(u) + special.xlogy(lam, lam)
          - (u + lam) * np.log(u + lam))


def _smc_log_min(spec, epsilon, u, lambdas, curve=None):
  cand = _log_smc_candidates(spec, epsilon, u, lambdas, curve)
  i = int(np.argmin(cand))
  return float(cand[i]), lambdas[i]


def smc_moment_bound(spec: mechanisms.MechanismSpec, epsilon: float,
                     u: float = 2.0,
                     lambda_grid: Optional[Sequence[int]] = None,
                     curve: Optional[RdpCurve] = None) -> MomentBoundResult:
  """Bound on E[(1 - e^{eps - Y})_+^u] from the PRV's moment generating function.

  Args:
    spec: Mechanism specification.
    epsilon: Query point.
    u: Moment order, >= 1. ``u = 1`` bounds delta_Y(eps) itself and
      ``u = 2`` the simple estimator's second moment.
    lambda_grid: Positive integer Chernoff orders to minimize over.
    curve: If given, use the RDP-implied bound on M_Y instead of the exact
      binomial expansion.

  Returns:
    A ``MomentBoundResult`` with method ``smc_rdp``, capped at 1.

  Raises:
    ValueError: If u < 1, epsilon is not finite, or the grid is empty or
      contains non-positive or non-integer orders.
  """
  if not u >= 1.0:
    raise ValueError(f"u must be >= 1, got {u}")
  if not math.isfinite(epsilon):
    raise ValueError(f"epsilon must be finite, got {epsilon}")
  grid = _check_grid(DEFAULT_LAMBDA_GRID if lambda_grid is None
                     else lambda_grid, "lambda_grid")
  if any(int(l) != l or l < 1 for l in grid):
    raise ValueError("lambda_grid entries must be positive integers")
  grid = tuple(int(l) for l in grid)
  log_nu, lam = _smc_log_min(spec, epsilon, u, grid, curve)
  if not log_nu < 0.0:
    return MomentBoundResult(1.0, BoundMethod.SMC_RDP, log_nu, saturated=True)
  return MomentBoundResult(math.exp(log_nu), BoundMethod.SMC_RDP, log_nu,
                           lambda_star=lam)


def log_r_lambda_x(spec: mechanisms.MechanismSpec, lam: int, x):
  """log r(lam, x); see ``r_lambda_x``."""
  return mechanisms.log_truncated_mgf(spec, lam, x)


def r_lambda_x(spec: mechanisms.MechanismSpec, lam: int, x):
  """Truncated moment r(lam, x) = E_{t~P}[e^{lam y(t)} 1{t <= x}].

  Args:
    spec: Mechanism specification.
    lam: Non-negative integer; ``lam = 0`` gives the mixture CDF.
    x: Scalar or array truncation point.

  Returns:
    r(lam, x), nondecreasing in x, with r(lam, inf) equal to the full moment.
    Values beyond the float range saturate to ``inf``.

  Raises:
    ValueError: If lam is not a non-negative integer.
  """
  lv = np.asarray(log_r_lambda_x(spec, lam, x))
  with np.errstate(over="ignore"):
    out = np.exp(lv)
  return float(out) if out.ndim == 0 else out


def _is_spec(spec: mechanisms.MechanismSpec) -> mechanisms.MechanismSpec:
  if spec.q == 0.0:
    raise ValueError("importance sampling bounds are undefined when q == 0")
  if spec.k < 1:
    raise ValueError("importance sampling bounds need k >= 1")
  # The IS estimator samples a Gaussian composition as one mechanism.
  return mechanisms.single_equivalent(spec)


def _x_lo(spec, lam, cs, x_hi):
  """Left end where every integrand is _LEFT_DROP nats below its peak."""
  sigma = spec.sigma
  lo = -12.0 * sigma - 1.0
  c_max = float(np.max(cs))
  # Peak of k log Phi(x / sigma) - c x lies near -c sigma^2 / k.
  lo = min(lo, -2.0 * c_max * sigma * sigma / spec.k - 12.0 * sigma)
  while True:
    xs = np.linspace(lo, x_hi, 513)
    g = spec.k * log_r_lambda_x(spec, lam, xs)[None, :] - cs[:, None] * xs
    if np.all(g[:, 0] < g.max(axis=1) - _LEFT_DROP):
      return lo
    lo = 2.0 * lo


@dataclasses.dataclass(frozen=True)
class _TailIntegrals:
  log_value: np.ndarray
  rel_error: float
  converged: bool


def _log_integrals(spec, lam, cs, quad):
  """log int r(lam, x)^k e^{-c x} dx for each c > 0 in ``cs``.

  The integral runs over [x_lo, x_hi] numerically. Beyond x_hi the exact
  tail is replaced by its upper bound r(lam, inf)^k e^{-c x_hi} / c.
  """
  cs = np.asarray(cs, dtype=float)
  x_hi = lam + 1.0 + _Z_HI * spec.sigma
  x_lo = _x_lo(spec, lam, cs, x_hi)

  def log_f(x):
    return spec.k * log_r_lambda_x(spec, lam, x)[None, :] - cs[:, None] * x

  res = _quadrature.integrate_log(log_f, x_lo, x_hi, quad)
  log_tail = (spec.k * _log_mgf(spec.sigma, spec.q, lam) - cs * x_hi
              - np.log(cs))
  return _TailIntegrals(np.logaddexp(res.log_value, log_tail),
                        float(res.rel_error.max()), res.converged)


class QuadratureError(ArithmeticError):
  """Raised when a bound's integral misses its tolerance."""

  def __init__(self, achieved: float, target: float):
    super().__init__(f"quadrature did not converge: relative error "
                     f"{achieved:.3g} > target {target:.3g}")
    self.achieved = achieved
    self.target = target


def _check_theta_eps(theta, epsilon):
  if not math.isfinite(epsilon):
    raise ValueError(f"epsilon must be finite, got {epsilon}")
  if not (math.isfinite(theta) and theta > 0.0):
    raise ValueError(f"theta must be positive and finite, got {theta}")


def _log_js_factor(spec, epsilon, theta):
  """log of M_P(theta) [(eps/q + k) / k]^{-theta sigma^2} e^{-theta/2}."""
  s2 = spec.sigma * spec.sigma
  if theta < (1.0 - 1e-12) / s2:
    raise ValueError(f"the js bound needs theta >= 1/sigma^2 = {1.0 / s2}, "
                     f"got {theta}")
  ratio = (epsilon / spec.q + spec.k) / spec.k
  if not ratio > 0.0:
    raise ValueError("the js bound needs eps/q + k > 0")
  return (mechanisms.log_mp_theta(spec, theta) - theta * s2 * math.log(ratio)
          - 0.5 * theta)


def is_moment_bound_js(spec: mechanisms.MechanismSpec, epsilon: float,
                       theta: float, nu_mc: Optional[float] = None,
                       lambda_grid: Optional[Sequence[int]] = None
                       ) -> MomentBoundResult:
  """IS second-moment bound from a lower bound on sum_i e^{theta t_i}.

  nu = M_P(theta) [(eps/q + k) / k]^{-theta sigma^2} e^{-theta/2} nu_mc.

  Args:
    spec: Mechanism specification with q > 0 and k >= 1.
    epsilon: Query point; eps/q + k must be positive.
    theta: Tilting parameter, at least 1/sigma^2.
    nu_mc: Bound on the simple estimator's second moment; defaults to
      ``smc_moment_bound(spec, epsilon, 2, lambda_grid).nu``.
    lambda_grid: Orders for the default ``nu_mc``.

  Returns:
    A ``MomentBoundResult`` with method ``is_js`` and a = 1.

  Raises:
    ValueError: If theta < 1/sigma^2 or other inputs are invalid.
  """
  _check_theta_eps(theta, epsilon)
  eff = _is_spec(spec)
  log_factor = _log_js_factor(eff, epsilon, theta)
  lam_mc = None
  if nu_mc is None:
    smc = smc_moment_bound(spec, epsilon, 2.0, lambda_grid)
    log_mc, lam_mc = min(smc.log_nu, 0.0), smc.lambda_star
  else:
    if not nu_mc > 0:
      raise ValueError(f"nu_mc must be positive, got {nu_mc}")
    log_mc = math.log(nu_mc)
  log_nu = log_factor + log_mc
  return MomentBoundResult(_exp_or_inf(log_nu), BoundMethod.IS_JS, log_nu,
                           theta=float(theta), a=1.0, b=math.inf,
                           lambda_star_mc=lam_mc,
                           saturated=not math.isfinite(log_nu))


def _holder_table(spec, epsilon, thetas, a_grid, lambda_grid, quad,
                  strict=True):
  """Best Hoelder candidate for every theta.

  Returns a list (one entry per theta) of ``MomentBoundResult``.
  """
  eff = _is_spec(spec)
  thetas = np.asarray(thetas, dtype=float)
  for t in thetas:
    _check_theta_eps(float(t), epsilon)
  a_grid = _check_grid(a_grid, "a_grid")
  if any(not a >= 1.0 for a in a_grid):
    raise ValueError("every a must be >= 1")
  lams = _check_grid(lambda_grid, "lambda_grid")
  if any(int(l) != l or l < 1 for l in lams):
    raise ValueError("lambda_grid entries must be positive integers")
  lams = tuple(int(l) for l in lams)

  finite_b = sorted({a / (a - 1.0) if math.isfinite(a) else 1.0
                     for a in a_grid if a > 1.0})
  # F2[b][theta] = min_lam log(b theta) - lam eps + log int r^k e^{-b theta x}.
  f2 = {b: np.full(thetas.size, np.inf) for b in finite_b}
  f2_lam = {b: np.zeros(thetas.size, dtype=int) for b in finite_b}
  if finite_b:
    cs = np.concatenate([b * thetas for b in finite_b])
    for lam in lams:
      ints = _log_integrals(eff, lam, cs, quad)
      if strict and not ints.converged:
        raise QuadratureError(ints.rel_error, quad.rel_tol)
      for bi, b in enumerate(finite_b):
        seg = ints.log_value[bi * thetas.size:(bi + 1) * thetas.size]
        cand = np.log(b * thetas) - lam * epsilon + seg
        better = cand < f2[b]
        f2[b] = np.where(better, cand, f2[b])
        f2_lam[b] = np.where(better, lam, f2_lam[b])

  base = np.array([math.log(eff.k) + mechanisms.log_mp_theta(eff, float(t))
                   for t in thetas])
  s2 = eff.sigma * eff.sigma
  results = []
  for ti, theta in enumerate(thetas):
    best = None
    for a in a_grid:
      if a == 1.0:
        if theta < (1.0 - 1e-12) / s2 or not (epsilon / eff.q + eff.k) > 0:
          continue
        r = is_moment_bound_js(spec, epsilon, float(theta),
                               lambda_grid=lams)
        cand = dataclasses.replace(r, method=BoundMethod.IS_HOLDER)
      else:
        b = a / (a - 1.0) if math.isfinite(a) else 1.0
        if math.isfinite(a):
          log_mc, lam_mc = _smc_log_min(spec, epsilon, 2.0 * a, lams)
          if log_mc >= 0.0:
            log_mc, lam_mc = 0.0, None
          log_f1 = log_mc / a
        else:
          log_f1, lam_mc = 0.0, None
        log_nu = base[ti] + log_f1 + f2[b][ti] / b
        cand = MomentBoundResult(
            _exp_or_inf(log_nu), BoundMethod.IS_HOLDER, float(log_nu),
            lambda_star=int(f2_lam[b][ti]), theta=float(theta), a=float(a),
            b=float(b), lambda_star_mc=lam_mc,
            saturated=not math.isfinite(log_nu))
      if best is None or cand.log_nu < best.log_nu:
        best = cand
    if best is None:
      raise ValueError("no admissible a in a_grid for theta "
                       f"{theta} (a = 1 needs theta >= 1/sigma^2)")
    results.append(best)
  return results


def is_moment_bound_max(spec: mechanisms.MechanismSpec, epsilon: float,
                        theta: float, lam: int,
                        quad: QuadratureSpec = QuadratureSpec()
                        ) -> MomentBoundResult:
  """IS second-moment bound through the distribution of max_i t_i.

  nu = k M_P(theta) theta e^{-lam eps} int r(lam, x)^k e^{-theta x} dx.

  Args:
    spec: Mechanism specification with q > 0 and k >= 1.
    epsilon: Query point.
    theta: Positive tilting parameter.
    lam: Positive integer Chernoff order.
    quad: Integration tolerance.

  Returns:
    A ``MomentBoundResult`` with method ``is_max`` and b = 1.

  Raises:
    ValueError: On invalid inputs.
    QuadratureError: If the integral misses its tolerance.
  """
  r = _holder_table(spec, epsilon, [theta], (math.inf,), (lam,), quad)[0]
  return dataclasses.replace(r, method=BoundMethod.IS_MAX)


def is_moment_bound_holder(spec: mechanisms.MechanismSpec, epsilon: float,
                           theta: float,
                           a_grid: Sequence[float] = DEFAULT_A_GRID,
                           lambda_grid: Sequence[int] = DEFAULT_LAMBDA_GRID,
                           quad: QuadratureSpec = QuadratureSpec()
                           ) -> MomentBoundResult:
  """Hoelder interpolation between the js (a = 1) and max (a = inf) bounds.

  nu = k M_P(theta) (E[delta_mc^{2a}])^{1/a}
       (b theta e^{-lam eps} int r(lam, x)^k e^{-b theta x} dx)^{1/b},

  with E[delta_mc^{2a}] bounded by ``smc_moment_bound(u=2a)``. Each factor
  is minimized over its own Chernoff order. The a = 1 entry is the js bound
  and is skipped when theta < 1/sigma^2.

  Args:
    spec: Mechanism specification with q > 0 and k >= 1.
    epsilon: Query point.
    theta: Positive tilting parameter.
    a_grid: Exponents a >= 1; ``math.inf`` selects b = 1.
    lambda_grid: Positive integer Chernoff orders.
    quad: Integration tolerance.

  Returns:
    The smallest candidate as a ``MomentBoundResult``.

  Raises:
    ValueError: On invalid inputs or if no a in the grid is admissible.
    QuadratureError: If an integral misses its tolerance.
  """
  return _holder_table(spec, epsilon, [theta], a_grid, lambda_grid, quad)[0]


def holder_sweep(spec: mechanisms.MechanismSpec, epsilon: float,
                 thetas: Sequence[float],
                 a_grid: Sequence[float] = DEFAULT_A_GRID,
                 lambda_grid: Sequence[int] = DEFAULT_LAMBDA_GRID,
                 quad: QuadratureSpec = QuadratureSpec()) -> list:
  """``is_moment_bound_holder`` for many thetas, sharing the integrals."""
  return _holder_table(spec, epsilon, thetas, a_grid, lambda_grid, quad)


def optimal_theta(spec: mechanisms.MechanismSpec, epsilon: float,
                  theta_grid: Sequence[float],
                  a_grid: Sequence[float] = DEFAULT_A_GRID,
                  lambda_grid: Sequence[int] = DEFAULT_LAMBDA_GRID,
                  quad: QuadratureSpec = QuadratureSpec()):
  """Tilting parameter on a grid that minimizes the Hoelder bound.

  Args:
    spec: Mechanism specification with q > 0 and k >= 1.
    epsilon: Query point.
    theta_grid: Positive candidates.
    a_grid: Hoelder exponents.
    lambda_grid: Chernoff orders.
    quad: Integration tolerance.

  Returns:
    ``(theta, bound)``; ties go to the smaller theta.

  Raises:
    ValueError: If the grid is empty or has a non-positive entry.
  """
  grid = sorted(float(t) for t in _check_grid(theta_grid, "theta_grid"))
  results = _holder_table(spec, epsilon, grid, a_grid, lambda_grid, quad)
  i = int(np.argmin([r.log_nu for r in results]))
  return grid[i], results[i]
