"""Ground-truth delta_Y(eps) for tests and relative-error reports.

Three independent routes:

* ``gaussian_exact_delta``: closed form for the Gaussian PRV N(mu, s^2) with
  mu = s^2 / 2.
* ``quadrature_delta_single``: adaptive quadrature (QUADPACK through
  ``scipy.integrate.quad``) of E_{t~P}[(1 - e^{eps - y(t)})_+] for one
  mechanism.
* ``convolution_delta``: the single-step PRV is rounded onto a lattice once
  upward and once downward, each law is self-convolved k times by repeated
  squaring with direct (non-FFT) convolution, and the two results bracket
  delta_Y(eps), because (1 - e^{eps - y})_+ is nondecreasing in y.

None of these share code with the Monte Carlo estimators beyond the scalar
privacy-loss formula.
"""

import dataclasses
import math
from typing import Optional

import numpy as np
from scipy import integrate
from scipy import special

from evrdp import mechanisms
from evrdp._quadrature import QuadratureSpec

__all__ = [
    "QuadratureSpec", "GridSpec", "ConvolutionBracket", "gaussian_exact_delta",
    "gaussian_exact_log_delta", "quadrature_delta_single", "convolution_delta",
    "QuadratureFailure",
]

MAX_CONVOLUTION_K = 2**14
_SQRT2 = math.sqrt(2.0)


class QuadratureFailure(ArithmeticError):
  """Raised when adaptive quadrature misses its tolerance."""


def gaussian_exact_log_delta(sigma: float, k: int, epsilon: float) -> float:
  """Natural log of ``gaussian_exact_delta``; -inf when delta is zero."""
  if not sigma > 0:
    raise ValueError(f"sigma must be positive, got {sigma}")
  if int(k) != k or k < 0:
    raise ValueError(f"k must be a non-negative integer, got {k}")
  if not math.isfinite(epsilon):
    raise ValueError(f"epsilon must be finite, got {epsilon}")
  if k == 0:
    return math.log(-math.expm1(epsilon)) if epsilon < 0 else -math.inf
  s = math.sqrt(k) / sigma
  a = 0.5 * s - epsilon / s
  b = -0.5 * s - epsilon / s
  if a <= 0.0:
    # b^2 = a^2 + 2 eps, so e^eps Phi(b) and Phi(a) share the factor
    # e^{-a^2/2}; scaled complementary error functions keep the rest O(1).
    diff = special.erfcx(-a / _SQRT2) - special.erfcx(-b / _SQRT2)
    return math.log(0.5) - 0.5 * a * a + math.log(diff)
  value = special.ndtr(a) - math.exp(epsilon + special.log_ndtr(b))
  return math.log(value) if value > 0 else -math.inf


def gaussian_exact_delta(sigma: float, k: int, epsilon: float) -> float:
  """delta_Y(eps) for k composed Gaussian mechanisms with noise sigma.

  The PRV is N(mu, s^2) with mu = k / (2 sigma^2) and s^2 = k / sigma^2, so
  delta = Phi((mu - eps) / s) - e^{eps} Phi((mu - eps) / s - s).

  Args:
    sigma: Noise multiplier, positive.
    k: Number of compositions, non-negative.
    epsilon: Query point.

  Returns:
    delta in [0, 1]; values down to about 1e-300 are resolved.

  Raises:
    ValueError: If sigma <= 0, k < 0 or epsilon is not finite.
  """
  lv = gaussian_exact_log_delta(sigma, k, epsilon)
  return math.exp(lv) if lv > -math.inf else 0.0


def _inverse_loss(v, sigma, q):
  """Base draw t with y(t) = v, for v > log(1 - q)."""
  s2 = sigma * sigma
  if q == 1.0:
    return 0.5 + s2 * v
  return 0.5 + s2 * (np.log(np.expm1(v) + q) - math.log(q))


def _density(t, sigma, q):
  c = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
  z0 = t / sigma
  z1 = (t - 1.0) / sigma
  return c * ((1.0 - q) * np.exp(-0.5 * z0 * z0) + q * np.exp(-0.5 * z1 * z1))


def quadrature_delta_single(spec: mechanisms.MechanismSpec, epsilon: float,
                            quad: QuadratureSpec = QuadratureSpec()) -> float:
  """delta_Y(eps) of a single mechanism by adaptive quadrature.

  Integrates (1 - e^{eps - y(t)}) P(t) over t > t_eps, where y(t_eps) = eps.
  Subsampled specs are evaluated at k = 1; Gaussian specs use the exact
  collapse of k compositions into noise sigma / sqrt(k).

  Args:
    spec: Mechanism specification.
    epsilon: Query point.
    quad: Relative tolerance and subdivision cap.

  Returns:
    delta for one (equivalent) mechanism.

  Raises:
    ValueError: If epsilon is not finite.
    QuadratureFailure: If QUADPACK reports non-convergence.
  """
  if not math.isfinite(epsilon):
    raise ValueError(f"epsilon must be finite, got {epsilon}")
  if spec.kind is mechanisms.MechanismKind.GAUSSIAN:
    if spec.k == 0:
      return max(-math.expm1(epsilon), 0.0)
    spec = mechanisms.single_equivalent(spec)
  sigma, q = spec.sigma, spec.q
  if q == 0.0:
    return max(-math.expm1(epsilon), 0.0)
  # Below log(1 - q) every base draw contributes.
  floor = math.log1p(-q) if q < 1.0 else -math.inf
  t_lo = (float(_inverse_loss(epsilon, sigma, q)) if epsilon > floor
          else -math.inf)

  def integrand(t):
    y = mechanisms.log_ratio(spec, t)
    return -math.expm1(epsilon - y) * float(_density(t, sigma, q))

  # Split at the bulk of each component so QUADPACK sees both peaks.
  centre = max(t_lo, -40.0 * sigma) if math.isfinite(t_lo) else -40.0 * sigma
  hi = max(centre, 1.0) + 40.0 * sigma
  lo = t_lo if math.isfinite(t_lo) else -40.0 * sigma
  points = sorted(p for p in {0.0, 1.0, lo + sigma} if lo < p < hi)
  kwargs = dict(epsabs=0.0, epsrel=quad.rel_tol, limit=quad.max_subdivisions,
                full_output=1)
  main = integrate.quad(integrand, lo, hi, points=points or None, **kwargs)
  tail = integrate.quad(integrand, hi, np.inf, **kwargs)
  for part in (main, tail):
    if len(part) > 3 and part[0] != 0.0 and part[1] > quad.rel_tol * abs(
        part[0]) * 10:
      raise QuadratureFailure(f"quadrature did not converge: {part[3]}")
  return float(main[0] + tail[0])


@dataclasses.dataclass(frozen=True)
class GridSpec:
  """Lattice used by ``convolution_delta``.

  Attributes:
    step: Lattice spacing in nats; None picks span / points.
    points: Target number of lattice points across the widest window.
    tail_sigmas: Standard deviations kept below the mean of partial sums.
    margin: Nats kept above the largest relevant partial sum.
  """
  step: Optional[float] = None
  points: int = 2**15
  tail_sigmas: float = 12.0
  margin: float = 8.0

  def __post_init__(self):
    if self.step is not None and not (math.isfinite(self.step)
                                      and self.step > 0):
      raise ValueError(f"step must be positive and finite, got {self.step}")
    if int(self.points) != self.points or self.points < 16:
      raise ValueError(f"points must be an integer >= 16, got {self.points}")
    if not (self.tail_sigmas > 0 and self.margin > 0):
      raise ValueError("tail_sigmas and margin must be positive")


@dataclasses.dataclass(frozen=True)
class ConvolutionBracket:
  """Certified bracket lower <= delta_Y(eps) <= upper.

  Attributes:
    lower: Value from the downward-rounded law.
    upper: Value from the upward-rounded law.
    spill: Worst-case change of delta caused by mass that left the lattice
      window: mass below it in full, mass above it weighted by e^-margin.
    reliable: False when spill exceeds 1e-3 of ``upper``.
    step: Lattice spacing used.
    k: Number of compositions.
    epsilon: Query point.
  """
  lower: float
  upper: float
  spill: float
  reliable: bool
  step: float
  k: int
  epsilon: float

  def contains(self, value: float, rel_slack: float = 0.0) -> bool:
    return (self.lower * (1.0 - rel_slack) <= value
            <= self.upper * (1.0 + rel_slack))


class _Moments:
  """Location and scale of one base step's privacy loss."""

  def __init__(self, sigma, q):
    self.sigma, self.q = sigma, q
    spec = mechanisms.MechanismSpec.subsampled_gaussian(sigma, q)
    # E[Y] and E[Y^2] by quadrature over t ~ P; independent of the MGF code.
    def moment(p):
      f = lambda t: float(mechanisms.log_ratio(spec, t))**p * float(
          _density(t, sigma, q))
      return integrate.quad(f, -40 * sigma, 1 + 40 * sigma, points=[0.0, 1.0],
                            limit=500)[0]
    self.mean = moment(1)
    self.std = math.sqrt(max(moment(2) - self.mean**2, 0.0))
    self.floor = math.log1p(-q) if q < 1.0 else -math.inf

  def bottom(self, n, c):
    if n == 0:
      return 0.0
    return max(n * self.floor, n * self.mean - c * math.sqrt(n) * self.std)


def _survival(v, sigma, q):
  """Pr[Y > v] for one step, with v a numpy array."""
  out = np.ones_like(v)
  floor = math.log1p(-q) if q < 1.0 else -math.inf
  ok = v > floor
  t = _inverse_loss(v[ok], sigma, q)
  out[ok] = ((1.0 - q) * special.ndtr(-t / sigma)
             + q * special.ndtr((1.0 - t) / sigma))
  return out


def _cdf(v, sigma, q):
  out = np.zeros_like(v)
  floor = math.log1p(-q) if q < 1.0 else -math.inf
  ok = v > floor
  t = _inverse_loss(v[ok], sigma, q)
  out[ok] = (1.0 - q) * special.ndtr(t / sigma) + q * special.ndtr(
      (t - 1.0) / sigma)
  return out


def _cell_masses(edges, sigma, q):
  """Pr[Y in (edges[i], edges[i+1]]] with tail-accurate differences."""
  cdf = _cdf(edges, sigma, q)
  sf = _survival(edges, sigma, q)
  by_cdf = np.diff(cdf)
  by_sf = -np.diff(sf)
  use_sf = cdf[:-1] > 0.5
  return np.maximum(np.where(use_sf, by_sf, by_cdf), 0.0)


class _Chain:
  """Lattice law of a partial sum; ``up`` selects the rounding direction."""

  def __init__(self, up, lo, pmf, top_mass=0.0, spill=0.0, top_weight=1.0):
    self.up = up
    self.top_weight = top_weight  # worst-case error per unit of top mass
    self.lo = lo            # lattice index of pmf[0]
    self.pmf = pmf
    self.top_mass = top_mass  # upward chain: mass sent to +inf
    self.spill = spill      # mass handled outside the window

  def truncate(self, lo, hi):
    """Restricts to lattice indices [lo, hi] with direction-safe rounding."""
    pmf, start = self.pmf, self.lo
    below = pmf[:max(0, min(lo - start, pmf.size))]
    above = pmf[max(0, hi + 1 - start):]
    m_below = math.fsum(below.tolist())
    m_above = math.fsum(above.tolist())
    a = max(lo, start)
    b = min(hi, start + pmf.size - 1)
    core = pmf[a - start:b - start + 1].copy() if b >= a else np.zeros(0)
    if core.size == 0:
      core = np.zeros(1)
      a = lo
    if self.up:
      # Round up: low mass moves to the window bottom, high mass to +inf.
      if m_below:
        if a == lo:
          core[0] += m_below
        else:
          core = np.concatenate([[m_below], np.zeros(a - lo - 1), core])
          a = lo
      self.top_mass += m_above
      self.spill += m_below + self.top_weight * m_above
    else:
      # Round down: low mass is dropped, high mass clipped to the top.
      if m_above:
        end = a + core.size - 1
        if end == hi:
          core[-1] += m_above
        else:
          core = np.concatenate([core, np.zeros(hi - end - 1), [m_above]])
      self.spill += m_below + self.top_weight * m_above
    self.lo, self.pmf = a, core
    return self

  def convolve(self, other):
    pmf = np.convolve(self.pmf, other.pmf)
    top = 1.0 - (1.0 - self.top_mass) * (1.0 - other.top_mass)
    return _Chain(self.up, self.lo + other.lo, pmf, top,
                  self.spill + other.spill, self.top_weight)


def convolution_delta(spec: mechanisms.MechanismSpec, epsilon: float,
                      grid: GridSpec = GridSpec()) -> ConvolutionBracket:
  """Brackets delta_Y(eps) by brute-force convolution on a lattice.

  Args:
    spec: Mechanism specification with k <= 2**14.
    epsilon: Query point.
    grid: Lattice parameters.

  Returns:
    A ``ConvolutionBracket`` with lower <= delta_Y(eps) <= upper.

  Raises:
    ValueError: If k exceeds 2**14 or epsilon is not finite.
  """
  if not math.isfinite(epsilon):
    raise ValueError(f"epsilon must be finite, got {epsilon}")
  k = spec.k
  if k > MAX_CONVOLUTION_K:
    raise ValueError(f"k must be at most {MAX_CONVOLUTION_K}, got {k}")
  trivial = max(-math.expm1(epsilon), 0.0)
  if k == 0 or spec.q == 0.0:
    return ConvolutionBracket(trivial, trivial, 0.0, True, 0.0, k,
                              float(epsilon))
  sigma, q = spec.sigma, spec.q
  mom = _Moments(sigma, q)
  c = grid.tail_sigmas

  def window(n):
    bottom = mom.bottom(n, c)
    top = epsilon - mom.bottom(k - n, c) + grid.margin
    return bottom, max(top, bottom + grid.margin)

  used = _used_sizes(k)
  if grid.step is None:
    span = max(w[1] - w[0] for w in map(window, used))
    h = span / grid.points
  else:
    h = grid.step

  def indices(n):
    # Each rounded step moves by less than one cell, so n-step partial sums
    # may leave the real window by n cells.
    bottom, top = window(n)
    return math.floor(bottom / h) - n, math.ceil(top / h) + n

  lo1, hi1 = indices(1)
  edges = np.arange(lo1 - 1, hi1 + 1) * h
  cells = _cell_masses(edges, sigma, q)     # cell i covers (edges[i], edges[i+1]]
  below = float(_cdf(edges[:1], sigma, q)[0])
  above = float(_survival(edges[-1:], sigma, q)[0])
  # Upward: cell (x_{j-1}, x_j] -> x_j for j = lo1..hi1.
  up_pmf = cells.copy()
  up_pmf[0] += below
  # Paths pushed past a window top end above eps + margin, so treating them
  # as +inf (or as the top) changes their contribution by at most e^-margin.
  top_weight = math.exp(-grid.margin)
  up = _Chain(True, lo1, up_pmf, top_mass=above,
              spill=below + top_weight * above, top_weight=top_weight)
  # Downward: cell (x_{j}, x_{j+1}] -> x_j for j = lo1-1..hi1-1; then clip.
  dn_pmf = np.concatenate([cells, [above]])
  dn = _Chain(False, lo1 - 1, dn_pmf, spill=below,
              top_weight=top_weight).truncate(lo1, hi1)

  results = []
  for chain in (up, dn):
    acc, acc_n = None, 0
    power, pow_n = chain, 1
    rest = k
    while rest:
      if rest & 1:
        if acc is None:
          acc, acc_n = power, pow_n
        else:
          acc_n += pow_n
          acc = acc.convolve(power).truncate(*indices(acc_n))
      rest >>= 1
      if rest:
        pow_n *= 2
        power = power.convolve(power).truncate(*indices(pow_n))
    values = (acc.lo + np.arange(acc.pmf.size)) * h
    gain = np.where(values > epsilon, -np.expm1(epsilon - values), 0.0)
    total = math.fsum((acc.pmf * gain).tolist())
    if chain.up:
      total += acc.top_mass
    results.append((min(total, 1.0), acc.spill))
  (upper, spill_up), (lower, spill_dn) = results
  spill = max(spill_up, spill_dn)
  return ConvolutionBracket(lower, upper, spill,
                            spill <= 1e-3 * upper, h, k, float(epsilon))


def _used_sizes(k):
  """Partial-sum sizes formed by repeated squaring for k steps."""
  sizes, acc, p, rest = set(), 0, 1, k
  while rest:
    if rest & 1:
      acc += p
      sizes.add(acc)
    rest >>= 1
    if rest:
      p *= 2
      sizes.add(p)
  sizes.add(1)
  return sorted(sizes)
