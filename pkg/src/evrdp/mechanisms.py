"""Mechanism specifications and the closed-form quantities of their PRVs.

The dominating pair of a Poisson-subsampled Gaussian mechanism with
sensitivity 1 is Q = N(0, sigma^2) and P = (1 - q) N(0, sigma^2) +
q N(1, sigma^2). The plain Gaussian mechanism is the ``q = 1`` case. For a
base draw ``t ~ P`` the privacy loss is

  y(t) = log(1 - q + q * exp((2t - 1) / (2 sigma^2))),

and the PRV of a k-fold composition is the sum of k independent copies.
"""

import dataclasses
import enum
import math

import numpy as np
from scipy import special

# exp() overflows just above 709.78; beyond this the log-ratio switches to
# its asymptotic form.
_EXP_SAFE = 700.0


class MechanismKind(str, enum.Enum):
  GAUSSIAN = "gaussian"
  SUBSAMPLED_GAUSSIAN = "poisson_subsampled_gaussian"


@dataclasses.dataclass(frozen=True)
class MechanismSpec:
  """A k-fold composition of identical (subsampled) Gaussian mechanisms.

  Attributes:
    kind: Mechanism family. The Gaussian kind always has ``q == 1``.
    sigma: Noise multiplier (noise standard deviation over sensitivity).
    q: Poisson subsampling rate in [0, 1].
    k: Number of composed copies.
  """
  kind: MechanismKind
  sigma: float
  q: float
  k: int

  def __post_init__(self):
    kind = MechanismKind(self.kind)
    object.__setattr__(self, "kind", kind)
    if not (math.isfinite(self.sigma) and self.sigma > 0):
      raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
    if not 0.0 <= self.q <= 1.0:
      raise ValueError(f"q must lie in [0, 1], got {self.q}")
    if kind is MechanismKind.GAUSSIAN and self.q != 1.0:
      raise ValueError("the gaussian kind requires q == 1")
    if int(self.k) != self.k or self.k < 0:
      raise ValueError(f"k must be a non-negative integer, got {self.k}")
    object.__setattr__(self, "sigma", float(self.sigma))
    object.__setattr__(self, "q", float(self.q))
    object.__setattr__(self, "k", int(self.k))

  @classmethod
  def gaussian(cls, sigma: float, k: int = 1) -> "MechanismSpec":
    return cls(MechanismKind.GAUSSIAN, sigma, 1.0, k)

  @classmethod
  def subsampled_gaussian(cls, sigma: float, q: float,
                          k: int = 1) -> "MechanismSpec":
    return cls(MechanismKind.SUBSAMPLED_GAUSSIAN, sigma, q, k)

  def with_k(self, k: int) -> "MechanismSpec":
    return dataclasses.replace(self, k=k)


def single_equivalent(spec: MechanismSpec) -> MechanismSpec:
  """Collapses a Gaussian composition into one equivalent mechanism.

  k Gaussian mechanisms with noise sigma have the same PRV as one Gaussian
  mechanism with noise sigma / sqrt(k). Subsampled specs are returned
  unchanged, as are Gaussian specs with k <= 1.
  """
  if spec.kind is MechanismKind.GAUSSIAN and spec.k > 1:
    return MechanismSpec.gaussian(spec.sigma / math.sqrt(spec.k), 1)
  return spec


def log_ratio_array(t: np.ndarray, sigma: float, q: float) -> np.ndarray:
  """Vectorized privacy loss y(t); see ``log_ratio``."""
  t = np.asarray(t, dtype=float)
  u = (t - 0.5) / (sigma * sigma)
  if q == 1.0:
    return u
  if q == 0.0:
    return np.zeros_like(u)
  y = np.asarray(np.log1p(q * np.expm1(np.minimum(u, _EXP_SAFE))))
  big = u > _EXP_SAFE
  if np.any(big):
    ub = u[big]
    y = np.array(y)
    y[big] = ub + math.log(q) + np.log1p((1.0 - q) / q * np.exp(-ub))
  return y


def log_ratio(spec: MechanismSpec, t):
  """Privacy loss y(t) = log(P(t) / Q(t)) of one base draw, in nats.

  Args:
    spec: Mechanism specification; only sigma and q are used.
    t: Real scalar or array.

  Returns:
    y(t), with the same shape as ``t``.
  """
  y = log_ratio_array(np.asarray(t, dtype=float), spec.sigma, spec.q)
  return float(y) if np.ndim(y) == 0 else y


def gaussian_prv_params(sigma: float, k: int) -> tuple[float, float]:
  """Mean and variance of the PRV of k composed Gaussian mechanisms.

  Args:
    sigma: Noise multiplier, positive.
    k: Number of compositions, non-negative.

  Returns:
    ``(k / (2 sigma^2), k / sigma^2)``.

  Raises:
    ValueError: If sigma is not positive or k is negative.
  """
  if not sigma > 0:
    raise ValueError(f"sigma must be positive, got {sigma}")
  if k < 0:
    raise ValueError(f"k must be non-negative, got {k}")
  return k / (2.0 * sigma * sigma), k / (sigma * sigma)


def _log_one_minus_q_plus_q_exp(q: float, x: float) -> float:
  """log(1 - q + q e^x), stable for tiny q and large |x|."""
  if q == 0.0:
    return 0.0
  if q == 1.0:
    return x
  if x < _EXP_SAFE:
    return math.log1p(q * math.expm1(x))
  return x + math.log(q) + math.log1p((1.0 - q) / q * math.exp(-x))


def log_mp_theta(spec: MechanismSpec, theta: float) -> float:
  """Log of the moment generating function of one base draw t ~ P."""
  s2 = spec.sigma * spec.sigma
  return 0.5 * s2 * theta * theta + _log_one_minus_q_plus_q_exp(spec.q, theta)


def mp_theta(spec: MechanismSpec, theta: float) -> float:
  """M_P(theta) = E_{t~P}[exp(theta t)] for one base draw.

  Args:
    spec: Mechanism specification.
    theta: Tilting parameter.

  Returns:
    (1 - q) e^{sigma^2 theta^2 / 2} + q e^{theta + sigma^2 theta^2 / 2};
    ``inf`` if the value exceeds the float range.
  """
  lv = log_mp_theta(spec, theta)
  return math.exp(lv) if lv < 709.0 else math.inf


def tilted_mixture_weight(spec: MechanismSpec, theta: float) -> float:
  """Weight of the N(1, .) component under the exponentially tilted P.

  Tilting by e^{theta t} shifts both components by theta sigma^2 and
  reweights them in proportion to their own MGFs, which moves the
  subsampled-component weight from q to q e^theta / (1 - q + q e^theta).
  """
  q = spec.q
  if theta == 0.0 or q in (0.0, 1.0):
    return q
  return float(special.expit(theta + math.log(q) - math.log1p(-q)))


def mixture_cdf(spec: MechanismSpec, x):
  """CDF of a base draw t ~ P, i.e. (1 - q) Phi(x / sigma) + q Phi((x - 1) / sigma)."""
  x = np.asarray(x, dtype=float)
  out = ((1.0 - spec.q) * special.ndtr(x / spec.sigma)
         + spec.q * special.ndtr((x - 1.0) / spec.sigma))
  return float(out) if out.ndim == 0 else out


def log_truncated_mgf(spec: MechanismSpec, lam: int, x) -> np.ndarray:
  """log E_{t~P}[exp(lam * y(t)) 1{t <= x}] for integer lam >= 0.

  Expanding (1 - q + q e^{(2t-1)/(2 sigma^2)})^lam binomially turns each term
  into a truncated Gaussian exponential moment, so

    r(lam, x) = sum_j C(lam, j) (1-q)^(lam-j) q^j [
        (1 - q) e^{j(j-1)/(2 sigma^2)} Phi((x - j) / sigma)
        + q e^{j(j+1)/(2 sigma^2)} Phi((x - 1 - j) / sigma)].

  All terms are combined in log space with log-Phi, so the result stays
  finite where r itself would overflow or underflow.

  Args:
    spec: Mechanism specification.
    lam: Non-negative integer order. ``lam = 0`` gives the mixture CDF.
    x: Truncation point(s); ``+inf`` gives the full moment.

  Returns:
    Array of log r(lam, x) with the shape of ``x``.

  Raises:
    ValueError: If lam is not a non-negative integer.
  """
  if int(lam) != lam or lam < 0:
    raise ValueError(f"lam must be a non-negative integer, got {lam}")
  lam = int(lam)
  x = np.asarray(x, dtype=float)
  sigma, q = spec.sigma, spec.q
  s2 = sigma * sigma
  j = np.arange(lam + 1, dtype=float)
  with np.errstate(divide="ignore"):
    base = (special.gammaln(lam + 1.0) - special.gammaln(j + 1.0)
            - special.gammaln(lam - j + 1.0)
            + special.xlogy(lam - j, 1.0 - q) + special.xlogy(j, q))
    c0 = np.log1p(-q) + base + j * (j - 1.0) / (2.0 * s2)
    c1 = np.log(q) + base + j * (j + 1.0) / (2.0 * s2)
  flat = x.reshape(-1)
  shifts = np.arange(lam + 2, dtype=float)
  log_phi = special.log_ndtr((flat[None, :] - shifts[:, None]) / sigma)
  terms = np.concatenate(
      [c0[:, None] + log_phi[:-1], c1[:, None] + log_phi[1:]], axis=0)
  out = special.logsumexp(terms, axis=0)
  return out.reshape(x.shape)


def log_mgf_single(spec: MechanismSpec, lam: int) -> float:
  """log E_{t~P}[exp(lam * y(t))] for integer lam >= 0 (never overflows)."""
  return float(log_truncated_mgf(spec, lam, np.inf))


def mgf_single(spec: MechanismSpec, lam: int) -> float:
  """E_{t~P}[exp(lam * y(t))] for one mechanism; the composed MGF is this ** k.

  Args:
    spec: Mechanism specification.
    lam: Integer order >= 1.

  Returns:
    The moment, or ``math.inf`` when it exceeds the float range (use
    ``log_mgf_single`` for the finite log value).

  Raises:
    ValueError: If lam is not a positive integer.
  """
  if int(lam) != lam or lam < 1:
    raise ValueError(f"lam must be a positive integer, got {lam}")
  lv = log_mgf_single(spec, lam)
  return math.exp(lv) if lv < 709.0 else math.inf
