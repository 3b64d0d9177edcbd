"""Seeded, chunked sampling of composed privacy-loss random variables.

Each path i of a batch accumulates ``sum_j y(t_ij)`` over composition steps
j = 1..k. The base draw t_ij depends only on (seed, j, i), so batches are
bit-identical under any chunk size or worker count, and an online
accountant that adds one step at a time reproduces the offline sums exactly.

Importance-sampled batches tilt one uniformly chosen coordinate per path to
the exponential tilt P_theta(t) = e^{theta t} P(t) / M_P(theta) and weight
the path by k M_P(theta) / sum_j e^{theta t_j}.
"""

import concurrent.futures
import dataclasses
import math
import os
from typing import Callable, Optional, Sequence

import numpy as np

from evrdp import _rng
from evrdp import mechanisms

DEFAULT_CHUNK_SIZE = 1 << 15
THREADS_ENV = "EVRDP_THREADS"


def default_threads() -> int:
  env = os.environ.get(THREADS_ENV)
  if env:
    n = int(env)
    if n < 1:
      raise ValueError(f"{THREADS_ENV} must be >= 1, got {env}")
    return n
  return os.cpu_count() or 1


@dataclasses.dataclass(frozen=True)
class TiltPlan:
  """Exponential tilting parameter with its cached normalizer.

  Attributes:
    theta: Tilting parameter (1/nats).
    log_mp_theta: log M_P(theta).
  """
  theta: float
  log_mp_theta: float

  @property
  def mp_theta(self) -> float:
    return math.exp(self.log_mp_theta) if self.log_mp_theta < 709 else math.inf

  @classmethod
  def for_spec(cls, spec: mechanisms.MechanismSpec, theta: float) -> "TiltPlan":
    if not math.isfinite(theta):
      raise ValueError(f"theta must be finite, got {theta}")
    return cls(float(theta), mechanisms.log_mp_theta(spec, theta))


@dataclasses.dataclass(frozen=True)
class PrvSampleBatch:
  """Privacy-loss samples with importance weights.

  Attributes:
    values: Realized composed privacy losses, one per path.
    log_weights: Log importance weights; all zero for simple Monte Carlo.
    m: Number of paths.
    seed: Seed the batch was drawn with.
    theta: Tilting parameter, 0 for simple Monte Carlo.
  """
  values: np.ndarray
  log_weights: np.ndarray
  m: int
  seed: int
  theta: float = 0.0

  @property
  def weights(self) -> np.ndarray:
    return np.exp(self.log_weights)


@dataclasses.dataclass(frozen=True)
class _Steps:
  sigmas: tuple
  qs: tuple

  @classmethod
  def homogeneous(cls, spec: mechanisms.MechanismSpec) -> "_Steps":
    return cls((spec.sigma,) * spec.k, (spec.q,) * spec.k)

  def __len__(self):
    return len(self.sigmas)


class _StepSampler:
  """Draws y(t) for one composition step over a contiguous path range."""

  def __init__(self, n_max: int):
    self.buf = _rng.DrawBuffer(n_max)

  def draw(self, key, step: int, start: int, n: int, sigma: float, q: float,
           tilt_rows: Optional[np.ndarray] = None, theta: float = 0.0,
           q_theta: Optional[float] = None):
    """Returns base draws t and their log-ratios y for paths in range.

    Args:
      key: Philox key.
      step: 1-based composition step.
      start: First path index.
      n: Number of paths.
      sigma: Noise multiplier of this step.
      q: Subsampling rate of this step.
      tilt_rows: Rows (relative to ``start``) whose draw at this step comes
        from the tilted distribution.
      theta: Tilting parameter for ``tilt_rows``.
      q_theta: Tilted weight of the N(1, .) component; defaults to q.
    """
    z, bits = _rng.base_draws(key, step, start, n, self.buf)
    t = sigma * z
    thr = _rng.coin_threshold(q)
    if thr is None:
      t += 1.0
    elif q > 0.0:
      t += bits < thr
    if tilt_rows is not None and tilt_rows.size:
      thr_t = _rng.coin_threshold(q if q_theta is None else q_theta)
      zt = sigma * z[tilt_rows]
      if thr_t is None:
        coin = np.ones(tilt_rows.size)
      else:
        coin = (bits[tilt_rows] < thr_t).astype(float)
      t[tilt_rows] = zt + (theta * sigma * sigma + coin)
    return t, mechanisms.log_ratio_array(t, sigma, q)


def _simulate_chunk(key, steps: _Steps, start: int, n: int,
                    tilt: Optional[TiltPlan], sampler: _StepSampler):
  values = np.zeros(n)
  if tilt is None:
    for j in range(len(steps)):
      _, y = sampler.draw(key, j + 1, start, n, steps.sigmas[j], steps.qs[j])
      values += y
    return values, np.zeros(n)

  k = len(steps)
  index = _rng.index_draws(key, start, n, k)
  order = np.argsort(index, kind="stable")
  bounds = np.searchsorted(index[order], np.arange(k + 1))
  theta = tilt.theta
  run_max = np.full(n, -np.inf)
  run_sum = np.zeros(n)
  q_theta = {}
  for j in range(k):
    rows = order[bounds[j]:bounds[j + 1]]
    sigma, q = steps.sigmas[j], steps.qs[j]
    if (sigma, q) not in q_theta:
      q_theta[sigma, q] = mechanisms.tilted_mixture_weight(
          mechanisms.MechanismSpec.subsampled_gaussian(sigma, q), theta)
    t, y = sampler.draw(key, j + 1, start, n, sigma, q, tilt_rows=rows,
                        theta=theta, q_theta=q_theta[sigma, q])
    values += y
    v = theta * t
    new_max = np.maximum(run_max, v)
    run_sum = run_sum * np.exp(run_max - new_max) + np.exp(v - new_max)
    run_max = new_max
  log_weights = math.log(k) + tilt.log_mp_theta - (run_max + np.log(run_sum))
  return values, log_weights


def chunk_ranges(m: int, chunk_size: int):
  return [(s, min(chunk_size, m - s)) for s in range(0, m, chunk_size)]


def map_chunks(fn: Callable, m: int, chunk_size: int,
               threads: Optional[int] = None) -> list:
  """Applies ``fn(start, n)`` to every chunk; results in chunk order."""
  ranges = chunk_ranges(m, chunk_size)
  threads = threads or default_threads()
  if threads == 1 or len(ranges) == 1:
    return [fn(s, n) for s, n in ranges]
  with concurrent.futures.ThreadPoolExecutor(threads) as pool:
    return list(pool.map(lambda r: fn(*r), ranges))


def iter_chunk_samples(spec: mechanisms.MechanismSpec, m: int, seed: int,
                       tilt: Optional[TiltPlan], chunk_size: int,
                       reduce: Callable, threads: Optional[int] = None,
                       steps: Optional[Sequence] = None) -> list:
  """Simulates paths chunk by chunk and maps ``reduce(values, log_w, start)``.

  Only one chunk per worker is alive at a time, so memory stays O(chunk)
  regardless of m and k.
  """
  _check_batch_args(spec, m, tilt, chunk_size)
  key = _rng.derive_key(seed)
  step_list = _Steps.homogeneous(spec) if steps is None else steps
  local = {}

  def run(start, n):
    import threading
    tid = threading.get_ident()
    sampler = local.get(tid)
    if sampler is None:
      sampler = local[tid] = _StepSampler(chunk_size)
    values, log_w = _simulate_chunk(key, step_list, start, n, tilt, sampler)
    return reduce(values, log_w, start)

  return map_chunks(run, m, chunk_size, threads)


def _check_batch_args(spec, m, tilt, chunk_size):
  if int(m) != m or m < 1:
    raise ValueError(f"m must be a positive integer, got {m}")
  if int(chunk_size) != chunk_size or chunk_size < 1:
    raise ValueError(f"chunk_size must be a positive integer, got {chunk_size}")
  if tilt is not None:
    if spec.k < 1:
      raise ValueError("tilted sampling needs at least one composition step")
    if spec.q == 0.0:
      raise ValueError("tilted sampling is undefined when q == 0")


def sample_prv(spec: mechanisms.MechanismSpec, m: int, seed: int,
               tilt: Optional[TiltPlan] = None,
               chunk_size: int = DEFAULT_CHUNK_SIZE,
               threads: Optional[int] = None) -> PrvSampleBatch:
  """Draws m composed privacy-loss samples.

  Args:
    spec: Mechanism specification.
    m: Number of sample paths.
    seed: Seed of the counter-based generator.
    tilt: If given, tilt one uniformly chosen coordinate per path and return
      the matching importance weights.
    chunk_size: Paths simulated per work unit. Does not affect results.
    threads: Worker threads; defaults to ``EVRDP_THREADS`` or the CPU count.

  Returns:
    A ``PrvSampleBatch`` with m values and log weights.

  Raises:
    ValueError: If m < 1, or a tilt is requested with k == 0 or q == 0.
  """
  parts = iter_chunk_samples(spec, m, seed, tilt, chunk_size,
                             lambda v, w, s: (v, w), threads)
  values = np.concatenate([p[0] for p in parts])
  log_w = np.concatenate([p[1] for p in parts])
  return PrvSampleBatch(values, log_w, int(m), int(seed),
                        0.0 if tilt is None else tilt.theta)


def step_log_ratios(key, step: int, m: int, sigma: float, q: float,
                    chunk_size: int = DEFAULT_CHUNK_SIZE,
                    threads: Optional[int] = None) -> np.ndarray:
  """y(t) of composition step ``step`` for all m paths (untilted)."""
  def run(start, n):
    return _StepSampler(n).draw(key, step, start, n, sigma, q)[1]
  return np.concatenate(map_chunks(run, m, chunk_size, threads))
