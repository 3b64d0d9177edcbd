"""Adaptive composite Gauss-Legendre quadrature for log-space integrands.

Integrates several positive functions that share their expensive part at
once: ``log_f(x)`` returns an array of shape ``(n_funcs, len(x))`` of log
integrand values. Panels are bisected where the disagreement between one
panel rule and its two half-panel rules is largest, until the summed error
estimate of every function is below the relative tolerance.
"""

import dataclasses
import math
from typing import Callable

import numpy as np
from scipy import special

_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(16)
_LOG_WEIGHTS = np.log(_WEIGHTS)


@dataclasses.dataclass(frozen=True)
class QuadratureSpec:
  """Accuracy target of a numerical integration.

  Attributes:
    rel_tol: Relative error target, in (0, 1e-2].
    max_subdivisions: Cap on the number of panels.
  """
  rel_tol: float = 1e-8
  max_subdivisions: int = 4096

  def __post_init__(self):
    if not 0.0 < self.rel_tol <= 1e-2:
      raise ValueError(f"rel_tol must lie in (0, 1e-2], got {self.rel_tol}")
    if int(self.max_subdivisions) != self.max_subdivisions or (
        self.max_subdivisions < 1):
      raise ValueError("max_subdivisions must be a positive integer, got "
                       f"{self.max_subdivisions}")


@dataclasses.dataclass(frozen=True)
class LogIntegral:
  """Result of ``integrate_log``.

  Attributes:
    log_value: Log of each integral, shape ``(n_funcs,)``.
    rel_error: Estimated relative error of each integral.
    converged: Whether every error estimate met the tolerance.
    panels: Number of panels used.
  """
  log_value: np.ndarray
  rel_error: np.ndarray
  converged: bool
  panels: int


def _panel_logs(log_f, a, b):
  """Log of the one-panel and two-half-panel rules for panels [a_i, b_i]."""
  half = 0.5 * (b - a)
  mid = 0.5 * (a + b)
  quarter = 0.5 * half
  x_whole = mid[:, None] + half[:, None] * _NODES[None, :]
  x_left = (a + quarter)[:, None] + quarter[:, None] * _NODES[None, :]
  x_right = (mid + quarter)[:, None] + quarter[:, None] * _NODES[None, :]
  n = _NODES.size
  xs = np.concatenate([x_whole, x_left, x_right], axis=1).reshape(-1)
  g = np.asarray(log_f(xs), dtype=float)
  g = g.reshape(g.shape[0], a.size, 3, n)
  lw = _LOG_WEIGHTS[None, None, None, :]
  whole = special.logsumexp(g[:, :, 0] + lw[:, :, 0], axis=-1) + np.log(half)
  halves = np.logaddexp(
      special.logsumexp(g[:, :, 1] + lw[:, :, 0], axis=-1),
      special.logsumexp(g[:, :, 2] + lw[:, :, 0], axis=-1)) + np.log(quarter)
  return whole, halves


def integrate_log(log_f: Callable[[np.ndarray], np.ndarray], lo: float,
                  hi: float, quad: QuadratureSpec = QuadratureSpec(),
                  initial_panels: int = 32) -> LogIntegral:
  """Integrates exp(log_f) over [lo, hi] for several functions at once.

  Args:
    log_f: Maps a 1-D array of abscissae to log integrand values of shape
      ``(n_funcs, len(x))``. May return -inf.
    lo: Lower limit.
    hi: Upper limit, > lo.
    quad: Tolerance and panel cap.
    initial_panels: Number of equal panels to start from.

  Returns:
    A ``LogIntegral``; ``log_value`` is -inf where an integrand vanishes.

  Raises:
    ValueError: If the limits are not finite or hi <= lo.
  """
  if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
    raise ValueError(f"need finite limits with hi > lo, got [{lo}, {hi}]")
  edges = np.linspace(lo, hi, initial_panels + 1)
  a, b = edges[:-1], edges[1:]
  whole, halves = _panel_logs(log_f, a, b)
  tol = quad.rel_tol
  while True:
    total = special.logsumexp(halves, axis=1)
    safe = np.where(np.isfinite(total), total, 0.0)
    # Per-panel error relative to each function's total.
    with np.errstate(invalid="ignore", over="ignore"):
      err = np.abs(np.exp(whole - safe[:, None])
                   - np.exp(halves - safe[:, None]))
    err = np.where(np.isfinite(total)[:, None], np.nan_to_num(err), 0.0)
    rel = err.sum(axis=1)
    worst = err.max(axis=0)
    if rel.max() <= tol or a.size >= quad.max_subdivisions:
      return LogIntegral(total, rel, bool(rel.max() <= tol), a.size)
    # Split every panel carrying a fair share of the excess error.
    share = tol / a.size
    split = worst > share
    if not split.any():
      split = worst >= worst.max()
    budget = quad.max_subdivisions - a.size
    idx = np.flatnonzero(split)
    if idx.size > budget:
      idx = idx[np.argsort(worst[idx])[::-1][:budget]]
      split = np.zeros(a.size, dtype=bool)
      split[idx] = True
    mid = 0.5 * (a[split] + b[split])
    na = np.concatenate([a[split], mid])
    nb = np.concatenate([mid, b[split]])
    w_new, h_new = _panel_logs(log_f, na, nb)
    keep = ~split
    a = np.concatenate([a[keep], na])
    b = np.concatenate([b[keep], nb])
    whole = np.concatenate([whole[:, keep], w_new], axis=1)
    halves = np.concatenate([halves[:, keep], h_new], axis=1)
