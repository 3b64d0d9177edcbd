"""Ground-truth oracles: closed form, quadrature and lattice convolution."""

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evrdp import oracle
from evrdp.mechanisms import MechanismSpec
from evrdp.oracle import GridSpec, QuadratureSpec


def _mp_gaussian_delta(sigma, k, eps):
  """delta for Y ~ N(mu, s^2) at 60 digits, straight from the integral form."""
  with mpmath.workdps(60):
    mu = mpmath.mpf(k) / (2 * mpmath.mpf(sigma)**2)
    s = mpmath.sqrt(mpmath.mpf(k)) / mpmath.mpf(sigma)
    eps = mpmath.mpf(eps)
    a = (mu - eps) / s
    return float(mpmath.ncdf(a) - mpmath.exp(eps - mu + s * s / 2)
                 * mpmath.ncdf(a - s))


def test_gaussian_exact_reference_value():
  # erf(0.5 / sqrt(2)) at 40 digits.
  assert oracle.gaussian_exact_delta(1.0, 1, 0.0) == pytest.approx(
      0.3829249225480262072754, rel=1e-15)


@pytest.mark.parametrize("sigma,k,eps", [
    (1.0, 1, 1.0), (0.5, 3, 4.0), (2.0, 10, 0.1), (70.0, 1200, 0.5),
    (70.0, 1200, 2.0), (1.0, 1, 20.0), (3.0, 5, -1.0),
])
def test_gaussian_exact_matches_high_precision(sigma, k, eps):
  assert oracle.gaussian_exact_delta(sigma, k, eps) == pytest.approx(
      _mp_gaussian_delta(sigma, k, eps), rel=1e-11)


def test_gaussian_exact_deep_tail_is_representable():
  with mpmath.workdps(80):
    mu, s, eps = mpmath.mpf(0.5), mpmath.mpf(1), mpmath.mpf(30)
    a = (mu - eps) / s
    ref = float(mpmath.log(mpmath.ncdf(a) - mpmath.exp(eps - mu + s * s / 2)
                           * mpmath.ncdf(a - s)))
  assert oracle.gaussian_exact_log_delta(1.0, 1, 30.0) == pytest.approx(
      ref, rel=1e-10)
  assert 0.0 < oracle.gaussian_exact_delta(1.0, 1, 30.0) < 1e-190


def test_gaussian_exact_empty_composition():
  assert oracle.gaussian_exact_delta(1.0, 0, 1.0) == 0.0
  assert oracle.gaussian_exact_delta(1.0, 0, -1.0) == pytest.approx(
      1 - math.exp(-1.0))


def test_fig1_regime_reaches_below_1e15():
  eps = np.linspace(0.0, 4.0, 41)
  vals = [oracle.gaussian_exact_delta(70.0, 1200, e) for e in eps]
  assert all(a > b for a, b in zip(vals, vals[1:]))
  assert vals[-1] < 1e-15


@settings(max_examples=40, deadline=None)
@given(sigma=st.floats(0.3, 100.0), k=st.integers(1, 2000),
       e1=st.floats(-3.0, 30.0), e2=st.floats(-3.0, 30.0))
def test_gaussian_exact_monotone(sigma, k, e1, e2):
  lo, hi = min(e1, e2), max(e1, e2)
  d = lambda e, kk: oracle.gaussian_exact_delta(sigma, kk, e)
  assert d(hi, k) <= d(lo, k) * (1 + 1e-12) + 1e-300
  assert d(lo, k) <= d(lo, k + 1) * (1 + 1e-12) + 1e-300
  assert 0.0 <= d(lo, k) <= 1.0


@pytest.mark.parametrize("sigma,eps", [(1.0, 0.0), (0.5, 2.0), (3.0, 0.1)])
def test_quadrature_matches_closed_form(sigma, eps):
  spec = MechanismSpec.gaussian(sigma, 1)
  got = oracle.quadrature_delta_single(spec, eps, QuadratureSpec(1e-12))
  assert got == pytest.approx(oracle.gaussian_exact_delta(sigma, 1, eps),
                              rel=1e-8)


def test_quadrature_reference_subsampled_value():
  spec = MechanismSpec.subsampled_gaussian(0.6, 1e-3, 100)
  # mpmath.quad of (1 - e^{1.5 - y(t)}) P(t) over t > t_eps at 40 digits.
  ref = 6.70096130587151097979e-9
  v1 = oracle.quadrature_delta_single(spec, 1.5, QuadratureSpec(1e-10))
  assert v1 == pytest.approx(ref, rel=1e-8)
  v2 = oracle.quadrature_delta_single(spec, 1.5, QuadratureSpec(1e-12))
  assert abs(v2 - v1) / v1 < 1e-8


def test_quadrature_zero_rate():
  spec = MechanismSpec.subsampled_gaussian(1.0, 0.0, 1)
  assert oracle.quadrature_delta_single(spec, 1.0) == 0.0


def test_quadrature_spec_validation():
  for bad in (0.0, 0.1, -1.0):
    with pytest.raises(ValueError):
      QuadratureSpec(rel_tol=bad)
  with pytest.raises(ValueError):
    QuadratureSpec(max_subdivisions=0)


def test_convolution_brackets_gaussian_closed_form():
  spec = MechanismSpec.gaussian(1.0, 8)
  b = oracle.convolution_delta(spec, 1.0)
  truth = oracle.gaussian_exact_delta(1.0, 8, 1.0)
  assert b.lower <= truth <= b.upper and b.reliable


def test_convolution_single_contains_quadrature():
  spec = MechanismSpec.subsampled_gaussian(0.6, 1e-3, 1)
  b = oracle.convolution_delta(spec, 1.5)
  assert b.contains(oracle.quadrature_delta_single(spec, 1.5))


def test_convolution_reference_configuration():
  spec = MechanismSpec.subsampled_gaussian(0.6, 1e-3, 100)
  b = oracle.convolution_delta(spec, 1.5)
  # External PLD accountant value.
  assert b.contains(6.7935e-7) and b.reliable
  assert b.upper / b.lower < 1.2


def test_convolution_refinement_never_widens():
  spec = MechanismSpec.subsampled_gaussian(1.0, 0.05, 16)
  coarse = oracle.convolution_delta(spec, 0.5, GridSpec(points=2**12))
  fine = oracle.convolution_delta(spec, 0.5, GridSpec(points=2**13))
  assert fine.upper - fine.lower <= coarse.upper - coarse.lower
  assert fine.lower <= fine.upper


def test_convolution_monotone_in_k_and_eps():
  spec = MechanismSpec.subsampled_gaussian(1.0, 0.05, 8)
  grid = GridSpec(points=2**12)
  b8 = oracle.convolution_delta(spec, 0.5, grid)
  b9 = oracle.convolution_delta(spec.with_k(9), 0.5, grid)
  b8e = oracle.convolution_delta(spec, 0.7, grid)
  assert b8.lower <= b9.upper and b8e.lower <= b8.upper


def test_convolution_rejects_large_k():
  with pytest.raises(ValueError):
    oracle.convolution_delta(MechanismSpec.gaussian(1.0, 2**14 + 1), 1.0)


def test_grid_spec_validation():
  with pytest.raises(ValueError):
    GridSpec(step=-1.0)
  with pytest.raises(ValueError):
    GridSpec(points=8)
