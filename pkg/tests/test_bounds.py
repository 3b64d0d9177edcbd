"""Second-moment bounds for the simple and importance-sampling estimators."""

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evrdp import bounds
from evrdp import estimators
from evrdp import mechanisms
from evrdp import oracle
from evrdp.bounds import BoundMethod, RdpCurve
from evrdp.estimators import EstimatorConfig
from evrdp.mechanisms import MechanismSpec

REF = MechanismSpec.subsampled_gaussian(0.6, 1e-3, 100)


def _mp_log_mgf(sigma, q, lam):
  """log E_{t~P}[e^{lam y(t)}] by mpmath quadrature of the defining integral."""
  with mpmath.workdps(30):
    s, q = mpmath.mpf(sigma), mpmath.mpf(q)
    dens = lambda t: (1 - q) * mpmath.npdf(t, 0, s) + q * mpmath.npdf(t, 1, s)
    f = lambda t: (1 - q + q * mpmath.exp((2 * t - 1) / (2 * s**2)))**lam * dens(t)
    hi = lam + 1 + 40 * s
    return float(mpmath.log(mpmath.quad(f, [-40 * s, 0, 1, lam, lam + 1, hi])))


def test_smc_bound_matches_independent_evaluation():
  r = bounds.smc_moment_bound(REF, 1.5, 2.0)
  lam = r.lambda_star
  u = 2.0
  ref = (REF.k * _mp_log_mgf(0.6, 1e-3, lam) - 1.5 * lam + u * math.log(u)
         + lam * math.log(lam) - (u + lam) * math.log(u + lam))
  assert r.log_nu == pytest.approx(ref, rel=1e-9)
  assert r.nu == pytest.approx(6.28e-5, rel=1e-3) and lam == 4


def test_smc_bound_first_moment_dominates_delta():
  for spec, eps in [(REF, 1.5), (MechanismSpec.gaussian(1.0, 4), 2.0),
                    (MechanismSpec.subsampled_gaussian(1.0, 0.1, 1), 0.3)]:
    if spec.kind.value == "gaussian":
      truth = oracle.gaussian_exact_delta(spec.sigma, spec.k, eps)
    elif spec.k == 1:
      truth = oracle.quadrature_delta_single(spec, eps)
    else:
      truth = oracle.convolution_delta(spec, eps).upper
    assert bounds.smc_moment_bound(spec, eps, 1.0).nu >= truth


def test_smc_bound_dominates_empirical_second_moment():
  spec = MechanismSpec.subsampled_gaussian(1.0, 0.05, 20)
  est = estimators.smc_estimate(spec, 0.5, EstimatorConfig(m=10**6, seed=1))
  nu = bounds.smc_moment_bound(spec, 0.5, 2.0).nu
  se = math.sqrt(est.second_moment / est.m)
  assert nu >= est.second_moment - 4 * se


def test_smc_bound_caps_at_one():
  r = bounds.smc_moment_bound(MechanismSpec.gaussian(0.2, 50), 0.0, 2.0)
  assert r.nu == 1.0 and r.saturated


@settings(max_examples=30, deadline=None)
@given(u1=st.floats(1.0, 8.0), u2=st.floats(1.0, 8.0), eps=st.floats(0.0, 5.0))
def test_smc_bound_nonincreasing_in_order(u1, u2, eps):
  # (1 - e^{eps - Y})_+ <= 1, so higher moments are smaller; the bound at a
  # fixed lambda has the same monotonicity.
  lo, hi = min(u1, u2), max(u1, u2)
  spec = MechanismSpec.subsampled_gaussian(1.0, 0.01, 50)
  assert (bounds.smc_moment_bound(spec, eps, hi).log_nu
          <= bounds.smc_moment_bound(spec, eps, lo).log_nu + 1e-12)


def test_smc_bound_validation():
  with pytest.raises(ValueError):
    bounds.smc_moment_bound(REF, 1.5, 0.5)
  with pytest.raises(ValueError):
    bounds.smc_moment_bound(REF, math.nan)
  with pytest.raises(ValueError):
    bounds.smc_moment_bound(REF, 1.5, lambda_grid=[])
  with pytest.raises(ValueError):
    bounds.smc_moment_bound(REF, 1.5, lambda_grid=[0, 1])


def test_rdp_curve_reproduces_gaussian_mgf():
  spec = MechanismSpec.gaussian(2.0, 3)
  curve = RdpCurve.gaussian(2.0, 3)
  for lam in (1, 2, 5):
    exact = spec.k * mechanisms.log_mgf_single(spec.with_k(1), lam)
    assert bounds.log_mgf_bound_from_rdp(curve, lam) == pytest.approx(exact)
  a = bounds.smc_moment_bound(spec, 1.0, 2.0, curve=curve)
  b = bounds.smc_moment_bound(spec, 1.0, 2.0)
  assert a.log_nu == pytest.approx(b.log_nu, rel=1e-12)


def test_rdp_curve_from_mechanism_and_validation():
  curve = RdpCurve.from_mechanism(REF)
  assert curve(5) == pytest.approx(
      REF.k * mechanisms.log_mgf_single(REF, 4) / 4)
  with pytest.raises(ValueError):
    curve(1.0)
  with pytest.raises(ValueError):
    curve(2.5)
  assert RdpCurve.zero()(3.0) == 0.0
  assert bounds.mgf_bound_from_rdp(RdpCurve.gaussian(0.01), 100) == math.inf


@pytest.mark.parametrize("lam", [1, 3, 8])
def test_r_lambda_x_limits(lam):
  spec = MechanismSpec.subsampled_gaussian(0.8, 0.05)
  assert bounds.r_lambda_x(spec, lam, math.inf) == pytest.approx(
      math.exp(_mp_log_mgf(0.8, 0.05, lam)), rel=1e-9)
  x = np.linspace(-3, 3, 9)
  np.testing.assert_allclose(bounds.r_lambda_x(spec, 0, x),
                             mechanisms.mixture_cdf(spec, x), rtol=1e-13)
  r = bounds.r_lambda_x(spec, lam, x)
  assert np.all(np.diff(r) >= 0)


def test_js_bound_hypothesis_enforced():
  with pytest.raises(ValueError, match="1/sigma"):
    bounds.is_moment_bound_js(MechanismSpec.gaussian(1.0, 1), 1.0, 0.5)
  r = bounds.is_moment_bound_js(REF, 1.5, 9.544448884623478)
  assert r.method is BoundMethod.IS_JS and r.a == 1.0
  assert r.nu == pytest.approx(7.66e-3, rel=1e-2)


def test_js_bound_closed_form():
  theta = 4.0
  r = bounds.is_moment_bound_js(REF, 1.5, theta, nu_mc=1e-4)
  s2 = 0.36
  expected = (mechanisms.mp_theta(REF, theta)
              * ((1.5 / 1e-3 + 100) / 100) ** (-theta * s2)
              * math.exp(-theta / 2) * 1e-4)
  assert r.nu == pytest.approx(expected, rel=1e-12)


def test_max_and_holder_bounds():
  theta = 4.0
  mx = bounds.is_moment_bound_max(REF, 1.5, theta, 4)
  assert mx.method is BoundMethod.IS_MAX and mx.b == 1.0
  h = bounds.is_moment_bound_holder(REF, 1.5, theta)
  js = bounds.is_moment_bound_js(REF, 1.5, theta)
  assert h.log_nu <= min(mx.log_nu, js.log_nu) + 1e-12


def test_holder_interior_exponent_wins_below_js_range():
  # Below theta = 1/sigma^2 the js bound is unavailable and an interior a
  # beats the max bound.
  theta = 2.0
  h = bounds.is_moment_bound_holder(REF, 1.5, theta)
  mx = min((bounds.is_moment_bound_max(REF, 1.5, theta, lam)
            for lam in range(1, 17)), key=lambda r: r.log_nu)
  assert 1.0 < h.a < math.inf
  assert h.log_nu < mx.log_nu


def test_is_bounds_dominate_empirical_second_moment():
  theta = estimators.heuristic_theta(REF, 1.5)
  est = estimators.is_estimate(REF, 1.5, EstimatorConfig(
      method="is", m=10**5, seed=3))
  h = bounds.is_moment_bound_holder(REF, 1.5, theta)
  assert h.nu >= est.second_moment


def test_holder_sweep_and_optimal_theta():
  thetas = [2.0, 4.0, 6.0]
  sweep = bounds.holder_sweep(REF, 1.5, thetas)
  assert len(sweep) == 3
  theta, best = bounds.optimal_theta(REF, 1.5, thetas)
  assert best.log_nu == min(r.log_nu for r in sweep)
  assert theta == thetas[int(np.argmin([r.log_nu for r in sweep]))]


def test_is_bounds_reject_invalid():
  with pytest.raises(ValueError):
    bounds.is_moment_bound_holder(MechanismSpec.subsampled_gaussian(1, 0, 5),
                                  1.0, 2.0)
  with pytest.raises(ValueError):
    bounds.is_moment_bound_holder(REF, 1.5, -1.0)
  with pytest.raises(ValueError):
    bounds.is_moment_bound_holder(REF, 1.5, 2.0, a_grid=(1.0,))
  with pytest.raises(ValueError):
    bounds.is_moment_bound_holder(REF, 1.5, 2.0, a_grid=(0.5,))
