"""Estimate-verify-release: planning, the acceptance gate and the payload."""

import math

import pytest
from hypothesis import assume, given, settings, strategies as st

from evrdp import oracle
from evrdp import verifier
from evrdp.bounds import BoundMethod
from evrdp.estimators import EstimatorConfig, Method
from evrdp.mechanisms import MechanismSpec
from evrdp.verifier import EvrPlan, Infeasible, Rejected

# 0.4 (1/0.9 - 1/0.95) 1e-6 with mpmath.
DELTA_REF = 2.339181286549707732e-8


def _plan(delta_est=1e-6, tau=0.9, offset=DELTA_REF, m=1000, **kw):
  return EvrPlan(1.0, delta_est, tau, 0.95, offset, m, 1e-10,
                 EstimatorConfig(m=m), **kw)


def test_delta_offset_heuristic():
  assert verifier.delta_offset_heuristic(0.9, 0.95, 1e-6) == pytest.approx(
      DELTA_REF, rel=1e-14)
  assert verifier.delta_offset_heuristic(0.5, 1.0, 1e-5) == pytest.approx(
      4e-6, rel=1e-14)
  assert verifier.delta_offset_heuristic(0.9, 0.9 + 1e-12, 1e-6) < 1e-17


@pytest.mark.parametrize("tau,rho,d", [(0.9, 0.9, 1e-6), (1.0, 1.0, 1e-6),
                                       (0.95, 0.9, 1e-6), (0.5, 1.0, 0.0),
                                       (0.0, 0.5, 1e-6), (0.5, 1.5, 1e-6)])
def test_delta_offset_heuristic_rejects(tau, rho, d):
  with pytest.raises(ValueError):
    verifier.delta_offset_heuristic(tau, rho, d)


def test_plan_sample_size_reference():
  # ceil(200 ln 9e5) = ceil(2742.0300...) by mpmath; 2742 would break the
  # Bennett condition.
  m = verifier.plan_sample_size(1e-10, 1e-6, 0.9, 1e-6)
  assert m == 2743
  assert verifier.bennett_tail(m, 1e-10, 1e-6) <= 1e-6 / 0.9
  assert verifier.bennett_tail(2742, 1e-10, 1e-6) > 1e-6 / 0.9


def test_plan_sample_size_scaling():
  base = verifier.plan_sample_size(1e-8, 1e-6, 0.9, 1e-6)
  assert abs(verifier.plan_sample_size(0.5e-8, 1e-6, 0.9, 1e-6)
             - base / 2) <= 1
  assert abs(verifier.plan_sample_size(1e-8, 2e-6, 0.9, 1e-6)
             - base / 4) <= 1


def test_plan_sample_size_infeasible_and_invalid():
  assert verifier.plan_sample_size(1.0, 1e-12, 0.9, 1e-6) is Infeasible
  assert not Infeasible
  for args in [(0.0, 1e-6, 0.9, 1e-6), (1e-10, 0.0, 0.9, 1e-6),
               (1e-10, 1e-6, 0.9, 0.95), (1e-10, 1e-6, 0.9, 0.0)]:
    with pytest.raises(ValueError):
      verifier.plan_sample_size(*args)


@settings(max_examples=200, deadline=None)
@given(log_nu=st.floats(-30, 0), log_d=st.floats(-12, -1),
       tau=st.floats(0.05, 1.0), log_de=st.floats(-12, -0.1))
def test_bennett_condition_holds(log_nu, log_d, tau, log_de):
  nu, d, de = 10**log_nu, 10**log_d, 10**log_de
  assume(de < tau)
  m = verifier.plan_sample_size(nu, d, tau, de)
  if m is Infeasible:
    assert (2 * nu / d**2) * math.log(tau / de) > verifier.MAX_SAMPLES / 2
    return
  assert verifier.bennett_tail(m, nu, d) <= de / tau
  assert math.exp(-m * d * d / (2 * nu)) <= de / tau * (1 + 1e-12)
  # Minimality is resolvable only while exp() still separates m - 1 from m.
  if 1 < m < 2**40:
    assert verifier.bennett_tail(m - 1, nu, d) > de / tau


def test_threshold_example():
  plan = _plan()
  assert plan.threshold == pytest.approx(1.0877e-6, rel=1e-4)
  v = verifier.decide(plan, 5e-7)
  assert v.accepted and v.fp_bound == pytest.approx(1e-6 / 0.9)
  assert not verifier.decide(plan, plan.threshold).accepted


@settings(max_examples=200, deadline=None)
@given(delta_hat=st.floats(0, 2e-6), delta_est=st.floats(1e-7, 1e-5),
       tau=st.floats(0.1, 0.95))
def test_gate_soundness(delta_hat, delta_est, tau):
  plan = _plan(delta_est=delta_est, tau=tau, offset=0.01 * delta_est / tau)
  v = verifier.decide(plan, delta_hat)
  assert v.accepted == (delta_hat < delta_est / tau - plan.delta_offset)
  assert v.threshold == plan.threshold


@settings(max_examples=100, deadline=None)
@given(delta_hat=st.floats(0, 1e-5), d1=st.floats(1e-7, 1e-5),
       d2=st.floats(1e-7, 1e-5))
def test_monotone_safety(delta_hat, d1, d2):
  lo, hi = min(d1, d2), max(d1, d2)
  acc_lo = verifier.decide(_plan(delta_est=lo, offset=0.01 * lo), delta_hat)
  acc_hi = verifier.decide(_plan(delta_est=hi, offset=0.01 * hi), delta_hat)
  assert not (acc_lo.accepted and not acc_hi.accepted)


@pytest.mark.parametrize("kwargs", [
    dict(tau=0.0), dict(tau=1.2), dict(delta_est=0.0), dict(delta_est=1.0),
    dict(offset=-1.0), dict(offset=1.0), dict(nu_source="guess"),
])
def test_plan_invariants(kwargs):
  with pytest.raises(ValueError):
    _plan(**kwargs)


def test_zero_rate_is_always_accepted():
  spec = MechanismSpec.subsampled_gaussian(1.0, 0.0, 10)
  plan = verifier.build_plan(spec, 1.0, 1e-6, 0.9, estimator_method="smc",
                             nu=1e-20, seed=1)
  v = verifier.verify(spec, plan)
  assert v.accepted and v.delta_hat == 0.0 and v.heuristic_nu


def test_build_plan_defaults():
  spec = MechanismSpec.gaussian(1.0, 1)
  plan = verifier.build_plan(spec, 1.0, 0.2, 0.9, estimator_method="smc",
                             seed=3)
  assert plan.rho == pytest.approx(0.95)
  assert plan.delta_offset == pytest.approx(0.4 * (1 / 0.9 - 1 / 0.95) * 0.2)
  assert plan.bound.method is BoundMethod.SMC_RDP
  assert plan.estimator.m == plan.m and plan.nu_source == "analytic"
  assert math.exp(-plan.m * plan.delta_offset**2 / (2 * plan.nu)) <= 0.2 / 0.9


@pytest.mark.parametrize("eps", [0.5, 1.0, 1.5, 2.0, 2.5])
def test_build_plan_large_composition_fits_two_minutes(eps):
  spec = MechanismSpec.gaussian(70.0, 1200)
  delta = oracle.gaussian_exact_delta(70.0, 1200, eps)
  plan = verifier.build_plan(spec, eps, delta, 0.99, rho=0.995, seed=0)
  assert plan.feasible and plan.estimator.method is Method.IS
  # Samples a 10^7 samples/s verifier draws in two minutes.
  assert plan.m <= 120 * 10**7


def test_build_plan_saturated_nu_is_infeasible():
  spec = MechanismSpec.gaussian(0.2, 50)
  plan = verifier.build_plan(spec, 0.0, 1e-9, 0.9, estimator_method="smc",
                             seed=0)
  assert plan.nu == 1.0 and not plan.feasible and plan.m == 0
  with pytest.raises(ValueError):
    verifier.verify(spec, plan)


def test_build_plan_rejects_bad_inputs():
  spec = MechanismSpec.gaussian(1.0, 1)
  with pytest.raises(ValueError):
    verifier.build_plan(spec, 1.0, 1e-6, 0.9, delta_offset=1e-5, seed=0)
  with pytest.raises(ValueError):
    verifier.build_plan(spec, 1.0, 1e-6, 0.9, estimator_method="smc",
                        bound_method="is_js", seed=0)
  with pytest.raises(ValueError):
    verifier.build_plan(MechanismSpec.subsampled_gaussian(1.0, 0.0, 2), 1.0,
                        1e-6, 0.9, seed=0)


def test_run_evr_gates_payload():
  spec = MechanismSpec.gaussian(1.0, 1)
  calls = []

  def payload():
    calls.append(1)
    return 42

  # delta_Y(1) = 0.1269; an honest claim passes, a gross underclaim fails.
  ok = verifier.build_plan(spec, 1.0, 0.13, 0.9, estimator_method="smc",
                           nu=0.05, seed=5)
  assert verifier.run_evr(spec, ok, payload) == 42 and calls == [1]
  bad = verifier.build_plan(spec, 1.0, 0.01, 0.9, estimator_method="smc",
                            nu=0.05, seed=5)
  out = verifier.run_evr(spec, bad, payload)
  assert out is Rejected and verifier.is_rejected(out) and calls == [1]


def test_run_evr_payload_errors_pass_through():
  spec = MechanismSpec.gaussian(1.0, 1)
  ok = verifier.build_plan(spec, 1.0, 0.13, 0.9, estimator_method="smc",
                           nu=0.05, seed=5)

  def boom():
    raise RuntimeError("payload failed")

  with pytest.raises(RuntimeError):
    verifier.run_evr(spec, ok, boom)


def test_fresh_seed_differs():
  assert verifier.fresh_seed() != verifier.fresh_seed()
