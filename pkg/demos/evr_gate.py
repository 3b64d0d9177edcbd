"""Estimate-verify-release: a claimed (eps, delta) gates a payload.

An honest claim passes the randomized verifier and the payload runs; an
underclaimed delta is caught and the payload never executes. The plan's
sample size comes from Bennett's inequality with an analytic second-moment
bound.

    python demos/evr_gate.py
"""

from evrdp import oracle
from evrdp import verifier
from evrdp.mechanisms import MechanismSpec


def release():
  print("    payload executed: releasing the trained model")
  return "model"


def main():
  spec = MechanismSpec.gaussian(2.0, 8)
  eps = 2.0
  truth = oracle.gaussian_exact_delta(2.0, 8, eps)
  print(f"true delta at eps={eps}: {truth:.4e}")

  for label, claim in (("honest claim", truth), ("underclaim", 0.2 * truth)):
    plan = verifier.build_plan(spec, eps, claim, tau=0.9, seed=3)
    print(f"{label}: delta_est={claim:.4e} m={plan.m} nu={plan.nu:.3e} "
          f"({plan.bound.method.value}) threshold={plan.threshold:.4e}")
    out = verifier.run_evr(spec, plan, release)
    if verifier.is_rejected(out):
      print("    rejected; payload not run")
    print(f"    false-positive bound delta_est/tau = {plan.fp_bound:.4e}")


if __name__ == "__main__":
  main()
