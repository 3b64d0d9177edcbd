"""Command-line interface: accounting, verification, bounds and oracles.

Every command prints one JSON run manifest on stdout (or CSV rows for
``account`` with ``--format csv``). Floats are written as decimal strings
with 17 significant digits so they round-trip exactly. Exit codes: 0 success
or accept, 2 usage error or infeasible plan, 3 resolution failure, 4
verification reject.
"""

import argparse
import csv
import dataclasses
import decimal
import json
import logging
import math
import shlex
import sys
import time
from typing import Optional, Sequence

import numpy as np

import evrdp
from evrdp import accountant
from evrdp import bounds
from evrdp import mechanisms
from evrdp import oracle
from evrdp import verifier
from evrdp.estimators import EstimatorConfig, Method

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RESOLUTION = 3
EXIT_REJECT = 4

MAX_CLI_SAMPLES = 2**40
# Largest k for which ``--oracle auto`` runs the convolution oracle.
AUTO_CONVOLUTION_MAX_K = 1024

ACCOUNT_CSV_COLUMNS = ("k", "epsilon", "delta", "std_error", "m", "method",
                       "theta", "contributors", "oracle_delta",
                       "oracle_lower", "oracle_upper", "r_err", "runtime")

class UsageError(ValueError):
  """Invalid command-line input; exit code 2."""


def fmt(x):
  """Serializes a value for the manifest; floats become 17-digit strings."""
  if isinstance(x, (bool, np.bool_)) or x is None or isinstance(x, str):
    return bool(x) if isinstance(x, np.bool_) else x
  if isinstance(x, (int, np.integer)):
    return int(x)
  if isinstance(x, (float, np.floating)):
    x = float(x)
    if math.isnan(x):
      return "nan"
    if math.isinf(x):
      return "inf" if x > 0 else "-inf"
    return format(x, ".17g")
  if isinstance(x, dict):
    return {str(k): fmt(v) for k, v in x.items()}
  if isinstance(x, (list, tuple)):
    return [fmt(v) for v in x]
  if hasattr(x, "value"):  # enums
    return x.value
  raise TypeError(f"cannot serialize {type(x).__name__}")


def parse_samples(text: str) -> int:
  """Parses a sample count such as ``1e7``; must be an integer in [1, 2**40].

  Raises:
    argparse.ArgumentTypeError: On malformed, fractional or out-of-range
      counts.
  """
  try:
    d = decimal.Decimal(text)
  except decimal.InvalidOperation:
    raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
  if not d.is_finite() or d != d.to_integral_value():
    raise argparse.ArgumentTypeError(f"samples must be an integer: {text!r}")
  n = int(d)
  if n < 1:
    raise argparse.ArgumentTypeError(f"samples must be >= 1, got {n}")
  if n > MAX_CLI_SAMPLES:
    raise argparse.ArgumentTypeError(
        f"samples {n} exceeds the cap 2**40 = {MAX_CLI_SAMPLES}")
  return n


def _finite(text: str) -> float:
  try:
    v = float(text)
  except ValueError:
    raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
  if not math.isfinite(v):
    raise argparse.ArgumentTypeError(f"value must be finite: {text!r}")
  return v


def _float_list(text: str) -> list:
  return [_finite(t) for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list:
  out = []
  for t in text.split(","):
    if t.strip():
      v = _finite(t)
      if v != int(v):
        raise argparse.ArgumentTypeError(f"not an integer: {t!r}")
      out.append(int(v))
  return out


def _seed(text: str) -> int:
  try:
    v = int(text, 0)
  except ValueError:
    raise argparse.ArgumentTypeError(f"seed must be an integer: {text!r}")
  if v < 0:
    raise argparse.ArgumentTypeError(f"seed must be >= 0, got {v}")
  return v


def _add_mechanism(p):
  p.add_argument("--mechanism", choices=("gaussian", "subsampled-gaussian"),
                 default="subsampled-gaussian")
  p.add_argument("--sigma", type=_finite, required=True)
  p.add_argument("--q", type=_finite, default=None,
                 help="subsampling rate (subsampled-gaussian only)")
  p.add_argument("--k", type=int, default=1)


def _add_runtime(p):
  p.add_argument("--threads", type=int, default=None,
                 help="worker threads (default: $EVRDP_THREADS or all cores)")
  p.add_argument("--chunk-size", type=int, default=None)


def _spec(args, k=None) -> mechanisms.MechanismSpec:
  k = getattr(args, "k", 1) if k is None else k
  if args.mechanism == "gaussian":
    if args.q not in (None, 1.0):
      raise UsageError("--q applies to subsampled-gaussian only")
    return mechanisms.MechanismSpec.gaussian(args.sigma, k)
  if args.q is None:
    raise UsageError("subsampled-gaussian needs --q")
  return mechanisms.MechanismSpec.subsampled_gaussian(args.sigma, args.q, k)


def _config(args, method=None, m=None, seed=None) -> EstimatorConfig:
  extra = {}
  if args.chunk_size is not None:
    extra["chunk_size"] = args.chunk_size
  method = Method(method or args.estimator)
  theta = getattr(args, "theta", None)
  return EstimatorConfig(
      method=method, m=args.samples if m is None else m,
      seed=args.seed if seed is None else seed,
      theta_override=theta if method is Method.IS else None,
      threads=args.threads, **extra)


def _oracle_delta(spec, epsilon):
  """Applicable ground truth: exact for Gaussian, quadrature or convolution."""
  if spec.kind is mechanisms.MechanismKind.GAUSSIAN:
    v = oracle.gaussian_exact_delta(spec.sigma, spec.k, epsilon)
    return {"oracle": "gaussian-exact", "oracle_delta": v}
  if spec.k == 1 or spec.q == 0.0:
    v = oracle.quadrature_delta_single(spec, epsilon)
    return {"oracle": "quadrature", "oracle_delta": v}
  if spec.k <= AUTO_CONVOLUTION_MAX_K:
    b = oracle.convolution_delta(spec, epsilon)
    return {"oracle": "convolution", "oracle_delta": 0.5 * (b.lower + b.upper),
            "oracle_lower": b.lower, "oracle_upper": b.upper,
            "oracle_reliable": b.reliable}
  return None


def _with_r_err(row, delta, oracle_info):
  if oracle_info is None:
    return row
  row.update(oracle_info)
  truth = oracle_info["oracle_delta"]
  row["r_err"] = (accountant.relative_error(delta, truth) if truth > 0
                  else (0.0 if delta == 0 else math.inf))
  return row


def _delta_row(est, k):
  return {"k": k, "epsilon": est.epsilon, "delta": est.value,
          "std_error": est.std_error, "second_moment": est.second_moment,
          "m": est.m, "method": est.method, "theta": est.theta}


def _eps_row(res, k):
  return {"k": k, "epsilon": res.epsilon, "delta": res.achieved_delta,
          "target_delta": res.target_delta, "contributors": res.contributors,
          "m": res.m, "method": res.method, "theta": res.theta}


def _account_offline(args):
  spec = _spec(args)
  config = _config(args)
  t0 = time.perf_counter()
  if args.eps is not None:
    q = accountant.AccountantQuery("delta_of_eps", args.eps, spec, config)
    est = accountant.delta_of_eps(q)
    row = _delta_row(est, spec.k)
  else:
    q = accountant.AccountantQuery("eps_of_delta", args.delta, spec, config)
    res = accountant.eps_of_delta(q)
    row = _eps_row(res, spec.k)
  row["runtime"] = time.perf_counter() - t0
  if args.oracle == "auto":
    _with_r_err(row, row["delta"], _oracle_delta(spec, row["epsilon"]))
  return [row]


def _account_online(args):
  if Method(args.estimator) is not Method.SMC:
    raise UsageError("online accounting supports --estimator smc only")
  if args.k_max is None or args.k_max < 1:
    raise UsageError("online accounting needs --k-max >= 1")
  spec = _spec(args, k=1)
  state = accountant.online_init(spec, args.samples, args.seed,
                                 chunk_size=args.chunk_size
                                 or accountant.sampling.DEFAULT_CHUNK_SIZE,
                                 threads=args.threads)
  t0 = time.perf_counter()
  for k in range(1, args.k_max + 1):
    state = accountant.online_step(state, spec.sigma, spec.q)
    if args.eps is not None:
      row = _delta_row(accountant.online_read(state, epsilon=args.eps), k)
    else:
      row = _eps_row(accountant.online_read(state, delta=args.delta), k)
    row["runtime"] = time.perf_counter() - t0
    if args.oracle == "auto" and (spec.kind is mechanisms.MechanismKind.GAUSSIAN
                                  or k == 1):
      _with_r_err(row, row["delta"], _oracle_delta(spec.with_k(k),
                                                   row["epsilon"]))
    yield row


def _emit_csv(rows, out):
  w = csv.writer(out, lineterminator="\n")
  w.writerow(ACCOUNT_CSV_COLUMNS)
  for row in rows:
    w.writerow(["" if row.get(c) is None else fmt(row.get(c))
                for c in ACCOUNT_CSV_COLUMNS])
    out.flush()


def _manifest(args, argv, params, result, seed, wall):
  return {"command": "evrdp " + shlex.join(argv), "parameters": fmt(params),
          "seed": seed, "version": evrdp.__version__,
          "wall_time": fmt(wall), "result": fmt(result)}


def _params(args):
  skip = {"func", "command", "subcommand"}
  return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def cmd_account(args, argv, out):
  """Runs ``account offline`` or ``account online``."""
  if (args.eps is None) == (args.delta is None):
    raise UsageError("give exactly one of --eps and --delta")
  t0 = time.perf_counter()
  if args.mode == "offline":
    rows = _account_offline(args)
    if args.format == "csv":
      _emit_csv(rows, out)
    else:
      row = dict(rows[0])
      runtime = row.pop("runtime")
      m = _manifest(args, argv, _params(args), row, args.seed,
                    time.perf_counter() - t0)
      m["runtime"] = fmt(runtime)
      out.write(json.dumps(m) + "\n")
    return EXIT_OK
  rows = _account_online(args)
  if args.format == "csv":
    _emit_csv(rows, out)
    return EXIT_OK
  # Line-delimited JSON: one row per step as it completes, then a manifest.
  n = 0
  for row in rows:
    runtime = row.pop("runtime")
    out.write(json.dumps({"row": fmt(row), "runtime": fmt(runtime)}) + "\n")
    out.flush()
    n += 1
  out.write(json.dumps(_manifest(args, argv, _params(args), {"steps": n},
                                 args.seed, time.perf_counter() - t0)) + "\n")
  return EXIT_OK


def cmd_verify(args, argv, out):
  """Builds a plan, runs the verifier and reports the verdict."""
  spec = _spec(args)
  t0 = time.perf_counter()
  nu = None if args.nu == "analytic" else _finite(args.nu)
  if nu is not None and not nu > 0:
    raise UsageError("--nu must be positive")
  rho = args.rho
  tau = args.tau
  if args.offset is None:
    r = 0.5 * (1.0 + tau) if rho is None else rho
    if not tau < r:
      raise UsageError("tau must be < rho for the heuristic offset")
  plan = verifier.build_plan(
      spec, args.eps, args.delta_est, tau, rho=rho,
      bound_method=args.bound_method, estimator_method=args.estimator,
      seed=args.seed, nu=nu, delta_offset=args.offset, theta=args.theta,
      chunk_size=args.chunk_size, threads=args.threads)
  if not plan.feasible:
    raise UsageError("plan is infeasible: Bennett's sample size exceeds "
                     "2**63 - 1")
  if plan.m > MAX_CLI_SAMPLES:
    raise UsageError(f"plan needs m = {plan.m} samples, above the cap 2**40")
  verdict = verifier.verify(spec, plan)
  result = {"accepted": verdict.accepted, "delta_hat": verdict.delta_hat,
            "threshold": verdict.threshold, "m": plan.m, "nu": plan.nu,
            "nu_source": plan.nu_source, "heuristic_nu": verdict.heuristic_nu,
            "fp_bound": verdict.fp_bound, "delta_offset": plan.delta_offset,
            "tau": plan.tau, "rho": plan.rho, "epsilon": plan.epsilon,
            "delta_est": plan.delta_est, "method": plan.estimator.method,
            "theta": plan.estimator.theta_override,
            "seed": plan.estimator.seed}
  out.write(json.dumps(_manifest(args, argv, _params(args), result,
                                 plan.estimator.seed,
                                 time.perf_counter() - t0)) + "\n")
  return EXIT_OK if verdict.accepted else EXIT_REJECT


_BOUND_METHODS = {"smc": bounds.BoundMethod.SMC_RDP,
                  "is-js": bounds.BoundMethod.IS_JS,
                  "is-max": bounds.BoundMethod.IS_MAX,
                  "is-holder": bounds.BoundMethod.IS_HOLDER}


def _bound_dict(r):
  return {f.name: getattr(r, f.name) for f in dataclasses.fields(r)}


def cmd_bound(args, argv, out):
  """Evaluates a second-moment bound nu."""
  spec = _spec(args)
  t0 = time.perf_counter()
  method = _BOUND_METHODS[args.method]
  lam_grid = args.lambda_grid or list(bounds.DEFAULT_LAMBDA_GRID)
  extra = {}
  if method is bounds.BoundMethod.SMC_RDP:
    r = bounds.smc_moment_bound(spec, args.eps, args.u, lam_grid)
  else:
    if args.theta is None and not args.theta_grid:
      raise UsageError(f"--method {args.method} needs --theta or --theta-grid")
    if args.theta_grid:
      thetas = args.theta_grid
      if method is not bounds.BoundMethod.IS_HOLDER:
        raise UsageError("--theta-grid applies to --method is-holder only")
      theta, r = bounds.optimal_theta(spec, args.eps, thetas,
                                      lambda_grid=lam_grid)
      extra["theta_grid"] = thetas
    else:
      theta = args.theta
      if method is bounds.BoundMethod.IS_JS:
        r = bounds.is_moment_bound_js(spec, args.eps, theta,
                                      lambda_grid=lam_grid)
      elif method is bounds.BoundMethod.IS_MAX:
        r = min((bounds.is_moment_bound_max(spec, args.eps, theta, lam)
                 for lam in lam_grid), key=lambda b: b.log_nu)
      else:
        r = bounds.is_moment_bound_holder(spec, args.eps, theta,
                                          lambda_grid=lam_grid)
  result = _bound_dict(r)
  result.update(extra)
  out.write(json.dumps(_manifest(args, argv, _params(args), result, None,
                                 time.perf_counter() - t0)) + "\n")
  return EXIT_OK


def cmd_oracle(args, argv, out):
  """Evaluates a ground-truth oracle."""
  t0 = time.perf_counter()
  if args.kind == "gaussian-exact":
    spec = _spec(args)
    if spec.kind is not mechanisms.MechanismKind.GAUSSIAN:
      raise ValueError("gaussian-exact needs --mechanism gaussian")
    result = {"delta": oracle.gaussian_exact_delta(args.sigma, args.k,
                                                   args.eps),
              "log_delta": oracle.gaussian_exact_log_delta(args.sigma, args.k,
                                                           args.eps)}
  elif args.kind == "quadrature":
    quad = oracle.QuadratureSpec(rel_tol=args.rel_tol)
    result = {"delta": oracle.quadrature_delta_single(_spec(args), args.eps,
                                                      quad)}
  else:
    grid = oracle.GridSpec(points=args.points)
    b = oracle.convolution_delta(_spec(args), args.eps, grid)
    result = {"lower": b.lower, "upper": b.upper, "spill": b.spill,
              "reliable": b.reliable, "step": b.step}
  out.write(json.dumps(_manifest(args, argv, _params(args), result, None,
                                 time.perf_counter() - t0)) + "\n")
  return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
  parser = argparse.ArgumentParser(
      prog="evrdp", description="Monte Carlo privacy accounting and "
      "estimate-verify-release verification.")
  parser.add_argument("-v", "--verbose", action="store_true",
                      help="log progress to stderr")
  sub = parser.add_subparsers(dest="command", required=True)

  acc = sub.add_parser("account", help="estimate delta(eps) or eps(delta)")
  acc.add_argument("mode", choices=("offline", "online"))
  _add_mechanism(acc)
  acc.add_argument("--k-max", type=int, default=None,
                   help="number of steps for online mode")
  target = acc.add_mutually_exclusive_group()
  target.add_argument("--eps", type=_finite)
  target.add_argument("--delta", type=_finite)
  acc.add_argument("--estimator", choices=("smc", "is"), default="smc")
  acc.add_argument("--samples", type=parse_samples, default=10**6)
  acc.add_argument("--seed", type=_seed, default=0)
  acc.add_argument("--theta", type=_finite, default=None)
  acc.add_argument("--format", choices=("json", "csv"), default="json")
  acc.add_argument("--oracle", choices=("none", "auto"), default="none")
  _add_runtime(acc)
  acc.set_defaults(func=cmd_account)

  ver = sub.add_parser("verify", help="estimate-verify-release gate")
  _add_mechanism(ver)
  ver.add_argument("--eps", type=_finite, required=True)
  ver.add_argument("--delta-est", type=_finite, required=True)
  ver.add_argument("--tau", type=_finite, required=True)
  ver.add_argument("--rho", type=_finite, default=None)
  ver.add_argument("--offset", type=_finite, default=None,
                   help="Delta; default is the heuristic")
  ver.add_argument("--nu", default="analytic",
                   help="'analytic' or an empirical second-moment value")
  ver.add_argument("--bound-method", choices=[m.value for m in
                                              bounds.BoundMethod],
                   default=None)
  ver.add_argument("--estimator", choices=("smc", "is"), default="is")
  ver.add_argument("--theta", type=_finite, default=None)
  ver.add_argument("--seed", type=_seed, default=None,
                   help="verifier seed; omitted draws a fresh one")
  _add_runtime(ver)
  ver.set_defaults(func=cmd_verify)

  bnd = sub.add_parser("bound", help="second-moment bounds")
  bnd.add_argument("what", choices=("second-moment",))
  bnd.add_argument("--method", choices=tuple(_BOUND_METHODS), required=True)
  _add_mechanism(bnd)
  bnd.add_argument("--eps", type=_finite, required=True)
  bnd.add_argument("--u", type=_finite, default=2.0)
  bnd.add_argument("--theta", type=_finite, default=None)
  bnd.add_argument("--theta-grid", type=_float_list, default=None)
  bnd.add_argument("--lambda-grid", type=_int_list, default=None)
  bnd.set_defaults(func=cmd_bound)

  orc = sub.add_parser("oracle", help="ground-truth delta")
  orc.add_argument("kind", choices=("gaussian-exact", "quadrature",
                                    "convolution"))
  _add_mechanism(orc)
  orc.add_argument("--eps", type=_finite, required=True)
  orc.add_argument("--rel-tol", type=_finite, default=1e-10)
  orc.add_argument("--points", type=int, default=2**15)
  orc.set_defaults(func=cmd_oracle)
  return parser


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
  """Entry point; returns the process exit code."""
  argv = list(sys.argv[1:] if argv is None else argv)
  out = sys.stdout if out is None else out
  parser = build_parser()
  try:
    args = parser.parse_args(argv)
  except SystemExit as e:
    return int(e.code or 0)
  logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                      stream=sys.stderr, format="%(levelname)s %(message)s")
  try:
    return args.func(args, argv, out)
  except accountant.TargetBelowResolution as e:
    print(f"evrdp: target below resolution: {e} (floor {e.floor:.17g})",
          file=sys.stderr)
    return EXIT_RESOLUTION
  except (oracle.QuadratureFailure, bounds.QuadratureError) as e:
    print(f"evrdp: numerical resolution failure: {e}", file=sys.stderr)
    return EXIT_RESOLUTION
  except ValueError as e:
    print(f"evrdp: {e}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
  sys.exit(main())
