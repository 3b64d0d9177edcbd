"""Command-line interface: payloads, schema, exit codes and determinism."""

import csv
import io
import json
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

from evrdp import cli
from evrdp import oracle

SCHEMA = json.loads(resources.files("evrdp").joinpath(
    "schema/manifest.schema.json").read_text())
SGM = ["--mechanism", "subsampled-gaussian", "--sigma", "1", "--q", "0.05"]
GAUSS = ["--mechanism", "gaussian", "--sigma", "1", "--k", "1"]


def _run(argv):
  out = io.StringIO()
  code = cli.main(argv, out)
  return code, out.getvalue()


def _lines(text):
  docs = [json.loads(line) for line in text.splitlines() if line.strip()]
  for d in docs:
    jsonschema.validate(d, SCHEMA)
  return docs


def test_oracle_gaussian_exact():
  code, text = _run(["oracle", "gaussian-exact", *GAUSS, "--eps", "0"])
  assert code == cli.EXIT_OK
  (doc,) = _lines(text)
  assert float(doc["result"]["delta"]) == pytest.approx(0.3829249, abs=1e-7)
  assert doc["command"].startswith("evrdp oracle")
  assert set(doc) == {"command", "parameters", "seed", "version",
                      "wall_time", "result"}


def test_oracle_quadrature_and_convolution():
  code, text = _run(["oracle", "quadrature", *SGM, "--k", "1", "--eps",
                     "0.5"])
  (quad,) = _lines(text)
  code2, text2 = _run(["oracle", "convolution", *SGM, "--k", "1", "--eps",
                       "0.5", "--points", "4096"])
  (conv,) = _lines(text2)
  assert code == code2 == cli.EXIT_OK
  r = conv["result"]
  assert float(r["lower"]) <= float(quad["result"]["delta"]) <= float(
      r["upper"])


def test_account_offline_is_deterministic():
  argv = ["account", "offline", *SGM, "--k", "5", "--eps", "0.5",
          "--samples", "2e4", "--seed", "3", "--oracle", "auto"]
  (a,) = _lines(_run(argv)[1])
  (b,) = _lines(_run(argv)[1])
  assert json.dumps(a["result"]) == json.dumps(b["result"])
  assert a["seed"] == 3 and "r_err" in a["result"]


def test_account_zero_compositions():
  code, text = _run(["account", "offline", "--mechanism", "gaussian",
                     "--sigma", "1", "--k", "0", "--eps", "1", "--samples",
                     "100"])
  (doc,) = _lines(text)
  assert code == cli.EXIT_OK and float(doc["result"]["delta"]) == 0.0


def test_account_inversion_and_resolution_exit():
  code, text = _run(["account", "offline", *GAUSS, "--delta", "0.05",
                     "--samples", "1e5"])
  (doc,) = _lines(text)
  assert code == cli.EXIT_OK
  r = doc["result"]
  assert float(r["delta"]) == pytest.approx(0.05, rel=1e-6)
  assert float(r["target_delta"]) == 0.05 and r["contributors"] >= 10
  code, _ = _run(["account", "offline", *GAUSS, "--delta", "0.9",
                  "--samples", "1e4"])
  assert code == cli.EXIT_RESOLUTION


def test_account_csv_column_order():
  code, text = _run(["account", "offline", *SGM, "--k", "3", "--eps", "0.5",
                     "--samples", "1e4", "--format", "csv"])
  assert code == cli.EXIT_OK
  rows = list(csv.reader(io.StringIO(text)))
  assert tuple(rows[0]) == cli.ACCOUNT_CSV_COLUMNS
  assert len(rows) == 2 and rows[1][0] == "3"


def test_account_online_streams_rows():
  code, text = _run(["account", "online", *SGM, "--k-max", "4", "--eps",
                     "0.5", "--samples", "2000", "--seed", "1"])
  docs = _lines(text)
  assert code == cli.EXIT_OK and len(docs) == 5
  assert [d["row"]["k"] for d in docs[:4]] == [1, 2, 3, 4]
  assert docs[-1]["result"] == {"steps": 4}


@pytest.mark.parametrize("samples", ["0", "2.5", "1e13", "abc", "-5"])
def test_samples_cap_and_parsing(samples):
  code, _ = _run(["account", "offline", *GAUSS, "--eps", "1", "--samples",
                  samples])
  assert code == cli.EXIT_USAGE


def test_parse_samples_accepts_scientific_notation():
  assert cli.parse_samples("1e7") == 10**7
  assert cli.parse_samples("1099511627776") == 2**40


@pytest.mark.parametrize("argv", [
    ["account", "offline", *GAUSS],
    ["account", "offline", *GAUSS, "--eps", "1", "--delta", "0.1"],
    ["account", "offline", "--mechanism", "laplace", "--sigma", "1",
     "--eps", "1"],
    ["account", "online", *SGM, "--eps", "1", "--estimator", "is",
     "--k-max", "3"],
    ["oracle", "gaussian-exact", *SGM, "--k", "1", "--eps", "1"],
    ["bound", "second-moment", "--method", "is-js", *GAUSS, "--eps", "1",
     "--theta", "0.5"],
    ["nonsense"],
])
def test_usage_errors_exit_2(argv):
  assert _run(argv)[0] == cli.EXIT_USAGE


def test_bound_smc_records_lambda_star():
  code, text = _run(["bound", "second-moment", "--method", "smc", *SGM,
                     "--k", "10", "--eps", "1", "--u", "2"])
  (doc,) = _lines(text)
  r = doc["result"]
  assert code == cli.EXIT_OK and float(r["nu"]) <= 1.0
  assert int(r["lambda_star"]) >= 1


def test_bound_holder_sweep():
  code, text = _run(["bound", "second-moment", "--method", "is-holder", *SGM,
                     "--k", "10", "--eps", "1", "--theta-grid", "1,2,3"])
  (doc,) = _lines(text)
  assert code == cli.EXIT_OK and float(doc["result"]["nu"]) > 0


def test_verify_accept_and_reject_exit_codes():
  base = ["verify", *GAUSS, "--eps", "1", "--tau", "0.9", "--estimator",
          "smc", "--nu", "0.05", "--seed", "5"]
  code, text = _run(base + ["--delta-est", "0.13"])
  (doc,) = _lines(text)
  assert code == cli.EXIT_OK and doc["result"]["accepted"] is True
  for key in ("delta_hat", "threshold", "m", "nu", "fp_bound"):
    assert key in doc["result"]
  code, text = _run(base + ["--delta-est", "0.01"])
  (doc,) = _lines(text)
  assert code == cli.EXIT_REJECT and doc["result"]["accepted"] is False


def test_verify_rejects_bad_plans():
  code = _run(["verify", *GAUSS, "--eps", "1", "--delta-est", "0.13",
               "--tau", "1.0", "--rho", "1.0", "--seed", "1"])[0]
  assert code == cli.EXIT_USAGE
  # Saturated SMC bound with a tiny offset: Bennett's m overflows.
  code = _run(["verify", "--mechanism", "gaussian", "--sigma", "0.2", "--k",
               "50", "--eps", "0", "--delta-est", "1e-9", "--tau", "0.9",
               "--estimator", "smc", "--seed", "1"])[0]
  assert code == cli.EXIT_USAGE


def test_verify_overestimate_is_accepted_across_seeds():
  truth = oracle.gaussian_exact_delta(1.0, 1, 1.0)
  accepts = sum(_run(["verify", *GAUSS, "--eps", "1", "--delta-est",
                      repr(2 * truth), "--tau", "0.9", "--seed", str(s)])[0]
                == cli.EXIT_OK for s in range(20))
  assert accepts >= 19


def test_module_entry_point():
  proc = subprocess.run([sys.executable, "-m", "evrdp", "oracle",
                         "gaussian-exact", *GAUSS, "--eps", "0"],
                        capture_output=True, text=True, check=False)
  assert proc.returncode == 0
  jsonschema.validate(json.loads(proc.stdout), SCHEMA)
