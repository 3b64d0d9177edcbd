"""Online accounting: one fresh draw per path per step, reads in between.

Tracks eps(delta = 1e-4) for a DP-SGD run (sigma = 1, q = 0.01) over 1000
steps without resampling earlier steps, then checks that the final state
equals a from-scratch replay bit for bit.

    python demos/online_accounting.py
"""

import time

import numpy as np

from evrdp import accountant
from evrdp.mechanisms import MechanismSpec


def main():
  spec = MechanismSpec.subsampled_gaussian(1.0, 0.01)
  m, seed = 200_000, 5
  state = accountant.online_init(spec, m, seed)
  t0 = time.perf_counter()
  for k in range(1, 1001):
    state = accountant.online_step(state, 1.0, 0.01)
    if k in (1, 10, 100, 250, 500, 1000):
      try:
        res = accountant.online_read(state, delta=1e-4)
        print(f"k={k:5d}  eps={res.epsilon:.4f}  "
              f"contributors={res.contributors}")
      except accountant.TargetBelowResolution as e:
        print(f"k={k:5d}  below resolution (floor {e.floor:.2e})")
  print(f"1000 online steps: {time.perf_counter() - t0:.1f}s")

  replay = accountant.offline_values(state.history, m, seed)
  print("replay identical:", bool(np.array_equal(replay, state.sums)))


if __name__ == "__main__":
  main()
