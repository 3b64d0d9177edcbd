"""Counter-based random streams addressed by (seed, step, path).

Every base draw is a pure function of ``(key, path, step, stream_tag)``: the
Philox4x32-10 block cipher maps that 128-bit counter to 128 random bits. Any
chunking or thread schedule therefore reproduces the same draws bit for bit.
"""

import math

import numba
import numpy as np

# Stream tags occupy the last counter word.
BASE_STREAM = 0
INDEX_STREAM = 1

_MASK32 = np.uint64(0xFFFFFFFF)
_MASK53 = np.uint64((1 << 53) - 1)
_TWO_M53 = 2.0**-53

_jit = numba.njit(nogil=True, cache=True, error_model="numpy")


def derive_key(seed: int) -> tuple[np.uint64, np.uint64]:
  """Derives the 64-bit Philox key for a user seed.

  Args:
    seed: Any Python integer; reduced modulo 2**64.

  Returns:
    The two 32-bit key words, each held in a ``np.uint64``.
  """
  words = np.random.SeedSequence(int(seed) % 2**64).generate_state(2, np.uint32)
  return np.uint64(words[0]), np.uint64(words[1])


@numba.njit(inline="always", cache=True)
def _philox4x32(c0, c1, c2, c3, k0, k1):
  # 32-bit lanes are carried in uint64 so the multiplies vectorize.
  for _ in range(10):
    p0 = c0 * np.uint64(0xD2511F53)
    p1 = c2 * np.uint64(0xCD9E8D57)
    n0 = (p1 >> np.uint64(32)) ^ c1 ^ k0
    n2 = (p0 >> np.uint64(32)) ^ c3 ^ k1
    c1 = p1 & _MASK32
    c3 = p0 & _MASK32
    c0 = n0
    c2 = n2
    k0 = (k0 + np.uint64(0x9E3779B9)) & _MASK32
    k1 = (k1 + np.uint64(0xBB67AE85)) & _MASK32
  return c0, c1, c2, c3


@_jit
def philox_block(c0, c1, c2, c3, k0, k1):
  """Single Philox4x32-10 block, exposed for known-answer tests."""
  return _philox4x32(
      np.uint64(c0), np.uint64(c1), np.uint64(c2), np.uint64(c3),
      np.uint64(k0), np.uint64(k1))


@_jit
def _fill(start, step, tag, k0, k1, uniform, bits):
  """Fills one open-interval uniform and one 64-bit word per path."""
  s = np.uint64(step)
  g = np.uint64(tag)
  for i in range(uniform.shape[0]):
    c = np.uint64(start + i)
    a, b, c2, d = _philox4x32(c & _MASK32, c >> np.uint64(32), s, g, k0, k1)
    w = ((a << np.uint64(21)) ^ (b >> np.uint64(11))) & _MASK53
    uniform[i] = (np.int64(w) + 0.5) * _TWO_M53
    bits[i] = (c2 << np.uint64(32)) | d


@_jit
def _central_ppf(u, z):
  # Central branch of Wichura's AS241, written branch-free so it vectorizes;
  # lanes outside the central region are overwritten by ``_tail_ppf``.
  for i in range(u.shape[0]):
    q = u[i] - 0.5
    r = 0.180625 - q * q
    num = (((((((2.5090809287301226727e+3 * r
                 + 3.3430575583588128105e+4) * r
                + 6.7265770927008700853e+4) * r
               + 4.5921953931549871457e+4) * r
              + 1.3731693765509461125e+4) * r
             + 1.9715909503065514427e+3) * r
            + 1.3314166789178437745e+2) * r
           + 3.3871328727963666080e+0) * q
    den = (((((((5.2264952788528545610e+3 * r
                 + 2.8729085735721942674e+4) * r
                + 3.9307895800092710610e+4) * r
               + 2.1213794301586595867e+4) * r
              + 5.3941960214247511077e+3) * r
             + 6.8718700749205790830e+2) * r
            + 4.2313330701600911252e+1) * r
           + 1.0)
    z[i] = num / den


@_jit
def _tail_ppf(u, z, scratch):
  n = 0
  for i in range(u.shape[0]):
    scratch[n] = i
    n += abs(u[i] - 0.5) > 0.425
  for j in range(n):
    i = scratch[j]
    p = u[i]
    q = p - 0.5
    r = math.sqrt(-math.log(p if q < 0.0 else 1.0 - p))
    if r <= 5.0:
      r -= 1.6
      num = (((((((7.7454501427834140764e-4 * r
                   + 2.2723844989269184583e-2) * r
                  + 2.4178072517745061177e-1) * r
                 + 1.2704582524523683826e+0) * r
                + 3.6478483247632046050e+0) * r
               + 5.7694972214606914055e+0) * r
              + 4.6303378461565452959e+0) * r
             + 1.4234371107496835773e+0)
      den = (((((((1.0507500716444168432e-9 * r
                   + 5.4759380849953449460e-4) * r
                  + 1.5198666563616457197e-2) * r
                 + 1.4810397642748007459e-1) * r
                + 6.8976733498510000455e-1) * r
               + 1.6763848301838038494e+0) * r
              + 2.0531916266377588219e+0) * r
             + 1.0)
    else:
      r -= 5.0
      num = (((((((2.0103343992922881327e-7 * r
                   + 2.7115555687434875782e-5) * r
                  + 1.2426609473880784386e-3) * r
                 + 2.6532189526576123093e-2) * r
                + 2.9656057182850489123e-1) * r
               + 1.7848265399172913358e+0) * r
              + 5.4637849111641143699e+0) * r
             + 6.6579046435011037772e+0)
      den = (((((((2.0442631033899397856e-15 * r
                   + 1.4215117583164458887e-7) * r
                  + 1.8463183175100546818e-5) * r
                 + 7.8686913114561325910e-4) * r
                + 1.4875361290850614853e-2) * r
               + 1.3692988092273580531e-1) * r
              + 5.9983220655588793769e-1) * r
             + 1.0)
    x = num / den
    z[i] = -x if q < 0.0 else x


class DrawBuffer:
  """Reusable scratch arrays for one chunk of paths."""

  def __init__(self, n: int):
    self.uniform = np.empty(n)
    self.normal = np.empty(n)
    self.bits = np.empty(n, dtype=np.uint64)
    self.scratch = np.empty(n, dtype=np.int64)

  def view(self, n: int):
    return (self.uniform[:n], self.normal[:n], self.bits[:n],
            self.scratch[:n])


def base_draws(key, step: int, start: int, n: int, buf: DrawBuffer):
  """Standard normals and component words for paths ``start..start+n-1``.

  Args:
    key: Pair returned by ``derive_key``.
    step: Composition step (1-based); selects the substream.
    start: Index of the first path.
    n: Number of paths.
    buf: Scratch buffer with capacity at least ``n``.

  Returns:
    ``(normal, bits)`` views into ``buf``: standard normal draws and 64-bit
    words used for the mixture-component coin.
  """
  uniform, normal, bits, scratch = buf.view(n)
  _fill(start, step, BASE_STREAM, key[0], key[1], uniform, bits)
  _central_ppf(uniform, normal)
  _tail_ppf(uniform, normal, scratch)
  return normal, bits


def index_draws(key, start: int, n: int, k: int) -> np.ndarray:
  """Uniform coordinate indices in ``[0, k)`` for paths ``start..start+n-1``."""
  uniform = np.empty(n)
  bits = np.empty(n, dtype=np.uint64)
  _fill(start, 0, INDEX_STREAM, key[0], key[1], uniform, bits)
  return np.minimum((uniform * k).astype(np.int64), k - 1)


def coin_threshold(p: float):
  """Threshold on 64-bit words so that ``bits < threshold`` has probability p.

  Returns None when p >= 1, meaning the coin always lands heads.
  """
  if p >= 1.0:
    return None
  if p <= 0.0:
    return np.uint64(0)
  return np.uint64(min(int(p * 2.0**64), 2**64 - 1))
