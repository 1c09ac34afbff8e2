"""Dense vector kernels and the seeded random generator shared by all modules.

Everything is float64.  Vectors are 1-d numpy arrays, matrices 2-d row-major.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "SeededRng",
    "as_vec",
    "correlate_valid",
    "correlate_full",
    "mat_vec",
    "vec_outer",
    "logistic",
    "sign",
    "rng_uniform",
    "check_finite",
    "derive_seed",
]


class SeededRng:
    """PCG64 generator keyed by a 64-bit seed.

    PCG64 streams are specified by numpy independent of platform, so the same
    seed yields the same draws everywhere.
    """

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, lo, hi, n):
        return rng_uniform(self, lo, hi, n)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def integers(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        return int(self.gen.integers(lo, hi + 1))

    def normal(self, size=None, scale=1.0):
        return self.gen.normal(0.0, scale, size)


def as_vec(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(-1)


def check_finite(x, what="value"):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite entries in {what}")
    return x


def correlate_valid(signal, weights) -> np.ndarray:
    """Sliding inner product: ``out[j] = sum_p weights[p] * signal[j + p]``."""
    s, w = as_vec(signal), as_vec(weights)
    n, k = s.size, w.size
    if k < 1 or k > n:
        raise ValueError(f"kernel length {k} incompatible with signal length {n}")
    # np.correlate swaps arguments when the kernel is longer; convolve does not.
    return np.convolve(s, w[::-1], mode="valid")


def correlate_full(signal, weights) -> np.ndarray:
    """Full sliding inner product with the signal zero padded by k-1 on each side.

    ``out[j] = sum_p weights[p] * signal[j + p - (k - 1)]``, length n + k - 1.
    ``correlate_full(delta, weights[::-1])`` is the input gradient of
    :func:`correlate_valid`.
    """
    s, w = as_vec(signal), as_vec(weights)
    if s.size < 1 or w.size < 1:
        raise ValueError("correlate_full needs non-empty inputs")
    return np.convolve(s, w[::-1], mode="full")


def mat_vec(a, m) -> np.ndarray:
    """Row vector times matrix, ``a @ m``."""
    a = as_vec(a)
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != a.size:
        raise ValueError(f"cannot multiply length-{a.size} vector by matrix {m.shape}")
    return a @ m


def vec_outer(a, b) -> np.ndarray:
    return np.outer(as_vec(a), as_vec(b))


def logistic(x):
    """1 / (1 + exp(-x)), written through tanh so it never overflows."""
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def sign(x):
    """Elementwise sign with sign(0) = 0."""
    return np.sign(np.asarray(x, dtype=np.float64))


def rng_uniform(rng: SeededRng, lo: float, hi: float, n: int) -> np.ndarray:
    if lo > hi:
        raise ValueError(f"empty interval [{lo}, {hi})")
    if n < 0:
        raise ValueError("negative draw count")
    return rng.gen.uniform(lo, hi, size=n) if hi > lo else np.full(n, float(lo))


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 64-bit child seed for ``(seed, *keys)``."""
    words = np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)
