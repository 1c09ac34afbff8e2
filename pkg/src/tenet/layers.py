"""The four TeNet layers: forward passes with cached state and exact backward passes.

Each layer keeps its parameters as float64 arrays in ``params`` (name -> array)
so that training, gradient checking and persistence can treat every layer the
same way.  ``backward`` returns a ``(grads, delta_in)`` pair where ``grads`` has
the same keys and shapes as ``params`` and ``delta_in`` is dJ/d(input).
"""

from __future__ import annotations

import numpy as np

from tenet.numerics import SeededRng, as_vec, logistic, rng_uniform

POOL = 2


def _check_len(a, n, what):
    if a.size != n:
        raise ValueError(f"{what}: expected length {n}, got {a.size}")


class TemporalEmbeddingLayer:
    """Per-position weighted sum of each element and its neighbours.

    ``z[j] = sum_o w[o][j] * a[j + o] + b[j]`` for offsets ``o`` in
    ``-d_te .. d_te`` (row ``o + d_te`` of the weight array).  Entries whose
    neighbour ``j + o`` falls outside the series are masked to zero forever.
    Offset +1 routes ``a[j+1]`` into ``z[j]``; this is the shift-mask matrix the
    model labels "left", offset -1 is its transpose.
    """

    def __init__(self, d: int, d_te: int = 1, init: str = "ones", trainable: bool = True):
        if d < 1 or d_te < 0:
            raise ValueError("need d >= 1 and d_te >= 0")
        self.d, self.d_te = d, d_te
        self.offsets = np.arange(-d_te, d_te + 1)
        pos = np.arange(d)
        self.mask = np.array(
            [((pos + o >= 0) & (pos + o < d)).astype(np.float64) for o in self.offsets]
        )
        if init == "ones":
            w = self.mask.copy()
        elif init == "identity":
            w = np.zeros_like(self.mask)
            w[d_te] = 1.0
        else:
            raise ValueError(f"unknown temporal embedding init {init!r}")
        self.params = {"w": w, "b": np.zeros(d)}
        self.trainable = trainable
        # gather index into the input zero-padded by d_te on both sides
        self._gather = pos[None, :] + self.offsets[:, None] + d_te

    @property
    def n_offsets(self):
        return 2 * self.d_te + 1

    def offset_weights(self, o: int) -> np.ndarray:
        return self.params["w"][o + self.d_te]

    def shifted(self, a: np.ndarray) -> np.ndarray:
        """Row ``o`` holds ``a[j + o]`` at column ``j``, zero where out of range.

        Leading batch dimensions of ``a`` are kept.
        """
        pad = np.zeros(a.shape[:-1] + (self.d + 2 * self.d_te,))
        pad[..., self.d_te : self.d_te + self.d] = a
        return pad[..., self._gather]

    def forward(self, a) -> np.ndarray:
        a = as_vec(a)
        _check_len(a, self.d, "temporal embedding input")
        self._a_shift = self.shifted(a)
        return (self.params["w"] * self._a_shift).sum(axis=0) + self.params["b"]

    def forward_batch(self, A: np.ndarray) -> np.ndarray:
        return (self.params["w"] * self.shifted(A)).sum(axis=-2) + self.params["b"]

    def backward(self, a, delta) -> tuple[dict, np.ndarray]:
        a, delta = as_vec(a), as_vec(delta)
        _check_len(a, self.d, "temporal embedding input")
        _check_len(delta, self.d, "temporal embedding delta")
        a_shift = self.shifted(a)
        grads = {"w": delta[None, :] * a_shift * self.mask, "b": delta.copy()}
        # dJ/da[m] = sum_o w[o][m-o] * delta[m-o]
        wd = self.params["w"] * delta[None, :]
        delta_in = np.zeros(self.d)
        for r, o in enumerate(self.offsets):
            if o >= 0:
                delta_in[o:] += wd[r, : self.d - o]
            else:
                delta_in[: self.d + o] += wd[r, -o:]
        return grads, delta_in


class ConvPoolLayer:
    """``n_f`` sliding filters, non-overlapping max-pool of width 2, then tanh.

    Pool ties go to the lower index; an odd trailing convolution output is
    dropped.  Output is the filter-major concatenation of the pooled maps.
    """

    def __init__(self, d: int, n_f: int, d_f: int, rng: SeededRng | None = None):
        if d_f < 1 or d < d_f:
            raise ValueError(f"filter length {d_f} does not fit input length {d}")
        self.d, self.n_f, self.d_f = d, n_f, d_f
        self.conv_len = d - d_f + 1
        self.pooled_len = self.conv_len // POOL
        r = np.sqrt(6.0 / (d_f + 1))
        filters = rng_uniform(rng, -r, r, n_f * d_f) if rng is not None else np.zeros(n_f * d_f)
        self.params = {"filters": filters.reshape(n_f, d_f), "b": np.zeros(n_f)}
        self._windows = np.arange(self.conv_len)[:, None] + np.arange(d_f)[None, :]
        self._pair_base = POOL * np.arange(self.pooled_len)[None, :] + self.conv_len * np.arange(n_f)[:, None]

    @property
    def out_len(self):
        return self.n_f * self.pooled_len

    def conv(self, a: np.ndarray) -> np.ndarray:
        """Convolution maps, shape ``(..., n_f, conv_len)``."""
        windows = a[..., self._windows]
        return np.swapaxes(windows @ self.params["filters"].T, -1, -2) + self.params["b"][:, None]

    def _pool(self, c: np.ndarray):
        pairs = c[..., : POOL * self.pooled_len].reshape(c.shape[:-1] + (self.pooled_len, POOL))
        argmax = (pairs[..., 1] > pairs[..., 0]).astype(np.intp)  # ties -> lower index
        return np.maximum(pairs[..., 0], pairs[..., 1]), argmax

    def forward(self, a) -> np.ndarray:
        a = as_vec(a)
        if a.size < self.d_f:
            raise ValueError(f"input length {a.size} shorter than filter length {self.d_f}")
        _check_len(a, self.d, "convolution input")
        pooled, self._argmax = self._pool(self.conv(a))
        self._out = np.tanh(pooled)
        return self._out.reshape(-1)

    def forward_batch(self, A: np.ndarray) -> np.ndarray:
        pooled, _ = self._pool(self.conv(A))
        return np.tanh(pooled).reshape(A.shape[0], -1)

    def backward(self, a, delta) -> tuple[dict, np.ndarray]:
        if not hasattr(self, "_argmax"):
            raise RuntimeError("convpool backward called before forward")
        a, delta = as_vec(a), as_vec(delta)
        _check_len(delta, self.out_len, "convolution delta")
        dp = delta.reshape(self.n_f, self.pooled_len) * (1.0 - self._out**2)
        # route each pooled gradient to the position that won the pool
        dc = np.zeros(self.n_f * self.conv_len)
        dc[(self._pair_base + self._argmax).ravel()] = dp.ravel()
        dc = dc.reshape(self.n_f, self.conv_len)
        grads = {"filters": dc @ a[self._windows], "b": dc.sum(axis=1)}
        # sum_i full correlation of dc_i with the reversed filter i
        contrib = dc.T @ self.params["filters"]
        delta_in = np.zeros(self.d)
        for p in range(self.d_f):
            delta_in[p : p + self.conv_len] += contrib[:, p]
        return grads, delta_in


class SigmoidLayer:
    """Fully connected layer with logistic activation."""

    def __init__(self, n_in: int, n_out: int, rng: SeededRng | None = None):
        self.n_in, self.n_out = n_in, n_out
        r = np.sqrt(6.0 / (n_in + n_out)) if n_in + n_out > 0 else 0.0
        w = rng_uniform(rng, -r, r, n_in * n_out) if rng is not None else np.zeros(n_in * n_out)
        self.params = {"W": w.reshape(n_in, n_out), "b": np.zeros(n_out)}

    def forward(self, a) -> np.ndarray:
        a = as_vec(a)
        _check_len(a, self.n_in, "sigmoid input")
        self._g = logistic(a @ self.params["W"] + self.params["b"])
        return self._g

    def forward_batch(self, A: np.ndarray) -> np.ndarray:
        return logistic(A @ self.params["W"] + self.params["b"])

    def backward(self, a, delta) -> tuple[dict, np.ndarray]:
        a, delta = as_vec(a), as_vec(delta)
        _check_len(delta, self.n_out, "sigmoid delta")
        g = self._g
        dz = delta * g * (1.0 - g)
        grads = {"W": np.outer(a, dz), "b": dz}
        return grads, self.params["W"] @ dz


class L1OutputLayer:
    """Linear regression output with an l1 penalty on its weights."""

    def __init__(self, n_in: int, lam: float = 0.0, rng: SeededRng | None = None):
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        self.n_in, self.lam = n_in, float(lam)
        r = np.sqrt(6.0 / (n_in + 1))
        w = rng_uniform(rng, -r, r, n_in) if rng is not None else np.zeros(n_in)
        self.params = {"W": w, "b": np.zeros(1)}

    def forward(self, a) -> float:
        a = as_vec(a)
        _check_len(a, self.n_in, "output input")
        return float(a @ self.params["W"] + self.params["b"][0])

    def forward_batch(self, A: np.ndarray) -> np.ndarray:
        return A @ self.params["W"] + self.params["b"][0]

    def cost(self, y_hat: float, y: float) -> float:
        return 0.5 * (y_hat - y) ** 2 + self.lam * float(np.abs(self.params["W"]).sum())

    def backward(self, a, y: float) -> tuple[dict, np.ndarray]:
        a = as_vec(a)
        err = self.forward(a) - y
        W = self.params["W"]
        grads = {"W": a * err + self.lam * np.sign(W), "b": np.array([err])}
        return grads, err * W
