"""Deterministic numeric substrate: seeded RNG, Adam, finite differences.

Matrices are plain ``float64`` numpy arrays (row-major / C order).  Weight
matrices are stored ``(out, in)`` and batches of vectors are stored one
vector per row.

RNG
---
``Rng`` is a counter-based generator.  Output ``i`` of a stream is
``splitmix64_finalize(key + (i + 1) * GOLDEN)`` where ``key`` is derived from
``(seed, stream)`` by the same finalizer.  The whole state is therefore the
triple ``(seed, stream, counter)``; it is trivially checkpointed and the raw
``uint64`` sequence is identical on every platform.

Uniform doubles take the top 53 bits of each word.  Standard normals use the
Box-Muller transform on consecutive word pairs, both outputs kept, so
``standard_normal(n)`` consumes ``2 * ceil(n / 2)`` words.  Normal draws go
through ``log``/``sqrt``/``cos``/``sin`` and are reproducible wherever those
are (same numpy build and CPU family).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / 9007199254740992.0


class ContractError(ValueError):
    """A precondition of a public operation was violated."""


def _finalize(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _derive_key(seed: int, stream: int) -> np.uint64:
    mask = (1 << 64) - 1
    z = np.array([(seed & mask)], dtype=np.uint64)
    z = _finalize(z + GOLDEN)
    z = _finalize(z ^ np.array([stream & mask], dtype=np.uint64))
    return z[0]


class Rng:
    """Counter-based SplitMix64 stream.  Not thread safe."""

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.counter = int(counter)
        self._key = _derive_key(self.seed, self.stream)

    def spawn(self, stream: int) -> "Rng":
        """Independent stream sharing this generator's seed."""
        return Rng(self.seed, stream=stream)

    def state(self) -> tuple[int, int, int]:
        return (self.seed, self.stream, self.counter)

    @classmethod
    def from_state(cls, state) -> "Rng":
        seed, stream, counter = state
        return cls(seed, stream, counter)

    def next_u64(self, n: int) -> np.ndarray:
        if n < 0:
            raise ContractError(f"negative draw count {n}")
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        return _finalize(self._key + idx * GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in ``[0, 1)``."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def integers(self, high: int, n: int) -> np.ndarray:
        """``n`` ints in ``[0, high)`` via ``floor(u * high)``."""
        if high < 1:
            raise ContractError(f"integers needs high >= 1, got {high}")
        out = np.floor(self.uniform(n) * high).astype(np.int64)
        return np.minimum(out, high - 1)

    def standard_normal(self, n: int) -> np.ndarray:
        return standard_normal(self, n)


def standard_normal(rng: Rng, n: int) -> np.ndarray:
    """``n`` i.i.d. N(0, 1) draws by Box-Muller."""
    if n < 0:
        raise ContractError(f"negative draw count {n}")
    if n == 0:
        return np.zeros(0)
    pairs = (n + 1) // 2
    u = rng.uniform(2 * pairs)
    # 1 - u lies in (0, 1], so the log is finite
    radius = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
    angle = _TWO_PI * u[1::2]
    out = np.empty(2 * pairs)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:n]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    alpha: float = 6.25e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.5e-4

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), **hyper)


def adam_step(params: np.ndarray, grads: np.ndarray, st: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update.

    ``params`` is updated in place and also returned; ``st`` is mutated.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or st.m.shape != params.shape or st.v.shape != params.shape:
        raise ContractError(
            f"adam shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"m {st.m.shape}, v {st.v.shape}"
        )
    st.t += 1
    st.m *= st.beta1
    st.m += (1.0 - st.beta1) * grads
    st.v *= st.beta2
    st.v += (1.0 - st.beta2) * (grads * grads)
    m_hat = st.m / (1.0 - st.beta1**st.t)
    v_hat = st.v / (1.0 - st.beta2**st.t)
    params -= st.alpha * m_hat / (np.sqrt(v_hat) + st.eps)
    return params, st


def finite_diff_grad(f: Callable[[np.ndarray], float], params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector.

    ``params`` is perturbed in place one coordinate at a time and restored,
    so ``f`` may close over views of it.
    """
    if not h > 0:
        raise ContractError(f"step must be positive, got {h}")
    grad = np.zeros(params.shape)
    flat = params.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(params)
        flat[i] = orig - h
        fm = f(params)
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FloatingPointError(f"non-finite objective at coordinate {i}: f+={fp}, f-={fm}")
        g[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-7, tol: float = 1e-4) -> np.ndarray:
    """Elementwise ``|a-b| / max(|a|, |b|, floor/tol)``.

    The result is ``<= tol`` exactly when ``|a-b| <= max(tol * max(|a|, |b|), floor)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor / tol)
    return np.abs(a - b) / scale


def check_finite(x: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        raise FloatingPointError(f"non-finite value in {what} at index {tuple(bad)}")
    return x
