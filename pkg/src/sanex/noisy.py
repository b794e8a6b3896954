"""Noise machinery: factored Gaussian noise, NoisyNet layers, the SANE module.

Two code paths exist on purpose.  The single-sample operations
(:func:`noisy_linear_forward`, :func:`sane_perturbed_forward`) materialize the
full ``eps_w`` matrix and follow the layer formulas literally.  The batched
Q-network path (:func:`forward_batch` / :func:`backward_batch`) never builds
``eps_w``; it uses the rank-1 identity ``eps_w @ x = z_m * (z_l . x)`` so that
every example in a batch can carry its own noise cheaply.  Tests check the two
paths against each other.

Noise draw order (fixed, relied on for reproducibility): for a batch of ``B``
rows and each head layer in order, ``B * l`` input-side normals then ``B * m``
output-side normals, row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nncore import SANE_STRATEGIES, ContractError, LinearLayer, QNetworkParams, _as_batch, mlp_backward, mlp_forward, relu
from .numkit import Rng, standard_normal


def z_transform(x):
    """sgn(x) * sqrt(|x|); works on scalars and arrays."""
    if np.ndim(x) == 0:
        x = float(x)
        return math.copysign(math.sqrt(abs(x)), x) if x != 0.0 else 0.0
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.sqrt(np.abs(x))


@dataclass
class FactoredNoise:
    """One layer's factored noise; ``eps_w[i, j] = z(raw_m[i]) * z(raw_l[j])``."""

    eps_w: np.ndarray
    eps_b: np.ndarray
    raw_l: np.ndarray
    raw_m: np.ndarray

    @classmethod
    def from_raw(cls, raw_l, raw_m) -> "FactoredNoise":
        raw_l = np.asarray(raw_l, dtype=np.float64)
        raw_m = np.asarray(raw_m, dtype=np.float64)
        zl, zm = z_transform(raw_l), z_transform(raw_m)
        return cls(eps_w=np.outer(zm, zl), eps_b=zm.copy(), raw_l=raw_l, raw_m=raw_m)


def sample_factored(rng: Rng, l: int, m: int) -> FactoredNoise:
    if l < 1 or m < 1:
        raise ContractError(f"factored noise needs l, m >= 1, got l={l}, m={m}")
    raw_l = standard_normal(rng, l)
    raw_m = standard_normal(rng, m)
    return FactoredNoise.from_raw(raw_l, raw_m)


@dataclass
class NoisyLinearParams:
    mu_W: np.ndarray
    mu_b: np.ndarray
    sigma_W: np.ndarray
    sigma_b: np.ndarray

    def __post_init__(self):
        if self.sigma_W.shape != self.mu_W.shape or self.sigma_b.shape != self.mu_b.shape:
            raise ContractError("sigma shapes must mirror mu shapes")


def _check_noise(n: FactoredNoise, shape) -> None:
    if n.eps_w.shape != shape:
        raise ContractError(f"noise shape {n.eps_w.shape} does not match weights {shape}")


def noisy_linear_forward(p: NoisyLinearParams, n: FactoredNoise, x: np.ndarray) -> np.ndarray:
    """``(mu_W + sigma_W * eps_w) x + (mu_b + sigma_b * eps_b)``, same noise for every row of ``x``."""
    _check_noise(n, p.mu_W.shape)
    x = _as_batch(x, p.mu_W.shape[1], "noisy_linear_forward")
    W = p.mu_W + p.sigma_W * n.eps_w
    b = p.mu_b + p.sigma_b * n.eps_b
    return x @ W.T + b


def noisy_linear_backward(p: NoisyLinearParams, n: FactoredNoise, x: np.ndarray, dy: np.ndarray):
    """Returns ``(dx, grads)`` with grads keyed ``mu_W, mu_b, sigma_W, sigma_b``."""
    x = _as_batch(x, p.mu_W.shape[1], "noisy_linear_backward")
    dW = dy.T @ x
    db = dy.sum(axis=0)
    grads = {"mu_W": dW, "mu_b": db, "sigma_W": dW * n.eps_w, "sigma_b": db * n.eps_b}
    dx = dy @ (p.mu_W + p.sigma_W * n.eps_w)
    return dx, grads


def sane_perturbed_forward(layer: LinearLayer, sigma: float, n: FactoredNoise, x: np.ndarray) -> np.ndarray:
    """``(W + sigma eps_w) x + (b + sigma eps_b)`` with one scalar ``sigma``."""
    _check_noise(n, layer.W.shape)
    x = _as_batch(x, layer.n_in, "sane_perturbed_forward")
    return x @ (layer.W + sigma * n.eps_w).T + (layer.b + sigma * n.eps_b)


def sane_perturbed_backward(layer: LinearLayer, sigma: float, n: FactoredNoise, x: np.ndarray, dy: np.ndarray):
    """Returns ``(dx, dW, db, dsigma)``; ``dsigma`` sums over rows."""
    x = _as_batch(x, layer.n_in, "sane_perturbed_backward")
    dW = dy.T @ x
    db = dy.sum(axis=0)
    dsigma = float(np.sum(dW * n.eps_w) + np.sum(db * n.eps_b))
    dx = dy @ (layer.W + sigma * n.eps_w)
    return dx, dW, db, dsigma


@dataclass
class SaneModule:
    """Perturbation module: hidden ReLU layer then a single linear output (the noise scale)."""

    layers: list[LinearLayer]

    def __post_init__(self):
        if self.layers[-1].n_out != 1:
            raise ContractError("SANE module output width must be 1")

    @property
    def input_width(self) -> int:
        return self.layers[0].n_in


def _sane_features(mod: SaneModule, h: np.ndarray, extra) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 1:
        h = h[None, :]
    if extra is not None:
        extra = np.asarray(extra, dtype=np.float64)
        if extra.ndim == 1:
            extra = extra[None, :]
        h = np.concatenate([h, extra], axis=1)
    if h.shape[1] != mod.input_width:
        raise ContractError(f"SANE module expects width {mod.input_width}, got {h.shape[1]}")
    return h


def sane_sigma(mod: SaneModule, h: np.ndarray, extra: np.ndarray | None = None, store_cache: bool = False):
    """Raw module output per row (sign kept; only |sigma| matters downstream).

    A 1-D ``h`` gives a float; a batch gives a ``(B,)`` array.  With
    ``store_cache`` returns ``(sigma, cache)`` for :func:`sane_sigma_backward`.
    """
    single = np.ndim(h) == 1
    feats = _sane_features(mod, h, extra)
    out, cache = mlp_forward(mod.layers, feats, store_cache=store_cache)
    sigma = out[:, 0]
    if single:
        sigma = float(sigma[0])
    return (sigma, cache) if store_cache else sigma


def sane_sigma_backward(mod: SaneModule, cache, dsigma, grads: Sequence[LinearLayer] | None = None) -> np.ndarray:
    """Backprop ``d loss / d sigma`` (per row); returns gradient w.r.t. the concatenated input."""
    d = np.asarray(dsigma, dtype=np.float64).reshape(-1, 1)
    return mlp_backward(mod.layers, cache, d, grads)


# --------------------------------------------------------------------------- batched Q network

@dataclass
class HeadNoise:
    """Per-row factored noise for every head layer: ``zl[i]`` is ``(B, l)``, ``zm[i]`` is ``(B, m)``."""

    zl: list[np.ndarray]
    zm: list[np.ndarray]
    raw_l: list[np.ndarray] = field(repr=False)
    raw_m: list[np.ndarray] = field(repr=False)

    @property
    def batch(self) -> int:
        return self.zl[0].shape[0]

    def factored(self, layer: int, row: int) -> FactoredNoise:
        return FactoredNoise.from_raw(self.raw_l[layer][row], self.raw_m[layer][row])


def sample_head_noise(rng: Rng, params: QNetworkParams, batch: int) -> HeadNoise:
    zl, zm, raw_l, raw_m = [], [], [], []
    for layer in params.head:
        rl = standard_normal(rng, batch * layer.n_in).reshape(batch, layer.n_in)
        rm = standard_normal(rng, batch * layer.n_out).reshape(batch, layer.n_out)
        raw_l.append(rl)
        raw_m.append(rm)
        zl.append(z_transform(rl))
        zm.append(z_transform(rm))
    return HeadNoise(zl, zm, raw_l, raw_m)


def head_noise_from_factored(per_layer: Sequence[FactoredNoise]) -> HeadNoise:
    """Single-row :class:`HeadNoise` from explicit per-layer factored noise."""
    raw_l = [n.raw_l[None, :] for n in per_layer]
    raw_m = [n.raw_m[None, :] for n in per_layer]
    return HeadNoise([z_transform(r) for r in raw_l], [z_transform(r) for r in raw_m], raw_l, raw_m)


@dataclass
class ForwardCache:
    enc: list
    head: list
    noise: HeadNoise | None
    sigma: np.ndarray | None = None
    sane: list | None = None
    qc: list | None = None          # clean-head cache feeding Q-SANE features
    enc_sig: list | None = None     # encoder cache when sigma comes from other states
    h_width: int = 0


def _is_noisy(params: QNetworkParams, mode: str) -> bool:
    if mode not in ("clean", "noisy"):
        raise ContractError(f"mode must be 'clean' or 'noisy', got {mode!r}")
    return mode == "noisy" and params.strategy in ("noisynet", *SANE_STRATEGIES)


def _head_forward(params, x, noise, sigma, store):
    layers = params.head
    cache = [] if store else None
    for i, layer in enumerate(layers):
        y = x @ layer.W.T + layer.b
        extra = None
        if noise is not None:
            zl, zm = noise.zl[i], noise.zm[i]
            if params.sigmas is not None:
                s = params.sigmas[i]
                v = zl * x
                y = y + zm * (v @ s.W.T + s.b)
                extra = v
            else:
                u = zm * ((zl * x).sum(axis=1) + 1.0)[:, None]
                y = y + sigma[:, None] * u
                extra = u
        if store:
            cache.append((x, y, extra))
        x = relu(y) if i < len(layers) - 1 else y
    return x, cache


def _head_backward(params, cache, dq, noise, sigma, grads):
    dsigma = None if sigma is None or noise is None or params.sigmas is not None else np.zeros(dq.shape[0])
    d = dq
    for i in range(len(params.head) - 1, -1, -1):
        x, y, extra = cache[i]
        if i < len(params.head) - 1:
            d = d * (y > 0.0)
        layer = params.head[i]
        grads.head[i].W += d.T @ x
        grads.head[i].b += d.sum(axis=0)
        dx = d @ layer.W
        if noise is not None:
            zl, zm = noise.zl[i], noise.zm[i]
            if params.sigmas is not None:
                s = params.sigmas[i]
                gz = d * zm
                grads.sigmas[i].W += gz.T @ extra
                grads.sigmas[i].b += gz.sum(axis=0)
                dx = dx + (gz @ s.W) * zl
            else:
                dsigma += (d * extra).sum(axis=1)
                dx = dx + (sigma * (zm * d).sum(axis=1))[:, None] * zl
        d = dx
    return d, dsigma


def _sigma_forward(params, h, store):
    qc_cache = None
    extra = None
    if params.strategy == "q_sane":
        extra, qc_cache = _head_forward(params, h, None, None, store)
    out = sane_sigma(params.sane, h, extra, store_cache=store)
    if store:
        sigma, sane_cache = out
        return sigma, sane_cache, qc_cache
    return out, None, None


def forward_batch(params: QNetworkParams, S: np.ndarray, mode: str = "clean", noise: HeadNoise | None = None,
                  sigma_S: np.ndarray | None = None, store_cache: bool = False):
    """Q-values for a batch of states.

    In noisy mode ``noise`` must hold one row per state.  ``sigma_S``, when
    given, supplies the states the SANE noise scale is computed from (defaults
    to ``S``).  Returns ``(Q, cache)``; ``cache`` is ``None`` unless requested.
    """
    if params.strategy not in ("plain", "epsilon_greedy", "noisynet", *SANE_STRATEGIES):
        raise ContractError(f"unknown strategy {params.strategy!r}")
    S = _as_batch(S, params.spec.obs_width, "forward_batch")
    noisy = _is_noisy(params, mode)
    h, enc_cache = mlp_forward(params.encoder, S, store_cache=store_cache, final_relu=True)
    if not noisy:
        q, head_cache = _head_forward(params, h, None, None, store_cache)
        cache = ForwardCache(enc_cache, head_cache, None, h_width=h.shape[1]) if store_cache else None
        return q, cache
    if noise is None or noise.batch != S.shape[0]:
        raise ContractError("noisy forward needs one noise row per state")
    sigma = sane_cache = qc_cache = enc_sig = None
    if params.sane is not None:
        h_sig = h
        if sigma_S is not None:
            sigma_S = _as_batch(sigma_S, params.spec.obs_width, "forward_batch sigma states")
            h_sig, enc_sig = mlp_forward(params.encoder, sigma_S, store_cache=store_cache, final_relu=True)
        sigma, sane_cache, qc_cache = _sigma_forward(params, h_sig, store_cache)
    q, head_cache = _head_forward(params, h, noise, sigma, store_cache)
    cache = None
    if store_cache:
        cache = ForwardCache(enc_cache, head_cache, noise, sigma, sane_cache, qc_cache, enc_sig, h.shape[1])
    return q, cache


def backward_batch(params: QNetworkParams, cache: ForwardCache, dq: np.ndarray, grads: QNetworkParams) -> None:
    """Accumulate d loss / d params into ``grads`` given ``dq = d loss / d Q``."""
    dh, dsigma = _head_backward(params, cache.head, dq, cache.noise, cache.sigma, grads)
    if dsigma is not None:
        dfeats = sane_sigma_backward(params.sane, cache.sane, dsigma, grads.sane.layers)
        dh_sig = dfeats[:, :cache.h_width]
        if params.strategy == "q_sane":
            dqc = dfeats[:, cache.h_width:]
            dh_sig = dh_sig + _head_backward(params, cache.qc, dqc, None, None, grads)[0]
        if cache.enc_sig is not None:
            mlp_backward(params.encoder, cache.enc_sig, dh_sig, grads.encoder, final_relu=True)
        else:
            dh = dh + dh_sig
    mlp_backward(params.encoder, cache.enc, dh, grads.encoder, final_relu=True)


@dataclass
class SigmaProbe:
    abs_sigma: np.ndarray


def q_forward(params: QNetworkParams, s: np.ndarray, rng: Rng | None = None, mode: str = "clean"):
    """Q-values for one state or a batch; noisy mode draws fresh per-row noise from ``rng``.

    Returns ``(q, probe)``; ``probe`` carries ``|sigma|`` for SANE strategies
    in noisy mode and is ``None`` otherwise.
    """
    single = np.ndim(s) == 1
    S = _as_batch(s, params.spec.obs_width, "q_forward")
    if not _is_noisy(params, mode):
        q, _ = forward_batch(params, S, "clean")
        return (q[0] if single else q), None
    if rng is None:
        raise ContractError("noisy q_forward needs an rng")
    noise = sample_head_noise(rng, params, S.shape[0])
    q, cache = forward_batch(params, S, "noisy", noise, store_cache=params.sane is not None)
    probe = SigmaProbe(np.abs(cache.sigma)) if params.sane is not None else None
    return (q[0] if single else q), probe


def state_sigma(params: QNetworkParams, S: np.ndarray) -> np.ndarray:
    """Noise-free sigma(h(s)) per state (raw sign)."""
    if params.sane is None:
        raise ContractError(f"strategy {params.strategy!r} has no SANE module")
    S = _as_batch(S, params.spec.obs_width, "state_sigma")
    h, _ = mlp_forward(params.encoder, S, store_cache=False, final_relu=True)
    sigma, _, _ = _sigma_forward(params, h, False)
    return sigma
