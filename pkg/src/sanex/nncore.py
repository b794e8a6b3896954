"""Dense layers, initializers and the partitioned Q-network parameter store.

All parameters of one network live in a single flat ``float64`` buffer; the
``W``/``b`` arrays of every :class:`LinearLayer` are views into it.  That keeps
Adam, target syncs, checkpoints and finite-difference checks working on one
vector while the forward/backward code reads naturally per layer.  Write into
views (``layer.W[...] = x``); rebinding ``layer.W`` detaches it from the store.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numkit import ContractError, Rng, standard_normal

STRATEGIES = ("plain", "epsilon_greedy", "noisynet", "simple_sane", "q_sane")
SANE_STRATEGIES = ("simple_sane", "q_sane")


@dataclass
class LinearLayer:
    """``y = x @ W.T + b`` for row-batched ``x``; ``W`` is ``(out, in)``."""

    W: np.ndarray
    b: np.ndarray

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    @classmethod
    def zeros(cls, n_in: int, n_out: int) -> "LinearLayer":
        return cls(np.zeros((n_out, n_in)), np.zeros(n_out))


def glorot_uniform_init(rng: Rng, layer: LinearLayer) -> LinearLayer:
    limit = math.sqrt(6.0 / (layer.n_in + layer.n_out))
    u = rng.uniform(layer.W.size).reshape(layer.W.shape)
    layer.W[...] = (2.0 * u - 1.0) * limit
    layer.b[...] = 0.0
    return layer


def he_normal_init(rng: Rng, layer: LinearLayer) -> LinearLayer:
    """N(0, 2/fan_in) weights, zero bias."""
    std = math.sqrt(2.0 / layer.n_in)
    layer.W[...] = standard_normal(rng, layer.W.size).reshape(layer.W.shape) * std
    layer.b[...] = 0.0
    return layer


def noisynet_init(rng: Rng, mu: LinearLayer, sigma: LinearLayer, sigma0: float = 0.5) -> None:
    """Factored-noise NoisyNet init: mu ~ U[-1/sqrt(l), 1/sqrt(l)], sigma = sigma0/sqrt(l)."""
    bound = 1.0 / math.sqrt(mu.n_in)
    mu.W[...] = (2.0 * rng.uniform(mu.W.size).reshape(mu.W.shape) - 1.0) * bound
    mu.b[...] = (2.0 * rng.uniform(mu.b.size) - 1.0) * bound
    sigma.W[...] = sigma0 * bound
    sigma.b[...] = sigma0 * bound


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _as_batch(x: np.ndarray, width: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ContractError(f"{what}: expected width {width}, got shape {x.shape}")
    return x


def mlp_forward(layers: Sequence[LinearLayer], x: np.ndarray, store_cache: bool = True, final_relu: bool = False):
    """ReLU MLP over row-batched ``x``.

    Returns ``(y, cache)``; ``cache`` is a list of ``(input, preactivation)``
    per layer, or ``None`` when ``store_cache`` is false.  With no layers the
    input is returned unchanged.
    """
    if layers:
        x = _as_batch(x, layers[0].n_in, "mlp_forward")
    cache = [] if store_cache else None
    a = x
    for i, layer in enumerate(layers):
        z = a @ layer.W.T + layer.b
        if store_cache:
            cache.append((a, z))
        a = relu(z) if (final_relu or i < len(layers) - 1) else z
    return a, cache


def mlp_backward(layers: Sequence[LinearLayer], cache, dy: np.ndarray, grads: Sequence[LinearLayer] | None = None,
                 final_relu: bool = False) -> np.ndarray:
    """Backprop ``dy`` through :func:`mlp_forward`; accumulates into ``grads`` and returns ``dx``."""
    d = dy
    for i in range(len(layers) - 1, -1, -1):
        a, z = cache[i]
        if final_relu or i < len(layers) - 1:
            d = d * (z > 0.0)
        if grads is not None:
            grads[i].W += d.T @ a
            grads[i].b += d.sum(axis=0)
        d = d @ layers[i].W
    return d


class ParamStore:
    """Ordered named arrays backed by one flat vector."""

    def __init__(self, layout: Sequence[tuple[str, tuple[int, ...]]], flat: np.ndarray | None = None):
        self.layout = [(name, tuple(shape)) for name, shape in layout]
        size = sum(int(np.prod(shape)) for _, shape in self.layout)
        if flat is None:
            flat = np.zeros(size)
        if flat.shape != (size,):
            raise ContractError(f"flat buffer has shape {flat.shape}, layout needs ({size},)")
        self.flat = flat
        self.views: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            self.views[name] = flat[offset:offset + n].reshape(shape)
            offset += n

    def __getitem__(self, name: str) -> np.ndarray:
        return self.views[name]

    def names(self) -> list[str]:
        return [name for name, _ in self.layout]

    def layer(self, prefix: str) -> LinearLayer:
        return LinearLayer(self.views[prefix + ".W"], self.views[prefix + ".b"])


@dataclass(frozen=True)
class NetSpec:
    """Architecture description; enough to rebuild an empty network."""

    obs_width: int
    n_actions: int
    encoder_sizes: tuple[int, ...] = (64,)
    head_sizes: tuple[int, ...] = (64,)
    strategy: str = "plain"
    sane_hidden: int = 256

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ContractError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")

    @property
    def h_width(self) -> int:
        return self.encoder_sizes[-1] if self.encoder_sizes else self.obs_width

    @property
    def sane_input_width(self) -> int:
        extra = self.n_actions if self.strategy == "q_sane" else 0
        return self.h_width + extra

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        out = []
        widths = [self.obs_width, *self.encoder_sizes]
        for i in range(len(self.encoder_sizes)):
            out += [(f"encoder.{i}.W", (widths[i + 1], widths[i])), (f"encoder.{i}.b", (widths[i + 1],))]
        widths = [self.h_width, *self.head_sizes, self.n_actions]
        for i in range(len(widths) - 1):
            out += [(f"head.{i}.W", (widths[i + 1], widths[i])), (f"head.{i}.b", (widths[i + 1],))]
        if self.strategy == "noisynet":
            for i in range(len(widths) - 1):
                out += [(f"sigma.{i}.W", (widths[i + 1], widths[i])), (f"sigma.{i}.b", (widths[i + 1],))]
        if self.strategy in SANE_STRATEGIES:
            out += [
                ("sane.0.W", (self.sane_hidden, self.sane_input_width)),
                ("sane.0.b", (self.sane_hidden,)),
                ("sane.1.W", (1, self.sane_hidden)),
                ("sane.1.b", (1,)),
            ]
        return out


class QNetworkParams:
    """Partitioned Q-network: encoder (theta_b), head (theta_p), strategy noise params.

    ``sigmas`` holds NoisyNet per-parameter standard deviations mirroring the
    head; ``sane`` holds the two layers of the perturbation module.
    """

    def __init__(self, spec: NetSpec, flat: np.ndarray | None = None):
        self.spec = spec
        self.store = ParamStore(spec.layout(), flat)
        n_head = len(spec.head_sizes) + 1
        self.encoder = [self.store.layer(f"encoder.{i}") for i in range(len(spec.encoder_sizes))]
        self.head = [self.store.layer(f"head.{i}") for i in range(n_head)]
        self.sigmas = [self.store.layer(f"sigma.{i}") for i in range(n_head)] if spec.strategy == "noisynet" else None
        self.sane = None
        if spec.strategy in SANE_STRATEGIES:
            from .noisy import SaneModule

            self.sane = SaneModule([self.store.layer("sane.0"), self.store.layer("sane.1")])

    @property
    def strategy(self) -> str:
        return self.spec.strategy

    @property
    def flat(self) -> np.ndarray:
        return self.store.flat

    def copy(self) -> "QNetworkParams":
        return QNetworkParams(self.spec, self.store.flat.copy())

    def zeros_like(self) -> "QNetworkParams":
        return QNetworkParams(self.spec)

    def arrays(self) -> dict[str, np.ndarray]:
        return dict(self.store.views)

    def noise_mask(self) -> np.ndarray:
        """Boolean mask over ``flat`` selecting NoisyNet sigmas and SANE module params."""
        mask = np.zeros(self.flat.size, dtype=bool)
        offset = 0
        for name, shape in self.store.layout:
            n = int(np.prod(shape))
            if name.startswith(("sigma.", "sane.")):
                mask[offset:offset + n] = True
            offset += n
        return mask

    def zero_noise(self) -> None:
        """Force every noise scale to exactly zero."""
        if self.sigmas is not None:
            for s in self.sigmas:
                s.W[...] = 0.0
                s.b[...] = 0.0
        if self.sane is not None:
            self.sane.layers[-1].W[...] = 0.0
            self.sane.layers[-1].b[...] = 0.0


def build_qnetwork(spec: NetSpec, rng: Rng) -> QNetworkParams:
    """Fresh network: Glorot encoder/head, NoisyNet init for noisy heads, He-normal SANE module."""
    params = QNetworkParams(spec)
    for layer in params.encoder:
        glorot_uniform_init(rng, layer)
    if spec.strategy == "noisynet":
        for mu, sigma in zip(params.head, params.sigmas):
            noisynet_init(rng, mu, sigma)
    else:
        for layer in params.head:
            glorot_uniform_init(rng, layer)
    if params.sane is not None:
        for layer in params.sane.layers:
            he_normal_init(rng, layer)
    return params


def encoder_forward(params: QNetworkParams, s: np.ndarray, store_cache: bool = False):
    """Hidden representation ``h(s)``; ReLU after every encoder layer.

    Returns ``h`` or ``(h, cache)`` when ``store_cache`` is set.
    """
    s = _as_batch(s, params.spec.obs_width, "encoder_forward")
    h, cache = mlp_forward(params.encoder, s, store_cache=store_cache, final_relu=True)
    return (h, cache) if store_cache else h
