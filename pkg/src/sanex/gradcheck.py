"""Finite-difference check of the batch-loss gradients on random tiny networks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agent import Batch, batch_loss, batch_loss_and_grads, draw_batch_noise
from .nncore import NetSpec, QNetworkParams
from .numkit import Rng, finite_diff_grad, relative_error, standard_normal

GRAD_STRATEGIES = ("plain", "noisynet", "simple_sane", "q_sane")
REL_TOL = 1e-4
ABS_FLOOR = 1e-7


@dataclass
class GradCheckResult:
    strategy: str
    nets: int
    coords: int
    max_rel_err: float
    worst_name: str

    @property
    def ok(self) -> bool:
        return self.max_rel_err <= REL_TOL


def random_tiny_problem(strategy: str, rng: Rng, batch: int = 3):
    """Random tiny net, a perturbed target copy, a random batch and frozen noise."""
    obs = 2 + int(rng.integers(3, 1)[0])
    n_actions = 2 + int(rng.integers(2, 1)[0])
    enc = tuple(2 + int(v) for v in rng.integers(3, int(rng.integers(2, 1)[0]) + 1))
    head = tuple(2 + int(v) for v in rng.integers(3, int(rng.integers(2, 1)[0])))
    spec = NetSpec(obs, n_actions, enc, head, strategy, sane_hidden=3 + int(rng.integers(3, 1)[0]))
    params = QNetworkParams(spec, 0.5 * standard_normal(rng, QNetworkParams(spec).flat.size))
    target = QNetworkParams(spec, params.flat + 0.3 * standard_normal(rng, params.flat.size))
    b = Batch(
        S=standard_normal(rng, batch * obs).reshape(batch, obs),
        A=rng.integers(n_actions, batch),
        R=np.clip(standard_normal(rng, batch), -1.0, 1.0),
        S2=standard_normal(rng, batch * obs).reshape(batch, obs),
        D=rng.uniform(batch) < 0.3,
    )
    noise = draw_batch_noise(rng, params, target, batch)
    return params, target, b, noise


def check_one(params, target, batch, noise, gamma: float = 0.99, literal_sigma_states: bool = False):
    """Returns ``(analytic, numeric)`` gradients over the flat parameter vector."""
    analytic = batch_loss_and_grads(params, target, batch, gamma=gamma, noise=noise,
                                    literal_sigma_states=literal_sigma_states).grads.flat.copy()
    numeric = finite_diff_grad(
        lambda _: batch_loss(params, target, batch, noise, gamma, literal_sigma_states), params.flat, 1e-5)
    return analytic, numeric


def _name_of(params: QNetworkParams, index: int) -> str:
    offset = 0
    for name, shape in params.store.layout:
        n = int(np.prod(shape))
        if index < offset + n:
            return f"{name}[{index - offset}]"
        offset += n
    return "?"


def run_gradcheck(strategy: str, nets: int = 100, seed: int = 0, literal_sigma_states: bool = False) -> GradCheckResult:
    rng = Rng(seed, stream=100 + GRAD_STRATEGIES.index(strategy))
    worst, worst_name, coords = 0.0, "", 0
    for _ in range(nets):
        params, target, batch, noise = random_tiny_problem(strategy, rng)
        analytic, numeric = check_one(params, target, batch, noise, literal_sigma_states=literal_sigma_states)
        err = relative_error(analytic, numeric, ABS_FLOOR)
        coords += err.size
        i = int(np.argmax(err))
        if err[i] > worst:
            worst, worst_name = float(err[i]), _name_of(params, i)
    return GradCheckResult(strategy, nets, coords, worst, worst_name)
