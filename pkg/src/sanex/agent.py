"""DQN training with epsilon-greedy, NoisyNet, simple-SANE and Q-SANE exploration.

RNG streams: every run derives independent streams from its seed so that the
strategies consume identical randomness for everything except exploration
noise.  Stream ids: 1 init, 2 env resets, 3 acting (noise / epsilon draws),
4 replay sampling, 5 loss-time noise.  Within one update the Q-network noise
for the whole batch is drawn before the target-network noise.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .config import TrainConfig
from .envs import TabularEnv, make_env
from .nncore import NetSpec, QNetworkParams, build_qnetwork
from .noisy import HeadNoise, backward_batch, forward_batch, q_forward, sample_head_noise
from .numkit import AdamState, ContractError, Rng, adam_step

log = logging.getLogger(__name__)

NOISE_STRATEGIES = ("noisynet", "simple_sane", "q_sane")
START_STREAM_OFFSET = 1000  # evaluate(): start states vs noise draws
STREAM_INIT, STREAM_ENV, STREAM_ACT, STREAM_REPLAY, STREAM_UPDATE = 1, 2, 3, 4, 5


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool


@dataclass
class Batch:
    S: np.ndarray
    A: np.ndarray
    R: np.ndarray
    S2: np.ndarray
    D: np.ndarray

    def __len__(self) -> int:
        return self.A.shape[0]

    @classmethod
    def from_transitions(cls, ts: Sequence[Transition]) -> "Batch":
        if not ts:
            raise ContractError("empty batch")
        return cls(
            S=np.array([np.asarray(t.s, dtype=np.float64) for t in ts]),
            A=np.array([t.a for t in ts], dtype=np.int64),
            R=np.array([t.r for t in ts], dtype=np.float64),
            S2=np.array([np.asarray(t.s_next, dtype=np.float64) for t in ts]),
            D=np.array([t.done for t in ts], dtype=bool),
        )


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int, obs_width: int):
        if capacity < 1:
            raise ContractError("replay capacity must be positive")
        self.capacity = capacity
        self.S = np.zeros((capacity, obs_width))
        self.S2 = np.zeros((capacity, obs_width))
        self.A = np.zeros(capacity, dtype=np.int64)
        self.R = np.zeros(capacity)
        self.D = np.zeros(capacity, dtype=bool)
        self.head = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> "ReplayBuffer":
        i = self.head
        self.S[i] = t.s
        self.S2[i] = t.s_next
        self.A[i] = t.a
        self.R[i] = t.r
        self.D[i] = t.done
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return self

    def get(self, i: int) -> Transition:
        return Transition(self.S[i].copy(), int(self.A[i]), float(self.R[i]), self.S2[i].copy(), bool(self.D[i]))

    def items(self) -> list[Transition]:
        """Contents from oldest to newest."""
        start = self.head if self.size == self.capacity else 0
        return [self.get((start + k) % self.capacity) for k in range(self.size)]

    def sample_indices(self, rng: Rng, b: int) -> np.ndarray:
        if self.size == 0:
            raise ContractError("cannot sample from an empty replay buffer")
        return rng.integers(self.size, b)

    def batch(self, idx: np.ndarray) -> Batch:
        return Batch(self.S[idx], self.A[idx], self.R[idx], self.S2[idx], self.D[idx])


def push(buffer: ReplayBuffer, t: Transition) -> ReplayBuffer:
    return buffer.push(t)


def sample_batch(buffer: ReplayBuffer, rng: Rng, b: int) -> list[Transition]:
    """``b`` uniform draws with replacement."""
    return [buffer.get(int(i)) for i in buffer.sample_indices(rng, b)]


def _noisy(params: QNetworkParams) -> bool:
    return params.strategy in NOISE_STRATEGIES


@dataclass
class BatchNoise:
    q: HeadNoise | None
    target: HeadNoise | None


def draw_batch_noise(rng: Rng, qparams: QNetworkParams, target_params: QNetworkParams, b: int) -> BatchNoise:
    if not _noisy(qparams):
        return BatchNoise(None, None)
    q = sample_head_noise(rng, qparams, b)
    return BatchNoise(q, sample_head_noise(rng, target_params, b))


def td_targets(target_params: QNetworkParams, batch: Batch, gamma: float, noise: HeadNoise | None = None) -> np.ndarray:
    """``r`` for terminal rows, else ``r + gamma * max_a Q_target(s')``."""
    if _noisy(target_params):
        q_next, _ = forward_batch(target_params, batch.S2, "noisy", noise)
    else:
        q_next, _ = forward_batch(target_params, batch.S2, "clean")
    return np.where(batch.D, batch.R, batch.R + gamma * q_next.max(axis=1))


def td_target(t: Transition, target_params: QNetworkParams, rng: Rng | None, gamma: float) -> float:
    batch = Batch.from_transitions([t])
    noise = sample_head_noise(rng, target_params, 1) if _noisy(target_params) else None
    return float(td_targets(target_params, batch, gamma, noise)[0])


class BatchLoss(NamedTuple):
    loss: float
    grads: QNetworkParams
    abs_sigma: np.ndarray | None


def batch_loss_and_grads(qparams: QNetworkParams, target_params: QNetworkParams, batch, rng: Rng | None = None,
                         gamma: float = 0.99, noise: BatchNoise | None = None,
                         literal_sigma_states: bool = False) -> BatchLoss:
    """Mean squared TD error over the batch and its gradient w.r.t. every Q-network parameter.

    Each row gets its own noise for both networks.  Pass ``noise`` to freeze
    the draws (gradient checks); otherwise it is drawn from ``rng``.  With
    ``literal_sigma_states`` the Q-network noise scale is computed from the
    next states instead of the evaluated states.
    """
    if not isinstance(batch, Batch):
        batch = Batch.from_transitions(list(batch))
    b = len(batch)
    if noise is None:
        if _noisy(qparams) and rng is None:
            raise ContractError("noisy strategies need an rng or frozen noise")
        noise = draw_batch_noise(rng, qparams, target_params, b) if _noisy(qparams) else BatchNoise(None, None)
    targets = td_targets(target_params, batch, gamma, noise.target)
    mode = "noisy" if _noisy(qparams) else "clean"
    sigma_S = batch.S2 if literal_sigma_states else None
    q, cache = forward_batch(qparams, batch.S, mode, noise.q, sigma_S=sigma_S, store_cache=True)
    rows = np.arange(b)
    diff = q[rows, batch.A] - targets
    loss = float(np.mean(diff * diff))
    dq = np.zeros_like(q)
    dq[rows, batch.A] = 2.0 * diff / b
    grads = qparams.zeros_like()
    backward_batch(qparams, cache, dq, grads)
    abs_sigma = np.abs(cache.sigma) if cache.sigma is not None else None
    return BatchLoss(loss, grads, abs_sigma)


def batch_loss(qparams, target_params, batch, noise: BatchNoise, gamma: float = 0.99,
               literal_sigma_states: bool = False) -> float:
    """Loss only, for finite-difference checks."""
    if not isinstance(batch, Batch):
        batch = Batch.from_transitions(list(batch))
    targets = td_targets(target_params, batch, gamma, noise.target)
    mode = "noisy" if _noisy(qparams) else "clean"
    sigma_S = batch.S2 if literal_sigma_states else None
    q, _ = forward_batch(qparams, batch.S, mode, noise.q, sigma_S=sigma_S)
    diff = q[np.arange(len(batch)), batch.A] - targets
    return float(np.mean(diff * diff))


def select_action(qparams: QNetworkParams, s: np.ndarray, rng: Rng | None = None, epsilon: float = 0.0) -> int:
    """Greedy on noisy Q for noise strategies, epsilon-greedy on clean Q, or plain greedy.

    Ties go to the lowest action index.
    """
    strategy = qparams.strategy
    if strategy == "epsilon_greedy":
        if rng.uniform(1)[0] < epsilon:
            return int(rng.integers(qparams.spec.n_actions, 1)[0])
        q, _ = q_forward(qparams, s, None, "clean")
    elif strategy in NOISE_STRATEGIES:
        q, _ = q_forward(qparams, s, rng, "noisy")
    else:
        q, _ = q_forward(qparams, s, None, "clean")
    return int(np.argmax(q))


def target_sync(qparams: QNetworkParams, target: QNetworkParams | None = None) -> QNetworkParams:
    """Deep copy of every parameter, noise parameters included."""
    if target is None:
        return qparams.copy()
    target.flat[...] = qparams.flat
    return target


@dataclass
class MetricsRow:
    step: int
    episode: int | None = None
    episode_return: float | None = None
    loss: float | None = None
    mean_abs_sigma: float | None = None
    kl_term: float | None = None
    wallclock_ms: float | None = None


@dataclass
class TrainResult:
    params: QNetworkParams
    target: QNetworkParams
    metrics: list[MetricsRow]
    adam: AdamState
    rngs: dict[str, Rng]
    steps: int = 0
    updates: int = 0
    episodes: int = 0
    config: TrainConfig = field(default_factory=TrainConfig)


def make_streams(seed: int) -> dict[str, Rng]:
    root = Rng(seed)
    return {
        "init": root.spawn(STREAM_INIT),
        "env": root.spawn(STREAM_ENV),
        "act": root.spawn(STREAM_ACT),
        "replay": root.spawn(STREAM_REPLAY),
        "update": root.spawn(STREAM_UPDATE),
    }


def net_spec_for(cfg: TrainConfig, env: TabularEnv) -> NetSpec:
    return NetSpec(env.spec.obs_width, env.spec.n_actions, cfg.encoder_sizes, cfg.head_sizes,
                   cfg.strategy, cfg.sane_hidden)


def _kl_diagnostic(params: QNetworkParams, batch: Batch, eps: float) -> float | None:
    from .diagnostics import noisynet_kl, sane_batch_kl

    try:
        if params.strategy == "noisynet":
            return noisynet_kl(params, eps)
        if params.sane is not None:
            return sane_batch_kl(params, batch.S, eps)
    except (ContractError, FloatingPointError):
        return None
    return None


def train_loop(cfg: TrainConfig, env: TabularEnv | None = None, init: QNetworkParams | None = None) -> TrainResult:
    """Run one seeded training job; fully determined by ``cfg`` (and ``init`` when given).

    ``init`` replaces the seeded initialization with a copy of the given
    parameters; its architecture must match the config.
    """
    if env is None:
        env = make_env(cfg.env, cfg.max_episode_steps, cfg.random_start)
    rngs = make_streams(cfg.seed)
    spec = net_spec_for(cfg, env)
    if init is None:
        params = build_qnetwork(spec, rngs["init"])
    elif init.spec != spec:
        raise ContractError(f"initial parameters {init.spec} do not match the config network {spec}")
    else:
        params = init.copy()
    if cfg.freeze_noise:
        params.zero_noise()
    frozen = params.noise_mask() if cfg.freeze_noise else None
    target = target_sync(params)
    adam = AdamState.zeros(params.flat.size, alpha=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                           eps=cfg.adam_eps)
    buffer = ReplayBuffer(min(cfg.buffer_capacity, max(cfg.max_steps, 1)), env.spec.obs_width)
    metrics: list[MetricsRow] = []
    t0 = time.perf_counter()

    def clock():
        return round((time.perf_counter() - t0) * 1000.0, 3) if cfg.record_wallclock else None

    steps = updates = episode = 0
    last_loss = last_sigma = last_kl = None
    random_warmup = cfg.strategy == "epsilon_greedy"
    n_actions = env.spec.n_actions
    while steps < cfg.max_steps:
        s = env.reset(rngs["env"])
        ep_return, t, done = 0.0, 0, False
        while not done and t < cfg.max_episode_steps and steps < cfg.max_steps:
            if random_warmup and steps < cfg.warmup_transitions:
                a = int(rngs["act"].integers(n_actions, 1)[0])
            else:
                a = select_action(params, s, rngs["act"], cfg.epsilon(steps))
            res = env.step(a)
            r = min(1.0, max(-1.0, res.reward)) if cfg.clip_rewards else res.reward
            buffer.push(Transition(s, a, r, res.observation, res.done))
            ep_return += res.reward
            steps += 1
            t += 1
            s, done = res.observation, res.done

            if steps > cfg.warmup_transitions and (steps - cfg.warmup_transitions) % cfg.update_frequency == 0:
                batch = buffer.batch(buffer.sample_indices(rngs["replay"], cfg.batch_size))
                out = batch_loss_and_grads(params, target, batch, rngs["update"], cfg.gamma,
                                           literal_sigma_states=cfg.literal_sigma_states)
                if not np.isfinite(out.loss) or not np.all(np.isfinite(out.grads.flat)):
                    raise TrainingDiverged(f"non-finite loss/gradient at step {steps} (update {updates + 1}): "
                                           f"loss={out.loss}")
                grads = out.grads.flat
                if frozen is not None:
                    grads[frozen] = 0.0
                adam_step(params.flat, grads, adam)
                updates += 1
                last_loss = out.loss
                last_sigma = float(np.mean(out.abs_sigma)) if out.abs_sigma is not None else None
                if updates % cfg.log_interval == 0:
                    last_kl = _kl_diagnostic(params, batch, cfg.kl_epsilon)
                    metrics.append(MetricsRow(steps, None, None, last_loss, last_sigma, last_kl, clock()))
            if steps % cfg.copy_frequency == 0:
                target_sync(params, target)
        if done or t == cfg.max_episode_steps:
            metrics.append(MetricsRow(steps, episode, ep_return, last_loss, last_sigma, last_kl, clock()))
            episode += 1
    log.info("trained %s on %s: %d steps, %d updates, %d episodes", cfg.strategy, cfg.env, steps, updates, episode)
    return TrainResult(params, target, metrics, adam, rngs, steps, updates, episode, cfg)


def run_episode(params: QNetworkParams, env: TabularEnv, rng: Rng, noise: bool,
                max_steps: int | None = None, start_rng: Rng | None = None) -> tuple[float, list[int], list[np.ndarray]]:
    """One greedy episode; returns (unclipped return, actions, Q-vectors).

    Random starts are drawn from ``start_rng`` when given, else from ``rng``.
    """
    mode = "noisy" if noise else "clean"
    limit = max_steps or env.spec.max_episode_steps
    s = env.reset(start_rng or rng)
    total, actions, qs = 0.0, [], []
    for _ in range(limit):
        q, _ = q_forward(params, s, rng, mode)
        a = int(np.argmax(q))
        res = env.step(a)
        total += res.reward
        actions.append(a)
        qs.append(q)
        s = res.observation
        if res.done:
            break
    return total, actions, qs


def evaluate(params: QNetworkParams, env: TabularEnv, episodes: int, rng: Rng, noise="off") -> tuple[float, float]:
    """Mean and (population) standard deviation of greedy episode returns.

    ``noise`` is ``"on"``/``"off"`` (or a bool): perturbed or clean forward.
    Start states come from a separate stream of the same seed, so both modes
    see the same starts for a given ``rng``.
    """
    on = noise in ("on", True)
    if noise not in ("on", "off", True, False):
        raise ContractError(f"noise must be 'on' or 'off', got {noise!r}")
    starts = rng.spawn(rng.stream + START_STREAM_OFFSET)
    returns = np.array([run_episode(params, env, rng, on, start_rng=starts)[0] for _ in range(episodes)])
    return float(returns.mean()), float(returns.std())
