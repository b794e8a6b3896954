"""Deterministic tabular environments with explicit risk structure, plus value iteration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numkit import ContractError, Rng

HIGH_RISK = "high_risk"
LOW_RISK = "low_risk"


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_width: int
    n_actions: int
    max_episode_steps: int

    def __post_init__(self):
        if self.n_actions < 2:
            raise ContractError("environments need at least two actions")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool


@dataclass
class TabularMdp:
    """Deterministic MDP: ``next_state[s, a]``, ``reward[s, a]``, absorbing ``terminal[s]``."""

    next_state: np.ndarray
    reward: np.ndarray
    terminal: np.ndarray

    def __post_init__(self):
        self.next_state = np.asarray(self.next_state, dtype=np.int64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        n = self.next_state.shape[0]
        if self.reward.shape != self.next_state.shape or self.terminal.shape != (n,):
            raise ContractError("inconsistent MDP table shapes")
        if self.next_state.min() < 0 or self.next_state.max() >= n:
            raise ContractError("transition target out of range")

    @property
    def n_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_state.shape[1]


def value_iteration(mdp: TabularMdp, gamma: float, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Optimal action values; terminal states are worth 0."""
    if not 0.0 <= gamma < 1.0:
        raise ContractError(f"value iteration needs 0 <= gamma < 1, got {gamma}")
    if not tol > 0:
        raise ContractError(f"tol must be positive, got {tol}")
    live = ~mdp.terminal
    q = np.zeros(mdp.reward.shape)
    for _ in range(max_iter):
        v = np.where(live, q.max(axis=1), 0.0)
        q_new = np.where(live[:, None], mdp.reward + gamma * v[mdp.next_state], 0.0)
        delta = np.max(np.abs(q_new - q))
        q = q_new
        if delta < tol:
            return q
    raise RuntimeError(f"value iteration did not converge in {max_iter} sweeps")


def bellman_residual(mdp: TabularMdp, q: np.ndarray, gamma: float) -> np.ndarray:
    live = ~mdp.terminal
    v = np.where(live, q.max(axis=1), 0.0)
    backup = np.where(live[:, None], mdp.reward + gamma * v[mdp.next_state], 0.0)
    return np.abs(backup - q)


class TabularEnv:
    """Episode wrapper around a :class:`TabularMdp` with fixed observation vectors."""

    def __init__(self, spec: EnvSpec, mdp: TabularMdp, observations: np.ndarray,
                 start_states: list[int], random_start: bool = False,
                 labels: list[str] | None = None, state_names: list[str] | None = None):
        self.spec = spec
        self.mdp = mdp
        self.observations = np.asarray(observations, dtype=np.float64)
        self.start_states = list(start_states)
        self.random_start = random_start
        self.labels = labels
        self.state_names = state_names or [str(s) for s in range(mdp.n_states)]
        self.state: int | None = None
        self.done = True

    def reset(self, rng: Rng | None = None) -> np.ndarray:
        if self.random_start:
            if rng is None:
                raise ContractError("random-start reset needs an rng")
            self.state = self.start_states[int(rng.integers(len(self.start_states), 1)[0])]
        else:
            self.state = self.start_states[0]
        self.done = False
        return self.observations[self.state].copy()

    def step(self, action: int) -> StepResult:
        if self.done:
            raise ContractError("step() called on a finished episode; call reset() first")
        if not 0 <= action < self.spec.n_actions:
            raise ContractError(f"action {action} out of range [0, {self.spec.n_actions})")
        s = self.state
        s_next = int(self.mdp.next_state[s, action])
        r = float(self.mdp.reward[s, action])
        self.state = s_next
        self.done = bool(self.mdp.terminal[s_next])
        return StepResult(self.observations[s_next].copy(), r, self.done)

    def probe_states(self) -> list[tuple[int, str, np.ndarray]]:
        """``(state id, risk label, observation)`` for every non-terminal state."""
        out = []
        for s in range(self.mdp.n_states):
            if self.mdp.terminal[s]:
                continue
            label = self.labels[s] if self.labels is not None else LOW_RISK
            out.append((s, label, self.observations[s].copy()))
        return out


def chain_mdp(n: int = 5, max_episode_steps: int = 50) -> TabularEnv:
    """n-state chain, actions (0=left, 1=right); entering state n-1 pays 1 and ends the episode."""
    if n < 2:
        raise ContractError("chain needs n >= 2")
    nxt = np.zeros((n, 2), dtype=np.int64)
    rew = np.zeros((n, 2))
    for s in range(n):
        if s == n - 1:
            nxt[s] = s
            continue
        nxt[s, 0] = max(s - 1, 0)
        nxt[s, 1] = s + 1
        if s + 1 == n - 1:
            rew[s, 1] = 1.0
    terminal = np.zeros(n, dtype=bool)
    terminal[n - 1] = True
    spec = EnvSpec(f"chain:{n}", n, 2, max_episode_steps)
    return TabularEnv(spec, TabularMdp(nxt, rew, terminal), np.eye(n), [0])


RIGHT, LEFT, UP, DOWN = range(4)
_MOVES = {RIGHT: (1, 0), LEFT: (-1, 0), UP: (0, 1), DOWN: (0, -1)}


def cliff_bridge(width: int = 5, bridge_len: int = 6, max_episode_steps: int = 100,
                 random_start: bool = False) -> TabularEnv:
    """Open ``width x width`` field whose middle row continues as a one-cell bridge.

    Field moves are always safe (walls block).  On the bridge only left/right
    are safe; up/down falls off (reward -1, episode ends).  Stepping right off
    the last bridge cell reaches the goal (reward +1).  Actions: 0 right,
    1 left, 2 up, 3 down.  Observations are ``(x / span, y / (width - 1),
    on_field, on_bridge)`` with ``span = width + bridge_len``.  The default
    start is the middle of the field's left edge.
    """
    if width < 2 or bridge_len < 1:
        raise ContractError("cliff_bridge needs width >= 2 and bridge_len >= 1")
    mid = width // 2
    span = width + bridge_len
    cells: list[tuple[int, int]] = [(x, y) for y in range(width) for x in range(width)]
    cells += [(x, mid) for x in range(width, span)]
    index = {c: i for i, c in enumerate(cells)}
    goal, fall = len(cells), len(cells) + 1
    n = len(cells) + 2
    nxt = np.zeros((n, 4), dtype=np.int64)
    rew = np.zeros((n, 4))
    for i, (x, y) in enumerate(cells):
        on_bridge = x >= width
        for a, (dx, dy) in _MOVES.items():
            tx, ty = x + dx, y + dy
            if on_bridge and dy != 0:
                nxt[i, a], rew[i, a] = fall, -1.0
            elif tx == span:
                nxt[i, a], rew[i, a] = goal, 1.0
            elif (tx, ty) in index:
                nxt[i, a] = index[(tx, ty)]
            else:
                nxt[i, a] = i
    nxt[goal] = goal
    nxt[fall] = fall
    terminal = np.zeros(n, dtype=bool)
    terminal[[goal, fall]] = True

    obs = np.zeros((n, 4))
    for i, (x, y) in enumerate(cells):
        obs[i] = (x / span, y / (width - 1), float(x < width), float(x >= width))
    obs[goal] = (1.0, mid / (width - 1), 0.0, 0.0)
    obs[fall] = (0.0, 0.0, 0.0, 0.0)
    labels = [HIGH_RISK if x >= width else LOW_RISK for x, _ in cells] + [LOW_RISK, LOW_RISK]
    names = [f"({x},{y})" for x, y in cells] + ["goal", "fall"]
    starts = [index[(0, mid)]] + [index[c] for c in cells if c[0] < width and c != (0, mid)]
    spec = EnvSpec(f"cliff_bridge:{width}:{bridge_len}", 4, 4, max_episode_steps)
    return TabularEnv(spec, TabularMdp(nxt, rew, terminal), obs, starts, random_start, labels, names)


def field_distance(width: int, x: int, y: int) -> int:
    """Moves from field cell ``(x, y)`` to the first bridge cell."""
    return (width - x) + abs(y - width // 2)


ENV_REGISTRY: dict[str, Callable[..., TabularEnv]] = {
    "chain": chain_mdp,
    "cliff_bridge": cliff_bridge,
}


def make_env(name: str, max_episode_steps: int | None = None, random_start: bool | None = None) -> TabularEnv:
    """Build an environment from ``name[:arg[:arg]]``, e.g. ``chain:5`` or ``cliff_bridge:5:6``."""
    base, *args = name.split(":")
    if base not in ENV_REGISTRY:
        raise ContractError(f"unknown environment {base!r}; known: {sorted(ENV_REGISTRY)}")
    try:
        int_args = [int(a) for a in args]
    except ValueError:
        raise ContractError(f"bad environment arguments in {name!r}") from None
    kwargs = {}
    if max_episode_steps is not None:
        kwargs["max_episode_steps"] = max_episode_steps
    if random_start is not None and base == "cliff_bridge":
        kwargs["random_start"] = random_start
    return ENV_REGISTRY[base](*int_args, **kwargs)
