"""Experiment configuration and its flat ``key = value`` text format.

Grammar: one ``key = value`` per line; ``#`` starts a comment; blank lines are
ignored.  Keys are :class:`TrainConfig` field names.  Values: integers,
floats, ``true``/``false``, ``none``, bare strings, and comma-separated
integer lists for layer sizes (an empty value means no layers).
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from pathlib import Path

from .nncore import STRATEGIES
from .numkit import ContractError


@dataclass
class TrainConfig:
    env: str = "cliff_bridge"
    strategy: str = "simple_sane"
    gamma: float = 0.99
    lr: float = 6.25e-5
    adam_eps: float = 1.5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 32
    update_frequency: int = 4
    copy_frequency: int = 1000
    buffer_capacity: int = 50_000
    warmup_transitions: int = 1000
    max_steps: int = 100_000
    max_episode_steps: int = 100
    random_start: bool = False
    epsilon_start: float = 1.0
    epsilon_end: float = 0.01
    epsilon_anneal_steps: typing.Optional[int] = None  # none: 10% of max_steps
    seed: int = 0
    eval_episodes: int = 10
    clip_rewards: bool = True
    encoder_sizes: tuple = (64,)
    head_sizes: tuple = (64,)
    sane_hidden: int = 256
    literal_sigma_states: bool = False
    freeze_noise: bool = False
    log_interval: int = 100
    record_wallclock: bool = False
    kl_epsilon: float = 1e-12

    def __post_init__(self):
        self.encoder_sizes = tuple(int(v) for v in self.encoder_sizes)
        self.head_sizes = tuple(int(v) for v in self.head_sizes)
        self.validate()

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ContractError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractError(f"gamma must lie in [0, 1], got {self.gamma}")
        for name in ("batch_size", "update_frequency", "copy_frequency", "buffer_capacity",
                     "max_episode_steps", "eval_episodes", "sane_hidden", "log_interval"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("warmup_transitions", "max_steps"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be non-negative, got {getattr(self, name)}")
        if any(w < 1 for w in (*self.encoder_sizes, *self.head_sizes)):
            raise ContractError("layer sizes must be positive")
        if self.lr <= 0 or self.adam_eps <= 0 or self.kl_epsilon <= 0:
            raise ContractError("lr, adam_eps and kl_epsilon must be positive")

    def anneal_steps(self) -> int:
        if self.epsilon_anneal_steps is not None:
            return self.epsilon_anneal_steps
        return max(1, self.max_steps // 10)

    def epsilon(self, step: int) -> float:
        """Linear schedule from ``epsilon_start`` to ``epsilon_end``, then constant."""
        frac = min(1.0, step / self.anneal_steps())
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)

    def to_dict(self) -> dict[str, object]:
        return dataclasses.asdict(self)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse_value(key: str, raw: str, hint):
    text = raw.strip()
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        if text.lower() == "none":
            return None
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    try:
        if hint is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is tuple:
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text
    except ValueError:
        raise ContractError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str, **overrides) -> TrainConfig:
    hints = typing.get_type_hints(TrainConfig)
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in hints:
            raise ContractError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw, hints[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def load_config(path: str | Path, **overrides) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, **overrides)


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in cfg.to_dict().items())
