"""Variational diagnostics, human-normalized scores, metrics CSV and checkpoints.

The KL terms are observe-only: they are logged next to the training loss and
never enter it.  Unperturbed parameter blocks (encoder, SANE module) are
modelled as ``N(mu, eps I)`` against an ``N(0, I)`` prior, with ``eps`` a
small reporting constant.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .nncore import NetSpec, QNetworkParams
from .noisy import state_sigma
from .numkit import AdamState, ContractError, Rng

DEFAULT_KL_EPS = 1e-12
METRICS_COLUMNS = ("step", "episode", "episode_return", "loss", "mean_abs_sigma", "kl_term", "wallclock_ms")
CHECKPOINT_MAGIC = "SANEX-CKPT-v1"


# --------------------------------------------------------------------------- KL terms

def gaussian_kl_diag(mu, var_diag) -> float:
    """KL(N(mu, diag(var)) || N(0, I))."""
    mu = np.asarray(mu, dtype=np.float64).ravel()
    var = np.asarray(var_diag, dtype=np.float64).ravel()
    if mu.shape != var.shape:
        raise ContractError(f"mu has {mu.size} entries but var has {var.size}")
    if np.any(var <= 0.0):
        raise ContractError("variances must be strictly positive")
    return 0.5 * float(-np.sum(np.log(var)) + np.sum(var) + mu @ mu - mu.size)


def fixed_block_kl(mu, eps: float) -> float:
    """KL of an ``N(mu, eps I)`` block against ``N(0, I)``."""
    mu = np.asarray(mu, dtype=np.float64).ravel()
    k = mu.size
    if k == 0:
        return 0.0
    if eps <= 0:
        raise ContractError("eps must be positive")
    return 0.5 * (-k * math.log(eps) + k * eps + float(mu @ mu) - k)


def _concat(arrays: Iterable[np.ndarray]) -> np.ndarray:
    arrays = [np.asarray(a).ravel() for a in arrays]
    return np.concatenate(arrays) if arrays else np.zeros(0)


def encoder_vector(params: QNetworkParams) -> np.ndarray:
    return _concat(a for layer in params.encoder for a in (layer.W, layer.b))


def head_vector(params: QNetworkParams) -> np.ndarray:
    return _concat(a for layer in params.head for a in (layer.W, layer.b))


def noisynet_kl(params: QNetworkParams, eps: float = DEFAULT_KL_EPS) -> float:
    """Encoder block at fixed variance ``eps`` plus the head block with variances sigma**2."""
    if params.sigmas is None:
        raise ContractError(f"noisynet_kl needs NoisyNet params, got {params.strategy!r}")
    sig = _concat(a for layer in params.sigmas for a in (layer.W, layer.b))
    if np.any(sig == 0.0):
        raise ContractError("a NoisyNet sigma is exactly zero: log|Sigma| is -inf")
    mu = head_vector(params)
    var = sig * sig
    head = 0.5 * float(-np.sum(np.log(var)) + np.sum(var) + mu @ mu - mu.size)
    return fixed_block_kl(encoder_vector(params), eps) + head


def sane_state_kls(params: QNetworkParams, states: np.ndarray, eps: float = DEFAULT_KL_EPS,
                   include_fixed_blocks: bool = True) -> np.ndarray:
    """Per-state KL(q(theta | s) || p(theta)); the head shares variance sigma(h(s))**2."""
    if params.sane is None:
        raise ContractError(f"sane_batch_kl needs SANE params, got {params.strategy!r}")
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 1:
        states = states[None, :]
    if states.shape[0] == 0:
        raise ContractError("empty state batch")
    sigma = np.asarray(state_sigma(params, states))
    zero = np.flatnonzero(sigma == 0.0)
    if zero.size:
        raise ContractError(f"sigma(h(s)) is exactly zero for state rows {zero.tolist()}: log-singular KL")
    mu = head_vector(params)
    k2 = mu.size
    var = sigma * sigma
    kl = 0.5 * (-k2 * np.log(var) + k2 * var + float(mu @ mu) - k2)
    if include_fixed_blocks:
        theta = _concat(a for layer in params.sane.layers for a in (layer.W, layer.b))
        kl = kl + fixed_block_kl(encoder_vector(params), eps) + fixed_block_kl(theta, eps)
    return kl


def sane_batch_kl(params: QNetworkParams, states: np.ndarray, eps: float = DEFAULT_KL_EPS,
                  include_fixed_blocks: bool = True) -> float:
    """Average over a batch of states of the state-conditional KL."""
    return float(np.mean(sane_state_kls(params, states, eps, include_fixed_blocks)))


# --------------------------------------------------------------------------- human-normalized scores

@dataclass
class BaselineTable:
    entries: dict[str, tuple[float, float]]

    def __post_init__(self):
        for game, (human, rand) in self.entries.items():
            if human == rand:
                raise ContractError(f"baseline for {game} has human == random")

    def __contains__(self, game: str) -> bool:
        return game in self.entries

    def __getitem__(self, game: str) -> tuple[float, float]:
        return self.entries[game]


def load_baselines(path: str | Path | None = None) -> BaselineTable:
    """CSV ``game,human,random``; defaults to the shipped Atari baseline table."""
    if path is None:
        text = resources.files("sanex").joinpath("data/baselines.csv").read_text()
    else:
        text = _read_text(path)
    rows = csv.DictReader(io.StringIO(text))
    return BaselineTable({r["game"].strip(): (float(r["human"]), float(r["random"])) for r in rows})


def hns(agent_score: float, human: float, random: float) -> float:
    if human == random:
        raise ZeroDivisionError("human and random baselines are equal")
    return (agent_score - random) / (human - random)


def hns_table(scores: Mapping[str, float], baselines: BaselineTable,
              subset: Sequence[str] | None = None) -> dict[str, float]:
    games = list(subset) if subset is not None else list(scores)
    missing = [g for g in games if g not in scores or g not in baselines]
    if missing:
        raise ContractError(f"missing scores or baselines for: {', '.join(missing)}")
    return {g: hns(scores[g], *baselines[g]) for g in games}


def mean_hns(scores: Mapping[str, float], baselines: BaselineTable, subset: Sequence[str] | None = None) -> float:
    per_game = hns_table(scores, baselines, subset)
    if not per_game:
        raise ContractError("empty game subset")
    return sum(per_game.values()) / len(per_game)


def read_scores(path: str | Path) -> dict[str, float]:
    """CSV ``game,score`` (header optional, ``#`` comments allowed)."""
    scores = {}
    for row in csv.reader(io.StringIO(_read_text(path))):
        if not row or row[0].strip().startswith("#"):
            continue
        game, value = row[0].strip(), row[1].strip()
        if game == "game" and value == "score":
            continue
        scores[game] = float(value)
    return scores


def read_subset(path: str | Path) -> list[str]:
    return [line.strip() for line in _read_text(path).splitlines() if line.strip() and not line.startswith("#")]


def shipped_text(name: str) -> str:
    return resources.files("sanex").joinpath("data/" + name).read_text()


# --------------------------------------------------------------------------- sigma probe

@dataclass
class SigmaProbeReport:
    records: list[tuple[int, str, float]]
    means: dict[str, float] = field(default_factory=dict)

    def mean(self, label: str) -> float:
        return self.means[label]


def sigma_probe(params: QNetworkParams, env, states: Sequence | None = None) -> SigmaProbeReport:
    """Noise-free |sigma(h(s))| per state, aggregated by risk label.

    ``states`` is a sequence of ``(state_id, label, observation)``; defaults to
    every non-terminal state of ``env``.
    """
    if params.sane is None:
        raise ContractError(f"sigma probe needs a SANE strategy, got {params.strategy!r}")
    if states is None:
        states = env.probe_states()
    if not states:
        return SigmaProbeReport([], {})
    obs = np.array([o for _, _, o in states])
    abs_sigma = np.abs(np.asarray(state_sigma(params, obs)))
    records = [(int(sid), label, float(v)) for (sid, label, _), v in zip(states, abs_sigma)]
    means = {}
    for label in sorted({r[1] for r in records}):
        means[label] = float(np.mean([r[2] for r in records if r[1] == label]))
    return SigmaProbeReport(records, means)


# --------------------------------------------------------------------------- metrics CSV

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def metrics_csv(rows) -> str:
    out = io.StringIO()
    out.write(",".join(METRICS_COLUMNS) + "\n")
    for row in rows:
        out.write(",".join(_fmt(getattr(row, c)) for c in METRICS_COLUMNS) + "\n")
    return out.getvalue()


def write_metrics(rows, path: str | Path) -> None:
    _write_text(path, metrics_csv(rows))


def read_metrics(path: str | Path) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(_read_text(path))))


# --------------------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    params: QNetworkParams
    config: dict = field(default_factory=dict)
    step: int = 0
    target: QNetworkParams | None = None
    adam: AdamState | None = None
    rngs: dict[str, Rng] = field(default_factory=dict)

    @property
    def strategy(self) -> str:
        return self.params.strategy


def _array_entry(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in np.asarray(a).ravel()]}


def _array_from(entry: dict) -> np.ndarray:
    return np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])


def dumps_checkpoint(ck: Checkpoint) -> str:
    spec = ck.params.spec
    doc = {
        "format_version": 1,
        "strategy": spec.strategy,
        "net": {
            "obs_width": spec.obs_width,
            "n_actions": spec.n_actions,
            "encoder_sizes": list(spec.encoder_sizes),
            "head_sizes": list(spec.head_sizes),
            "sane_hidden": spec.sane_hidden,
        },
        "config": ck.config,
        "step": ck.step,
        "rng": {name: list(r.state()) for name, r in ck.rngs.items()},
        "arrays": {name: _array_entry(a) for name, a in ck.params.arrays().items()},
    }
    if ck.target is not None:
        doc["target_arrays"] = {name: _array_entry(a) for name, a in ck.target.arrays().items()}
    if ck.adam is not None:
        a = ck.adam
        doc["adam"] = {"t": a.t, "alpha": a.alpha, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps,
                       "m": _array_entry(a.m), "v": _array_entry(a.v)}
    return CHECKPOINT_MAGIC + "\n" + json.dumps(doc, indent=1) + "\n"


def _params_from(spec: NetSpec, arrays: dict) -> QNetworkParams:
    params = QNetworkParams(spec)
    for name, view in params.arrays().items():
        if name not in arrays:
            raise ContractError(f"checkpoint lacks array {name!r}")
        value = _array_from(arrays[name])
        if value.shape != view.shape:
            raise ContractError(f"array {name!r} has shape {value.shape}, expected {view.shape}")
        view[...] = value
    return params


def loads_checkpoint(text: str) -> Checkpoint:
    first, _, body = text.partition("\n")
    if first.strip() != CHECKPOINT_MAGIC:
        raise ContractError(f"not a checkpoint (expected {CHECKPOINT_MAGIC!r} on line 1, got {first[:40]!r})")
    doc = json.loads(body)
    net = doc["net"]
    spec = NetSpec(net["obs_width"], net["n_actions"], tuple(net["encoder_sizes"]), tuple(net["head_sizes"]),
                   doc["strategy"], net["sane_hidden"])
    params = _params_from(spec, doc["arrays"])
    target = _params_from(spec, doc["target_arrays"]) if "target_arrays" in doc else None
    adam = None
    if "adam" in doc:
        a = doc["adam"]
        adam = AdamState(_array_from(a["m"]), _array_from(a["v"]), a["t"], a["alpha"], a["beta1"], a["beta2"],
                         a["eps"])
    rngs = {name: Rng.from_state(state) for name, state in doc.get("rng", {}).items()}
    return Checkpoint(params, doc.get("config", {}), doc.get("step", 0), target, adam, rngs)


def save_checkpoint(ck: Checkpoint, path: str | Path) -> None:
    _write_text(path, dumps_checkpoint(ck))


def load_checkpoint(path: str | Path) -> Checkpoint:
    return loads_checkpoint(_read_text(path))


def checkpoint_from_result(result) -> Checkpoint:
    config = {k: (list(v) if isinstance(v, tuple) else v) for k, v in result.config.to_dict().items()}
    return Checkpoint(result.params, config, result.steps, result.target, result.adam, dict(result.rngs))


def _read_text(path: str | Path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc


def _write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
