"""Train DQN agents on the 5-state chain and compare the learned Q with value iteration.

    python scripts/chain_convergence.py --config configs/chain.cfg --strategies epsilon_greedy simple_sane
"""

import argparse
import time

import numpy as np

from sanex.agent import train_loop
from sanex.config import TrainConfig, load_config
from sanex.envs import make_env, value_iteration
from sanex.noisy import forward_batch


def chain_report(cfg: TrainConfig):
    """Train once; return (greedy policy optimal, max |Q(s, a*) - Q*(s, a*)|, seconds)."""
    t0 = time.time()
    result = train_loop(cfg)
    env = make_env(cfg.env, cfg.max_episode_steps, cfg.random_start)
    q_star = value_iteration(env.mdp, cfg.gamma, tol=1e-12)
    live = ~env.mdp.terminal
    q, _ = forward_batch(result.params, env.observations[live])
    best = q_star[live].argmax(axis=1)
    rows = np.arange(best.size)
    optimal = bool(np.array_equal(q.argmax(axis=1), best))
    err = float(np.max(np.abs(q[rows, best] - q_star[live][rows, best])))
    return optimal, err, time.time() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/chain.cfg")
    ap.add_argument("--strategies", nargs="+", default=["epsilon_greedy", "simple_sane"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = ap.parse_args()
    for strategy in args.strategies:
        wins = 0
        for seed in args.seeds:
            cfg = load_config(args.config, strategy=strategy, seed=seed)
            optimal, err, secs = chain_report(cfg)
            wins += optimal and err <= 0.1
            print(f"{strategy} seed={seed} optimal={optimal} max_q_err={err:.4f} secs={secs:.0f}", flush=True)
        print(f"{strategy}: converged in {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
