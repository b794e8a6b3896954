"""Train SANE agents on cliff_bridge and compare |sigma| on bridge vs field cells.

    python scripts/risk_probe.py --config configs/cliff_bridge_sane.cfg --seeds 0 1 2 3 4
"""

import argparse
import time

from sanex.agent import evaluate, train_loop
from sanex.config import TrainConfig, load_config
from sanex.diagnostics import sigma_probe
from sanex.envs import HIGH_RISK, LOW_RISK, make_env
from sanex.numkit import Rng


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", help="base config file (defaults to TrainConfig defaults)")
    ap.add_argument("--strategy", default="simple_sane")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--steps", type=int, default=100_000)
    args = ap.parse_args()

    wins = 0
    for seed in args.seeds:
        overrides = dict(strategy=args.strategy, seed=seed, max_steps=args.steps)
        cfg = load_config(args.config, **overrides) if args.config else TrainConfig(env="cliff_bridge", **overrides)
        t0 = time.time()
        result = train_loop(cfg)
        env = make_env(cfg.env, cfg.max_episode_steps, cfg.random_start)
        report = sigma_probe(result.params, env)
        high, low = report.mean(HIGH_RISK), report.mean(LOW_RISK)
        mean_ret, _ = evaluate(result.params, env, 5, Rng(seed, 6), "off")
        wins += high < low
        print(f"seed={seed} high={high:.4g} low={low:.4g} ordered={high < low} "
              f"greedy_return={mean_ret:.2f} episodes={result.episodes} secs={time.time() - t0:.0f}", flush=True)
    print(f"ordered in {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
