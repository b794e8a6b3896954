"""Command-line entry point: train, eval, probe, score-hns, gradcheck."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import diagnostics as diag
from .agent import TrainingDiverged, evaluate, train_loop
from .config import dump_config, load_config
from .envs import make_env
from .gradcheck import GRAD_STRATEGIES, REL_TOL, run_gradcheck
from .numkit import ContractError, Rng

EVAL_STREAM = 6


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sanex", description="State-aware noisy exploration workbench")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one seeded agent")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", default="runs/latest")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, required=True)
    e.add_argument("--noise", choices=("on", "off"), required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--env", help="override the environment stored in the checkpoint")

    pr = sub.add_parser("probe", help="per-state |sigma| of a SANE checkpoint")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--env", required=True)
    pr.add_argument("--out", help="also write the per-state CSV here")

    s = sub.add_parser("score-hns", help="human-normalized scores")
    s.add_argument("--scores", required=True)
    s.add_argument("--subset")
    s.add_argument("--baselines", help="CSV game,human,random (default: shipped table)")
    s.add_argument("--reported", type=float, help="published suite mean to compare against")

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--nets", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    return p


def _cmd_train(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    result = train_loop(cfg)
    out = Path(args.out)
    diag.write_metrics(result.metrics, out / "metrics.csv")
    diag.save_checkpoint(diag.checkpoint_from_result(result), out / "checkpoint.ckpt")
    (out / "config.cfg").write_text(dump_config(cfg))
    print(f"trained strategy={cfg.strategy} env={cfg.env} seed={cfg.seed} steps={result.steps} "
          f"updates={result.updates} episodes={result.episodes} out={out}")
    return 0


def _env_for(ck: diag.Checkpoint, name: str | None):
    cfg = ck.config
    env = make_env(name or cfg.get("env", "cliff_bridge"), cfg.get("max_episode_steps"), cfg.get("random_start"))
    if env.spec.obs_width != ck.params.spec.obs_width or env.spec.n_actions != ck.params.spec.n_actions:
        raise ContractError(f"environment {env.spec.name} does not fit the checkpoint network")
    return env


def _cmd_eval(args) -> int:
    ck = diag.load_checkpoint(args.checkpoint)
    env = _env_for(ck, args.env)
    mean, std = evaluate(ck.params, env, args.episodes, Rng(args.seed, EVAL_STREAM), args.noise)
    print(f"mean_return={mean!r} std={std!r} episodes={args.episodes} noise={args.noise}")
    return 0


def _cmd_probe(args) -> int:
    ck = diag.load_checkpoint(args.checkpoint)
    env = _env_for(ck, args.env)
    report = diag.sigma_probe(ck.params, env)
    lines = ["state,name,label,abs_sigma"]
    lines += [f"{sid},{env.state_names[sid]},{label},{v!r}" for sid, label, v in report.records]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    for label, m in report.means.items():
        print(f"mean_abs_sigma[{label}]={m!r}")
    return 0


def _cmd_score_hns(args) -> int:
    scores = diag.read_scores(args.scores)
    baselines = diag.load_baselines(args.baselines)
    subset = diag.read_subset(args.subset) if args.subset else None
    table = diag.hns_table(scores, baselines, subset)
    print("game,hns")
    for game, value in table.items():
        print(f"{game},{value!r}")
    mean = diag.mean_hns(scores, baselines, subset)
    print(f"mean_hns={mean!r} games={len(table)}")
    if args.reported is not None:
        print(f"reported_mean_hns={args.reported!r} difference={mean - args.reported!r} (informational)")
    return 0


def _cmd_gradcheck(args) -> int:
    ok = True
    for strategy in GRAD_STRATEGIES:
        r = run_gradcheck(strategy, nets=args.nets, seed=args.seed)
        ok &= r.ok
        status = "PASS" if r.ok else "FAIL"
        print(f"{status} {strategy}: nets={r.nets} coords={r.coords} max_rel_err={r.max_rel_err:.3e} "
              f"(tol {REL_TOL:g}) worst={r.worst_name}")
    return 0 if ok else 1


COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "probe": _cmd_probe,
    "score-hns": _cmd_score_hns,
    "gradcheck": _cmd_gradcheck,
}


def cli_main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except TrainingDiverged as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
    except (ContractError, KeyError, ValueError) as exc:
        print(f"error: invalid: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
    return 1


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
