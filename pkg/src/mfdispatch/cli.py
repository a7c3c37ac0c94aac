"""Command-line entry point: ``mfdispatch {train,eval,compare,mfq}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, mfqlinear
from .harness import METRICS, ExperimentConfig
from .simcore import ConfigError

log = logging.getLogger("mfdispatch")


def _config(args) -> ExperimentConfig:
    if args.config:
        cfg = harness.load_config(args.config)
    else:
        cfg = harness.preset(args.preset)
    changes = {}
    if getattr(args, "dispatcher", None):
        changes["dispatcher"] = args.dispatcher
    if getattr(args, "episodes", None) is not None:
        changes["episodes"] = args.episodes
    if getattr(args, "seeds", None):
        changes["seeds"] = [int(s) for s in args.seeds.split(",")]
    if args.out:
        changes["out_dir"] = args.out
    return cfg.with_(**changes) if changes else cfg


def _out(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out_dir)


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(cfg)
    harness.save_config(cfg, harness._ensure_writable(out) / "config.json")
    rec = harness.run_training(cfg, args.seed, out_dir=out,
                               progress=lambda r: log.info("episode %d  GMV %.1f  ORR %.3f  ADP %.3f",
                                                           r["episode"], r["GMV"], r["ORR"], r["ADP"]))
    (out / "run.json").write_text(json.dumps(rec.to_dict(), indent=2) + "\n")
    sim = rec.last_sim
    harness.emit_outputs(out, sim.history if sim else [], sim.gap_snapshots if sim else [], rec.episodes,
                         ["episode", *METRICS, "updates", "temperature"])
    if rec.diagnostic:
        log.error("training stopped: %s", rec.diagnostic)
        return 2
    log.info("best episode %s, checkpoint %s", rec.best_episode, rec.best_checkpoint)
    return 0


def _summary_rows(res) -> list[dict]:
    rows = [{"dispatcher": res.dispatcher, "seed": r["seed"], **{m: r[m] for m in METRICS}} for r in res.rows]
    rows.append({"dispatcher": res.dispatcher, "seed": "mean", **res.mean})
    rows.append({"dispatcher": res.dispatcher, "seed": "std", **res.std})
    return rows


def cmd_eval(args) -> int:
    cfg = _config(args)
    res = harness.run_eval(cfg, args.checkpoint)
    sim = res.sims[0]
    harness.emit_outputs(_out(cfg), sim.history, sim.gap_snapshots, _summary_rows(res),
                         ["dispatcher", "seed", *METRICS])
    for m in METRICS:
        print(f"{res.dispatcher} {m}: {res.mean[m]:.4f} +/- {res.std[m]:.4f}")
    return 0


def cmd_compare(args) -> int:
    cfg = _config(args)
    names = args.dispatchers.split(",")
    checkpoints = {}
    for item in args.checkpoint or []:
        name, _, path = item.partition("=")
        checkpoints[name] = path
    per_seed, aggregate, results = harness.compare(names, cfg, checkpoints=checkpoints, reference=args.reference)
    out = harness._ensure_writable(_out(cfg))
    (out / "compare.csv").write_text(harness._csv_text(aggregate, ["dispatcher", "metric", "mean", "std",
                                                                   "reference", "pct"]))
    (out / "compare_seeds.csv").write_text(harness._csv_text(per_seed, ["dispatcher", "metric", "seed", "value",
                                                                        "reference", "pct"]))
    for row in aggregate:
        pct = "n/a" if row["pct"] is None else f"{row['pct']:+.2f}%"
        print(f"{row['dispatcher']:6s} {row['metric']}: {row['mean']:.4f} ({pct})")
    return 0


def cmd_mfq(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.game == "coordination":
        game = mfqlinear.coordination_game()
        basis = mfqlinear.FeatureBasis.one_hot(game)
        oracle = [np.array([1.0, 0.0, 0.0, 2.0])] * 2
        explore = 0.0
    else:
        game = mfqlinear.chain_game()
        basis = mfqlinear.FeatureBasis.one_hot(game)
        oracle = [mfqlinear.value_iteration(game).ravel()]
        explore = 0.3
    alpha = mfqlinear.StepSize(args.alpha, args.alpha_horizon)
    rep = mfqlinear.run_convergence_experiment(game, basis, args.episodes, args.steps, alpha=alpha,
                                               temperature=mfqlinear.Temperature(1.0, args.tau), rng=rng,
                                               explore=explore, oracle=oracle)
    text = rep.to_jsonl()
    if args.out:
        out = harness._ensure_writable(args.out)
        (out / "mfq.jsonl").write_text(text)
    else:
        sys.stdout.write(text)
    print(json.dumps({"diverged": rep.diverged, "stable": rep.stable, "greedy": rep.greedy,
                      "oracle_distance": rep.oracle_distance, "preconditions": rep.preconditions}))
    return 1 if rep.diverged else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfdispatch", description="Multi-agent order dispatching experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--preset", default="desk", choices=sorted(harness.PRESETS))
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--dispatcher", choices=harness.DISPATCHERS)
        sp.add_argument("--seeds", help="comma-separated evaluation seeds")

    sp = sub.add_parser("train", help="train a learning dispatcher")
    common(sp)
    sp.add_argument("--episodes", type=int)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a dispatcher over seeds")
    common(sp)
    sp.add_argument("--checkpoint", help="checkpoint directory (learning dispatchers)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="compare dispatchers against a reference")
    common(sp)
    sp.add_argument("--dispatchers", default="RAN,RES,REV")
    sp.add_argument("--reference", default="RAN")
    sp.add_argument("--checkpoint", action="append", help="NAME=DIR, repeatable")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("mfq", help="linear mean-field Q convergence experiment")
    sp.add_argument("--game", choices=("coordination", "chain"), default="coordination")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.add_argument("--episodes", type=int, default=50)
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--alpha-horizon", type=float, default=100.0)
    sp.add_argument("--tau", type=float, default=200.0)
    sp.set_defaults(func=cmd_mfq)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as e:
        log.error("error: %s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
