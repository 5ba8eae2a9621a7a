"""Command-line entry point: ``grtrack <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .ablation import run_ablation
from .checkpoint import CheckpointError
from .config import Config, ConfigError, load_config
from .data import (DataError, SyntheticSequenceConfig, drift_heavy_config, gen_sequence, list_sequences,
                   load_sequence, save_sequence)
from .macs import count_macs
from .memory import POLICIES
from .metrics import SequenceResult, metrics_table, read_results, table_csv, write_results
from .model import TrackerNet
from .tracker import track_sequence
from .training import make_optimizer, train

log = logging.getLogger("grtrack")

EXIT_CONFIG = 2
EXIT_DATA = 3


def default_seed() -> int:
    raw = os.environ.get("GRTRACK_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"GRTRACK_SEED must be an integer, got {raw!r}") from exc


def sequence_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def load_model(path: str | Path) -> tuple[TrackerNet, Config, dict, dict]:
    arrays, meta = checkpoint.load(path)
    if "config" not in meta:
        raise CheckpointError(f"{path}: no config echo in checkpoint")
    cfg = Config.from_dict(meta["config"])
    model = TrackerNet(cfg.model, seed=meta.get("model_seed", 0))
    try:
        model.load_state_dict(checkpoint.split(arrays, "model"))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: weights do not match the stored config ({exc})") from exc
    return model, cfg, arrays, meta


# -- subcommands -------------------------------------------------------------------


def cmd_gen_data(args) -> None:
    seed = default_seed() if args.seed is None else args.seed
    out = Path(args.out)
    for i in range(args.seqs):
        if args.drift is not None and args.drift > 0:
            cfg = drift_heavy_config(args.len, args.drift, args.distractors)
        else:
            cfg = SyntheticSequenceConfig(length=args.len, distractors=args.distractors)
        name = f"seq_{i:04d}"
        save_sequence(gen_sequence(cfg, sequence_seed(seed, i), name), out / name)
    log.info("wrote %d sequences to %s", args.seqs, out)


def cmd_train(args) -> None:
    cfg = load_config(args.config)
    if "GRTRACK_SEED" in os.environ:
        cfg.train.seed = default_seed()
    seqs = [load_sequence(p) for p in list_sequences(args.data)]
    opt, start = None, 0
    if args.resume:
        model, saved_cfg, arrays, meta = load_model(args.resume)
        if saved_cfg.model != cfg.model:
            raise ConfigError("resume checkpoint was trained with a different model config")
        opt = make_optimizer(model, cfg)
        try:
            opt.load_state_arrays(arrays)
        except ValueError as exc:
            raise CheckpointError(str(exc)) from exc
        start = int(meta.get("step", 0))
    else:
        model = TrackerNet(cfg.model, seed=cfg.train.seed)
    opt, hist = train(model, seqs, cfg, stage=args.stage, steps=args.steps, opt=opt, start_step=start,
                      batch_size=args.batch_size)
    checkpoint.save_training(args.out, model, opt, cfg, start + len(hist), {"stage": args.stage})
    if hist:
        log.info("final loss %.4f (initial %.4f)", hist[-1]["total"], hist[0]["total"])


def cmd_track(args) -> None:
    model, cfg, _, _ = load_model(args.ckpt)
    seq = load_sequence(args.seq)
    pred = track_sequence(seq.frames, seq.gt[0], model, cfg, args.policy, relevance=not args.no_relevance)
    write_results(args.out, [SequenceResult(seq.name, pred, seq.gt)])


def cmd_eval(args) -> None:
    results = read_results(args.results)
    gts = {}
    for p in list_sequences(args.gt):
        seq = load_sequence(p)
        gts[seq.name] = seq.gt
    missing = [r.name for r in results if r.name not in gts]
    if missing:
        raise DataError(f"no ground truth for sequences {missing}")
    Path(args.out).write_text(table_csv(metrics_table(results, gts)))


def cmd_bench_macs(args) -> None:
    cfg = load_config(args.config)
    n = len(cfg.model.relevance_layers)
    stages = range(n + 1) if args.stages is None else [args.stages]
    if any(not 0 <= s <= n for s in stages):
        raise ConfigError(f"--stages must be in 0..{n}")
    n_ref = cfg.memory_capacity
    base = count_macs(cfg.model, n_ref=n_ref, n_templates=cfg.memory.capacity_templates, stages=0).total
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config", "stages", "macs", "gmacs", "embed", "encoder", "ranking", "head", "ratio"])
    for s in stages:
        rep = count_macs(cfg.model, n_ref=n_ref, n_templates=cfg.memory.capacity_templates, stages=s)
        w.writerow([cfg.profile, s, rep.total, f"{rep.total / 1e9:.4f}", rep.component("embed"),
                    rep.component("encoder"), rep.component("ranking"), rep.component("head"),
                    f"{rep.total / base:.6f}"])
    Path(args.out).write_text(buf.getvalue())


def cmd_ablate(args) -> None:
    model, cfg, _, _ = load_model(args.ckpt)
    seqs = [load_sequence(p) for p in list_sequences(args.data)]
    policies = args.policies.split(",") if args.policies else list(POLICIES)
    bad = [p for p in policies if p not in POLICIES]
    if bad:
        raise ConfigError(f"unknown policies {bad}")
    rows = run_ablation(model, cfg, seqs, policies)
    Path(args.out).write_text(table_csv(rows))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grtrack", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write synthetic sequences")
    g.add_argument("--out", required=True)
    g.add_argument("--seqs", type=int, required=True)
    g.add_argument("--len", type=int, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--drift", type=float)
    g.add_argument("--distractors", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--stage", type=int, choices=(1, 2), default=1)
    t.add_argument("--resume")
    t.add_argument("--steps", type=int, help="override the stage's step count")
    t.add_argument("--batch-size", type=int)
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("track", help="track one sequence")
    k.add_argument("--ckpt", required=True)
    k.add_argument("--seq", required=True)
    k.add_argument("--policy", choices=POLICIES, required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--no-relevance", action="store_true", help="plain encoder, no token pruning")
    k.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score a results file")
    e.add_argument("--results", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench-macs", help="analytic MAC counts per number of pruning stages")
    b.add_argument("--config", required=True)
    b.add_argument("--stages", type=int)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench_macs)

    a = sub.add_parser("ablate", help="compare memory policies")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--policies", help="comma-separated subset")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
