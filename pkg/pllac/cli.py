"""
Command-line entry point
========================
    python -m pllac synth    --out data/blobs.csv
    python -m pllac inject   data/raw.csv --out-features pl.csv --out-candidates pl.txt
    python -m pllac split    --config run.cfg --out splits/
    python -m pllac theta    --pll pl.csv --unlabeled u.csv --out theta_curve.csv
    python -m pllac train    --config run.cfg --epochs 200 --theta fixed:0.7
    python -m pllac grid     --config run.cfg --sweep lambda=0.1,0.5,1.0 --sweep t=1,2,3
    python -m pllac baseline --config run.cfg --pll-loss proden
    python -m pllac eval     --checkpoint runs/checkpoint.json --test test.csv
    python -m pllac serve    --port 8000

Every ExperimentConfig key can be given as `--key value` after the
subcommand options; flags win over the config file.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np
import pandas as pd

from pllac.config import LOG_LEVEL, build_config, read_config_file
from pllac.data import (
    inject_candidates, load_csv, load_indexed_csv, make_augmented_split, make_blobs, save_features, save_partial,
)
from pllac.errors import ConfigError, PLLACError
from pllac.evaluation import evaluate_scores
from pllac.harness import run_grid, run_threshold_baseline, run_trial
from pllac.mixprop import estimate_theta
from pllac.model import checkpoint_metadata, load_checkpoint, predict_proba
from pllac.report_service import open_sink, save_grid, save_theta_curve, save_trial
from pllac.risk import baseline_threshold_predict, threshold_scores
from pllac.utils import standardize

logger = logging.getLogger(__name__)

# subcommands that accept --key value config overrides
CONFIG_COMMANDS = ("split", "train", "baseline", "grid")


def parse_overrides(tokens):
    """`--key value` / `--key=value` pairs into a dict with dashes turned into underscores."""
    overrides = {}
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--"):
            raise ConfigError(f"unexpected argument {token!r}")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"missing value for {token}")
            value = tokens[i + 1]
            i += 2
        overrides[key.replace("-", "_")] = value
    return overrides


def parse_sweeps(specs):
    """['lambda=0.1,0.5', 't=1,2'] -> {'lambda': ['0.1', '0.5'], 't': ['1', '2']}"""
    axes = {}
    for spec in specs or []:
        if "=" not in spec:
            raise ConfigError(f"sweep must look like key=v1,v2: {spec!r}")
        key, values = spec.split("=", 1)
        axes[key.strip().replace("-", "_")] = [v.strip() for v in values.split(",") if v.strip()]
    return axes


def load_experiment_config(args, extra):
    file_values = read_config_file(args.config) if args.config else {}
    return build_config(file_values, parse_overrides(extra))


def read_features(path, label_column="label"):
    df = pd.read_csv(path, encoding="utf-8")
    if label_column in df.columns:
        df = df.drop(columns=[label_column])
    return df.to_numpy(dtype=np.float64)


# ──────────────────────────────────────────────
# Subcommands
# ──────────────────────────────────────────────
def cmd_synth(args, extra):
    rng = np.random.default_rng(args.seed)
    data = make_blobs(args.n_per_class, args.k_known, rng, separation=args.separation,
                      overlap=args.overlap, d=args.d)
    save_features(data.features, args.out, labels=data.labels)
    logger.info(f"Synthetic blobs written: {args.out} (n={data.n}, k={data.k}, ac class {data.k - 1})")


def cmd_inject(args, extra):
    data = load_csv(args.data, args.label_column)
    partial = inject_candidates(data, np.random.default_rng(args.seed))
    save_partial(partial, args.out_features, args.out_candidates)
    logger.info(f"Candidate sets written: {args.out_candidates} (mean size {partial.candidates.sum(axis=1).mean():.2f})")


def cmd_split(args, extra):
    cfg = load_experiment_config(args, extra)
    if cfg.dataset is None:
        raise ConfigError("split needs --dataset")
    split = make_augmented_split(load_csv(cfg.dataset, cfg.label_column), cfg.ac_classes, cfg.test_fraction,
                                 np.random.default_rng(cfg.seed), cfg.unlabeled_count)
    out = args.out
    save_partial(split.pll_train, os.path.join(out, "pll_features.csv"), os.path.join(out, "pll_candidates.txt"))
    save_features(split.unlabeled, os.path.join(out, "unlabeled.csv"))
    save_features(split.test_features, os.path.join(out, "test.csv"), labels=split.test_labels)
    logger.info(f"Split written to {out}: removed {split.removed_fraction:.1%} of training rows")


def cmd_theta(args, extra):
    estimate = estimate_theta(read_features(args.pll), read_features(args.unlabeled),
                              rng=np.random.default_rng(args.seed), bandwidth=args.bandwidth)
    if args.out:
        save_theta_curve(estimate, args.out)
    print(f"{estimate.theta_hat:.6f}")


def _run_and_save(cfg, runner):
    sink = open_sink(cfg.output)
    result = runner(cfg, sink=sink)
    save_trial(result, cfg.output)
    if result.report is not None:
        print(json.dumps(result.report.to_dict()))
    return 0 if result.status == "ok" else 2


def cmd_train(args, extra):
    return _run_and_save(load_experiment_config(args, extra), run_trial)


def cmd_baseline(args, extra):
    return _run_and_save(load_experiment_config(args, extra), run_threshold_baseline)


def cmd_grid(args, extra):
    cfg = load_experiment_config(args, extra)
    df = run_grid(cfg, parse_sweeps(args.sweep), sink=open_sink(cfg.output), workers=args.workers)
    save_grid(df, cfg.output)
    print(df.to_string(index=False))


def cmd_eval(args, extra):
    params = load_checkpoint(args.checkpoint)
    features, labels = load_indexed_csv(args.test, args.label_column)
    standardizer = checkpoint_metadata(args.checkpoint).get("standardizer")
    if standardizer:
        features = standardize(features, np.asarray(standardizer["mean"]), np.asarray(standardizer["std"]))
    probs = predict_proba(params, features)
    if args.threshold is not None:
        report = evaluate_scores(threshold_scores(probs), labels,
                                 pred=baseline_threshold_predict(probs, args.threshold))
    else:
        report = evaluate_scores(probs, labels)
    print(json.dumps(report.to_dict()))


def cmd_serve(args, extra):
    import uvicorn

    uvicorn.run("pllac.main:app", host=args.host, port=args.port)


# ──────────────────────────────────────────────
# Parser
# ──────────────────────────────────────────────
def build_parser():
    parser = argparse.ArgumentParser(prog="pllac", description="Partial-label learning with augmented classes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a Gaussian-blob dataset with an augmented cluster")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-class", type=int, default=500)
    p.add_argument("--k-known", type=int, default=3)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inject", help="add uniform candidate sets to a labeled CSV")
    p.add_argument("data")
    p.add_argument("--out-features", required=True)
    p.add_argument("--out-candidates", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("split", help="augmented-class split of a labeled dataset", allow_abbrev=False)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("theta", help="estimate the mixture proportion and export the distance curve")
    p.add_argument("--pll", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--out")
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_theta)

    for name, func, text in (("train", cmd_train, "run one trial"),
                             ("baseline", cmd_baseline, "run the threshold baseline")):
        p = sub.add_parser(name, help=text, allow_abbrev=False)
        p.add_argument("--config")
        p.set_defaults(func=func)

    p = sub.add_parser("grid", help="sweep config axes, several trials per cell", allow_abbrev=False)
    p.add_argument("--config")
    p.add_argument("--sweep", action="append", required=True, help="key=v1,v2,...")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled test CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None):
    logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and args.command not in CONFIG_COMMANDS:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    try:
        return args.func(args, extra) or 0
    except PLLACError as e:
        logger.error(f"❌ {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
