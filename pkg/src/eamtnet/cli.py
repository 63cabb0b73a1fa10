"""``eamt`` command line: gen-data, train, eval, predict."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ABLATIONS, ConfigError, ExperimentConfig
from .phantom import DatasetError, generate_dataset, write_dataset
from .training import TrainingError


def _gen_data(args):
    pairs = generate_dataset(args.n, args.size, args.spacing, args.seed)
    m = write_dataset(pairs, args.out, seed=args.seed)
    print(f"wrote {len(m['samples'])} samples to {args.out}")


def _train(args):
    from .training import format_table, train

    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.ablation is not None:
        config = config.replace(ablation=args.ablation)
    report = train(config, args.data, args.out, deterministic=args.deterministic,
                   workers=args.workers)
    print(format_table({config.ablation: report["summary"]}))


def _eval(args):
    from .checkpoint import load_checkpoint
    from .training import evaluate

    ids = None
    if args.val_fold:
        _, header = load_checkpoint(args.ckpt)
        ids = header["extra"].get("val_ids")
        if ids is None:
            raise SystemExit("checkpoint records no validation fold")
    report = evaluate(args.ckpt, args.data, args.out, ids)
    print(json.dumps({"n_samples": report["n_samples"], "dsc": report["dsc"], "mae": report["mae"]},
                     indent=2))


def _predict(args):
    from .export import predict_one

    print(json.dumps(predict_one(args.ckpt, args.data, args.id, args.out), indent=2))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eamt", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic phantom dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=250)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--spacing", type=float, default=1.0, help="mm per pixel")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_gen_data)

    t = sub.add_parser("train", help="k-fold cross-validated training")
    t.add_argument("--config", help="flat JSON config; defaults apply to omitted keys")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--ablation", choices=ABLATIONS)
    t.add_argument("--deterministic", action="store_true",
                   help="single-threaded, bit-reproducible run")
    t.add_argument("--workers", type=int, default=1, help="train folds in parallel processes")
    t.set_defaults(func=_train)

    e = sub.add_parser("eval", help="score a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--val-fold", action="store_true",
                   help="restrict to the validation ids recorded in the checkpoint")
    e.set_defaults(func=_eval)

    r = sub.add_parser("predict", help="export predictions for one sample")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--id", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=_predict)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except (ConfigError, DatasetError, TrainingError, KeyError, ValueError) as e:
        print(f"eamt: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
