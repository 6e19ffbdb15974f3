"""Command line entry point (``eqnet``).

Each subcommand prints one JSON summary line on stdout and exits 0 on
success, 2 on a usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys

from ..errors import EQNetError
from . import pipeline
from .config import load_config


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_train(args):
    cfg = _config(args)
    return pipeline.train_supernet(cfg, resume=args.resume, until_epoch=args.until_epoch)


def cmd_eval(args):
    cfg = _config(args) if args.config else None
    return pipeline.eval_subnet(args.checkpoint, args.spec, cfg)


def cmd_sample(args):
    return pipeline.sample_accuracy(_config(args), args.n)


def cmd_predictor(args):
    return pipeline.fit_predictor(_config(args))


def cmd_search(args):
    return pipeline.search(_config(args), args.target_wbits, args.target_abits, args.tolerance,
                           measure_top=not args.no_measure)


def cmd_report(args):
    return pipeline.report(_config(args), args.kind)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eqnet", description="Elastic quantization supernet toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help, config_required=True):
        s = sub.add_parser(name, help=help)
        s.add_argument("--config", required=config_required, help="key-value config file")
        s.add_argument("--seed", type=int, default=None, help="overrides EQNET_SEED and train.seed")
        s.set_defaults(fn=fn)
        return s

    s = add("train-supernet", cmd_train, "train the supernet")
    s.add_argument("--resume", default=None, help="checkpoint to resume from")
    s.add_argument("--until-epoch", type=int, default=None, help="stop after this epoch")

    s = add("eval-subnet", cmd_eval, "BN-calibrate and evaluate one subnet", config_required=False)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--spec", required=True, help="'all:8,asym,per_channel' or per-layer 'w|w|...'")

    s = add("sample-accuracy", cmd_sample, "measure random subnets for predictor training")
    s.add_argument("--n", type=int, default=None)

    add("train-predictor", cmd_predictor, "fit the accuracy predictor")

    s = add("search", cmd_search, "genetic search under a bit-width constraint")
    s.add_argument("--target-wbits", type=float, required=True)
    s.add_argument("--target-abits", type=float, required=True)
    s.add_argument("--tolerance", type=float, default=None)
    s.add_argument("--no-measure", action="store_true", help="skip measuring the top configurations")

    s = add("report", cmd_report, "write a CSV report")
    s.add_argument("--kind", required=True, choices=["moments", "rank-scatter", "convergence", "pareto"])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.fn(args)
    except (EQNetError, OSError) as exc:
        print(f"eqnet: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"command": args.command, **result}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
