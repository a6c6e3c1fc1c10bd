"""Command-line front end.

    bnnlab train        --config exp.ini [--seed N] [--out DIR] [--method NAME]
    bnnlab predict      --config exp.ini [--seed N] [--out DIR]
    bnnlab compare      --config exp.ini [--parallel] [--seed N] [--out DIR]
    bnnlab evidence     --config exp.ini [--seed N] [--out DIR]
    bnnlab sample-prior --config exp.ini [--seed N] [--out DIR]
    bnnlab gen-data     --config exp.ini [--seed N] [--out DIR]

Exit codes: 0 success, 2 config problems, 3 data problems, 4 numerical
failures (divergence, collapse, non-factorable kernels, ...).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ConfigError, DataError, NumericalError
from .experiments import (
    parse_config,
    run_compare,
    run_evidence,
    run_experiment,
    run_gen_data,
    run_predict,
    run_sample_prior,
)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bnnlab",
                                description="Train and compare uncertainty-aware networks.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text, parallel=False):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="experiment config (INI)")
        sp.add_argument("--seed", type=int, default=None, help="override [run] seed")
        sp.add_argument("--out", default=None, help="override [run] out directory")
        sp.add_argument("--method", default=None,
                        help="override [method] name (bbb, mc_dropout, hmc, gp, map)")
        if parallel:
            sp.add_argument("--parallel", action="store_true",
                            help="run the compared methods in separate processes")
        return sp

    add("train", "train one method and write run artifacts")
    add("predict", "predict at the test inputs from a stored posterior")
    add("compare", "train several methods on the same data", parallel=True)
    add("evidence", "Laplace model evidence report for the configured model")
    add("sample-prior", "draw prior network outputs at probe inputs")
    add("gen-data", "materialise the configured dataset to disk")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "out": args.out,
                 "method": getattr(args, "method", None)}
    try:
        cfg = parse_config(path=args.config, overrides=overrides)
        if args.command == "train":
            res = run_experiment(cfg)
            print(f"wrote {res['metrics_path']}")
            for k, v in res["metrics"].items():
                print(f"{k} = {v:.6g}")
        elif args.command == "predict":
            res = run_predict(cfg)
            print(f"wrote {res['predictions']} ({res['n']} rows)")
        elif args.command == "compare":
            text = Path(args.config).read_text()
            res = run_compare(cfg, text, parallel=args.parallel)
            print(f"wrote {res['comparison']}")
        elif args.command == "evidence":
            res = run_evidence(cfg)
            print(res["text"], end="")
        elif args.command == "sample-prior":
            res = run_sample_prior(cfg)
            print(f"wrote {res['normality']}")
        elif args.command == "gen-data":
            res = run_gen_data(cfg)
            print("wrote " + ", ".join(str(v) for k, v in sorted(res.items())
                                       if k not in ("n",)))
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
