"""Command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .cascade import MODES
from .config import PipelineConfig
from .errors import EnvTriCascadeError
from .trainer import SYSTEMS

log = logging.getLogger("envtricascade")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="pipeline config (YAML or JSON)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="override the output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="envtricascade", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("prep", parents=[common], help="condition WAVs into mel stacks")
    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--n-per-class", type=int, default=None)
    t = sub.add_parser("train", parents=[common], help="train one sub-system")
    t.add_argument("--system", required=True, choices=SYSTEMS)
    for name in ("infer", "eval"):
        q = sub.add_parser(name, parents=[common])
        q.add_argument("--mode", default="cascade", choices=MODES)
        q.add_argument("--split", default="test", choices=("train", "val", "test"))
    r = sub.add_parser("report", parents=[common], help="tabulate all eval reports")
    r.add_argument("--split", default="test", choices=("train", "val", "test"))
    return p


def run(args) -> int:
    cfg = PipelineConfig.load(args.config, seed=args.seed, out_dir=args.out)
    print(f"config {cfg.hash} seed={cfg.seed} out={cfg.out_dir}")
    if args.command == "prep":
        manifest, failed = pipeline.run_prep(cfg)
        print(f"wrote {manifest}")
        if failed:
            print(f"{failed} file(s) failed; see {manifest.parent / 'errors.log'}",
                  file=sys.stderr)
            return EXIT_DATA
    elif args.command == "synth":
        paths = pipeline.run_synth(cfg, args.n_per_class)
        for (split, system), p in sorted(paths.items()):
            print(f"{split:5s} {system}: {p}")
    elif args.command == "train":
        res = pipeline.run_train(cfg, args.system)
        print(f"System {args.system}: best epoch {res.best_epoch} {res.best_metrics}")
        print(f"checkpoint {cfg.checkpoint(args.system)}")
    elif args.command == "infer":
        path, _, _ = pipeline.run_infer(cfg, args.mode, args.split)
        print(f"wrote {path}")
    elif args.command == "eval":
        rep = pipeline.run_eval(cfg, args.mode, args.split)
        from .metrics import render_table
        print(render_table([rep]), end="")
    elif args.command == "report":
        print(pipeline.run_report(cfg, args.split), end="")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except EnvTriCascadeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
