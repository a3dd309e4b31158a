"""Command-line entry point: ``mmfl --config cfg.json --out results``."""

import argparse
import json
import os
import sys

from .config import SCHEMES, config_from_dict
from .errors import MMFLError
from .experiment import run_experiment
from .report import emit_metrics, plot_metrics


def build_parser():
    p = argparse.ArgumentParser(prog="mmfl", description="Multi-model wireless FL simulator")
    p.add_argument("--config", required=True, help="experiment JSON file")
    p.add_argument("--scheme", help=f"comma separated subset of {','.join(SCHEMES)}")
    p.add_argument("--seeds", type=int, help="run seeds 0..n-1")
    p.add_argument("--out", help="output directory (default: output_dir of the config)")
    p.add_argument("--eval-bound", action="store_true", help="evaluate the gap bound")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--no-plots", action="store_true", help="skip the figures")
    return p


def resolve_config(args):
    with open(args.config) as fh:
        raw = json.load(fh)
    if args.scheme:
        raw["schemes"] = [s.strip() for s in args.scheme.split(",") if s.strip()]
    if args.seeds is not None:
        raw["seeds"] = args.seeds
    if args.out:
        raw["output_dir"] = args.out
    if args.eval_bound:
        raw["eval_bound"] = True
    if args.workers is not None:
        raw["workers"] = args.workers
    return config_from_dict(raw)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        details = {}
        records = run_experiment(cfg, details)
        accuracy = cfg.task.type != "synthetic"
        extra = {"config": cfg.to_dict()}
        if details.get("bounds"):
            extra["bounds"] = details["bounds"]
        csv_path, json_path = emit_metrics(records, cfg.output_dir, accuracy, extra)
        figures = [] if args.no_plots else plot_metrics(records, cfg.output_dir, accuracy)
    except (MMFLError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"mmfl: error: {exc}", file=sys.stderr)
        return 1
    for path in [csv_path, json_path, *figures]:
        print(os.path.relpath(path))
    return 0


if __name__ == "__main__":
    sys.exit(main())
