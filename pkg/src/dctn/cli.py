"""Command line entry point: ``dctn run | gen-data | report``."""

import argparse
import dataclasses
import logging
import os
import sys

from .data import gen_synthetic_domains, save_csv_dataset
from .errors import ConfigError, ParseError
from .harness import load_config, reaggregate, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 1, 2


def _run(args):
    cfg = load_config(args.config)
    changes = {}
    if args.seed_offset is not None:
        changes["seed_offset"] = args.seed_offset
    if args.output is not None:
        changes["output_dir"] = args.output
    cfg = dataclasses.replace(cfg, **changes)
    if not cfg.output_dir:
        raise ConfigError("no output directory: set output_dir or pass --output")
    report = run_experiment(cfg)
    for name, res in report.methods.items():
        print(f"{name:18s} {res.mean if res.mean is not None else 'failed':>6} "
              f"± {res.std}  gain={res.transfer_gain}  degraded={res.degraded_accuracy}")
    return EXIT_RUN if report.failed else EXIT_OK


def _gen_data(args):
    cfg = load_config(args.config)
    out = args.output or cfg.output_dir
    if not out:
        raise ConfigError("no output directory: set output_dir or pass --output")
    os.makedirs(out, exist_ok=True)
    sources, target, labels = gen_synthetic_domains(cfg.n_sources, cfg.n_classes, cfg.samples_per_domain,
                                                    cfg.shift_strength, cfg.data_seed)
    names = []
    for s in sources:
        save_csv_dataset(os.path.join(out, f"{s.name}.csv"), s)
        names.append(f"{s.name}.csv")
    # the target file carries labels for evaluation; the harness strips them before training
    save_csv_dataset(os.path.join(out, "target.csv"), target, labels=labels)
    print(f"source_csv = {', '.join(names)}")
    print("target_csv = target.csv")
    return EXIT_OK


def _report(args):
    report = reaggregate(args.input)
    print(f"rewrote summary for {len(report.methods)} methods in {args.input}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="dctn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed-offset", type=int, default=None)
    r.add_argument("--output", default=None)
    r.set_defaults(func=_run)
    g = sub.add_parser("gen-data", help="write synthetic domains as CSV files")
    g.add_argument("--config", required=True)
    g.add_argument("--output", default=None)
    g.set_defaults(func=_gen_data)
    a = sub.add_parser("report", help="re-aggregate an existing report directory")
    a.add_argument("--input", required=True)
    a.set_defaults(func=_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
