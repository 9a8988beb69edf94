"""Command line interface.

Subcommands::

    sdrate generate   --config C --out data.csv [--with-latent] [--seed S]
    sdrate estimate   --data data.csv [--config C] --out report.json [--which all]
    sdrate plot-data  --report report.json --data data.csv --which imp_cms1 --out f.csv
    sdrate replicate  --config C --reps R --out table.csv [--seed S]

Exit status: 0 on success, 1 when estimation fails (or any replication
fails), 2 on usage, configuration or parse errors.  Diagnostics go to
standard error; ``--out -`` writes data to standard output.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import __version__
from .config import PipelineConfig, load_config
from .exceptions import ConfigurationError, DataParseError, MissingStage, SDRError
from .io import (
    PLOT_KINDS,
    build_report,
    plot_rows,
    read_dataset,
    read_report,
    write_report,
    write_rows,
    write_simulated,
)
from .models import normalize_which, run_pipeline
from .simulation import generate_study1, run_replications

EXIT_OK = 0
EXIT_ESTIMATION = 1
EXIT_USAGE = 2

logger = logging.getLogger("sdrate")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        cfg.smoother = dataclasses.replace(cfg.smoother, n_threads=args.threads)
    if getattr(args, "seed", None) is not None:
        cfg.study1 = dataclasses.replace(cfg.study1, seed=args.seed)
    return cfg


def cmd_generate(args) -> int:
    cfg = _config(args)
    sim = generate_study1(cfg.study1)
    write_simulated(args.out, sim, with_latent=args.with_latent)
    logger.info("wrote %d rows to %s", sim.data.n, args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _config(args)
    which = normalize_which(args.which)
    data, _ = read_dataset(args.data)
    result = run_pipeline(data, cfg, which)
    if result.implicit_stages:
        logger.info("stages run implicitly: %s", ", ".join(result.implicit_stages))
    write_report(args.out, build_report(result))
    for name, est in result.estimates.items():
        logger.info("%-5s ate=%.6g variance=%s", name, est.ate, result.variances.get(name))
    return EXIT_OK


def cmd_plot_data(args) -> int:
    report = read_report(args.report)
    data, _ = read_dataset(args.data)
    header, rows = plot_rows(report, data, args.which)
    write_rows(args.out, header, rows)
    return EXIT_OK


def cmd_replicate(args) -> int:
    cfg = _config(args)

    def progress(rep):
        logger.info("replication %d/%d done", rep + 1, args.reps)

    table = run_replications(cfg.study1, args.reps, cfg, progress=progress)
    table.to_csv(args.out)
    for name, s in table.summary().items():
        logger.info("%-5s %s", name, s)
    if not table.all_ok:
        logger.error("some replications failed")
        return EXIT_ESTIMATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdrate",
        description="Average treatment effect estimation with sufficient dimension reduction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--verbose", action="store_true", help="log progress to stderr")

    g = sub.add_parser("generate", help="simulate a Study 1 dataset")
    g.add_argument("--config", help="YAML configuration file")
    g.add_argument("--out", required=True, help="output CSV ('-' for stdout)")
    g.add_argument("--with-latent", action="store_true", help="add y1,y0 columns")
    g.add_argument("--seed", type=int, help="override study1.seed")
    common(g)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("estimate", help="fit the models and write a report")
    e.add_argument("--data", required=True, help="dataset CSV with header x1..xp,y,t")
    e.add_argument("--config", help="YAML configuration file")
    e.add_argument("--out", required=True, help="output JSON report ('-' for stdout)")
    e.add_argument("--which", default="all",
                   help="comma-separated subset of imp,ipw,aipw,aipw2 or 'all'")
    e.add_argument("--threads", type=int, help="override smoother.n_threads")
    common(e)
    e.set_defaults(func=cmd_estimate)

    p = sub.add_parser("plot-data", help="export the data behind a diagnostic figure")
    p.add_argument("--report", required=True, help="JSON report from 'estimate'")
    p.add_argument("--data", required=True, help="dataset CSV used for the report")
    p.add_argument("--which", required=True, choices=PLOT_KINDS)
    p.add_argument("--out", required=True, help="output CSV ('-' for stdout)")
    common(p)
    p.set_defaults(func=cmd_plot_data)

    r = sub.add_parser("replicate", help="run a Study 1 replication study")
    r.add_argument("--config", help="YAML configuration file")
    r.add_argument("--reps", type=int, required=True)
    r.add_argument("--out", required=True, help="output CSV ('-' for stdout)")
    r.add_argument("--seed", type=int, help="override the base seed (study1.seed)")
    r.add_argument("--threads", type=int, help="override smoother.n_threads")
    common(r)
    r.set_defaults(func=cmd_replicate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "reps", 0) is not None and getattr(args, "reps", 0) < 0:
        parser.error("--reps must be >= 0")
    try:
        return args.func(args)
    except DataParseError as exc:
        print(f"sdrate: parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, MissingStage) as exc:
        print(f"sdrate: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SDRError as exc:
        stage = getattr(exc, "stage", None)
        prefix = f"stage {stage}: " if stage else ""
        print(f"sdrate: estimation failed: {prefix}{type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_ESTIMATION
    except (OSError, ValueError) as exc:
        print(f"sdrate: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
