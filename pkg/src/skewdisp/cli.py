"""Command line entry point.

    skewdisp init       --config PATH
    skewdisp moments    --config PATH [--out DIR] [--threads N]
    skewdisp dispersion --config PATH [--out DIR] [--threads N]
    skewdisp regress    --config PATH [--out DIR] [--threads N]
    skewdisp oos        --config PATH [--out DIR] [--threads N]
    skewdisp backtest   --config PATH [--out DIR] [--threads N]
    skewdisp simulate   --out DIR [--config PATH] [--seed U64] [--threads N]

Exit codes: 0 success, 1 validation, 2 data, 3 degenerate statistic.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

EXIT_OK, EXIT_VALIDATION, EXIT_DATA, EXIT_DEGENERATE = 0, 1, 2, 3
STAGE_COMMANDS = ("moments", "dispersion", "regress", "oos", "backtest")
LOCK_NAME = ".skewdisp.lock"

log = logging.getLogger("skewdisp")


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skewdisp", description="Skewness-dispersion predictor pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("init", help="write a documented config template")
    p.add_argument("--config", default="skewdisp.cfg", help="path of the template to create")

    for name in STAGE_COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True)
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--threads", type=_positive, help="worker threads for the numeric libraries")

    p = sub.add_parser("simulate", help="write a synthetic study and its config")
    p.add_argument("--out", required=True, help="directory for the study")
    p.add_argument("--config", help="config whose sim_* keys size the study")
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--threads", type=_positive)
    return parser


def _set_threads(n) -> None:
    if n is None:
        return
    for var in ("POLARS_MAX_THREADS", "OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


class OutputLock:
    """Exclusive marker file guarding an output directory against concurrent runs."""

    def __init__(self, directory: str):
        self.path = os.path.join(directory, LOCK_NAME)
        self.fd = None

    def __enter__(self):
        from .errors import ValidationError

        os.makedirs(os.path.dirname(self.path), exist_ok=True)
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
        except FileExistsError:
            raise ValidationError(f"output directory is in use ({self.path} exists); "
                                  "remove it if no other run is active") from None
        os.write(self.fd, f"{os.getpid()}\n".encode())
        return self

    def __exit__(self, *exc):
        os.close(self.fd)
        os.unlink(self.path)
        return False


def _run(args) -> int:
    from . import config as config_mod
    from . import pipeline

    if args.command == "init":
        config_mod.write_template(args.config)
        print(args.config)
        return EXIT_OK

    if args.command == "simulate":
        cfg = config_mod.load_config(args.config) if args.config else config_mod.RunConfig()
        cfg = cfg.with_output(args.out)
        with OutputLock(cfg.path("output_dir")):
            result = pipeline.cmd_simulate(cfg, args.seed)
        print(result["config"])
        return EXIT_OK

    cfg = config_mod.load_config(args.config)
    if args.out:
        cfg = cfg.with_output(args.out)
    pipeline.validate(cfg, args.command)
    with OutputLock(cfg.path("output_dir")):
        result = pipeline.STAGES[args.command](cfg)
    for key, value in result.items():
        if not isinstance(value, (list, dict)):
            print(f"{key}={value}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _set_threads(getattr(args, "threads", None))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    from .errors import DegenerateStatisticError, SkewDispError

    try:
        return _run(args)
    except DegenerateStatisticError as exc:
        print(f"skewdisp: degenerate statistic: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except SkewDispError as exc:
        kind = "validation error" if exc.exit_code == EXIT_VALIDATION else "data error"
        print(f"skewdisp: {kind}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        print(f"skewdisp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
