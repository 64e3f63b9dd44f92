"""
Command line entry point.

::

    beamupdate run    --config fig1.cfg --out fig1.csv
    beamupdate verify --nt 8 --k 4 --drops 50
    beamupdate bench  --out bench.csv

Exit codes: 0 success, 2 configuration error, 3 verification failure.
"""
import argparse
import logging
import sys

from . import harness
from .errors import ConfigError

log = logging.getLogger("beamupdate")

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY = 0, 2, 3

_OVERRIDES = ("nt", "k", "drops", "seed", "scenario", "schemes", "sinr_grid_db",
              "gamma_delta_db", "gamma_delta_unit", "zf_method")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value configuration file")
    common.add_argument("--nt", type=int, help="base-station antennas")
    common.add_argument("--k", type=int, help="users after the change (user_in) or before it")
    common.add_argument("--drops", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--scenario", choices=harness.SCENARIOS)
    common.add_argument("--schemes", help="comma separated subset of %s" % ",".join(harness.SCHEMES))
    common.add_argument("--sinr-grid-db", dest="sinr_grid_db", help="e.g. 0,2,4,6,8,10,12")
    common.add_argument("--gamma-delta-db", dest="gamma_delta_db")
    common.add_argument("--gamma-delta-unit", dest="gamma_delta_unit", choices=("db", "linear"))
    common.add_argument("--zf-method", dest="zf_method", choices=("direct", "block"))
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key")
    common.add_argument("--out", help="output CSV path (stdout if omitted)")
    common.add_argument("--deterministic", action="store_true",
                        help="omit timestamps and wall-clock columns")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="beamupdate", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="power-vs-SINR experiment")
    sub.add_parser("verify", parents=[common], help="incremental-vs-redesign oracle checks")
    sub.add_parser("bench", parents=[common], help="update cost scaling")
    return parser


def load_config(args):
    values = harness.read_config_file(args.config) if args.config else {}
    for key in _OVERRIDES:
        val = getattr(args, key)
        if val is not None:
            values[key] = val
    for item in args.set:
        if "=" not in item:
            raise ConfigError("--set expects KEY=VALUE, got %r" % item)
        key, val = item.split("=", 1)
        values[key.strip()] = val.strip()
    return harness.ExperimentConfig.from_mapping(values)


def _emit(text, path):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(args)
        threads = harness.thread_count()
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "run":
        log.info("running %d drops on %d worker(s)", config.drops, threads)
        result = harness.run_experiment(config, threads)
        if args.out:
            harness.write_outputs(result, args.out, args.deterministic)
        else:
            sys.stdout.write(harness.rows_to_csv(result.rows, args.deterministic))
        return EXIT_OK

    if args.command == "verify":
        ok, lines = harness.verify(config)
        _emit("\n".join(lines) + "\n", args.out)
        print("verify: %s" % ("PASS" if ok else "FAIL"), file=sys.stderr)
        return EXIT_OK if ok else EXIT_VERIFY

    rows = harness.bench(config)
    _emit(harness.bench_to_csv(rows), args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
