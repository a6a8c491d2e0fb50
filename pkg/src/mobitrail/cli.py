"""``mobitrail`` command line.

Subcommands pass files between stages::

    mobitrail synth --profile photo --n-users 1000 --seed 1 --out events.csv
    mobitrail ingest --input events.csv --partition grid:0.5 --out clean.csv
    mobitrail gyration --input clean.csv --out rg.csv
    mobitrail home --input clean.csv --out homes.csv
    mobitrail agree --input homes.csv --out smc.json
    mobitrail report --seed 42 --out report.json

Exit codes: 0 success, 2 bad arguments or config, 3 I/O failure, 4 empty
result.  Data goes to stdout only with ``--out -``; diagnostics go to
stderr.  ``--config FILE`` reads a TOML file whose top-level keys (flag
names with ``_`` for ``-``) apply to every command and whose
``[<command>]`` tables apply to one; flags on the command line win.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import logging
import sys
from pathlib import Path

from mobitrail import agreement, gyration, homedetect, ingest, report, synth
from mobitrail.homedetect import HomeTable, NightWindow
from mobitrail.ingest import FilterPolicy, IngestError
from mobitrail.model import parse_partition_spec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("mobitrail")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_EMPTY = 4


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


# --------------------------------------------------------------------------
# Helpers


@contextlib.contextmanager
def _out_text(path: str):
    if path == "-":
        yield sys.stdout
        sys.stdout.flush()
        return
    try:
        fh = open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror or exc}", EXIT_IO) from None
    with fh:
        yield fh


@contextlib.contextmanager
def _out_binary(path: str):
    if path == "-":
        yield sys.stdout.buffer
        sys.stdout.buffer.flush()
        return
    try:
        fh = open(path, "wb")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror or exc}", EXIT_IO) from None
    with fh:
        yield fh


def _sidecar(out: str, explicit: str | None, suffix: str) -> str | None:
    """Secondary output path: explicit flag, else next to ``--out``, else none."""
    if explicit:
        return explicit
    if out == "-":
        return None
    p = Path(out)
    return str(p.with_name(p.stem + suffix))


def _partition(args):
    try:
        return parse_partition_spec(args.partition)
    except OSError as exc:
        raise CliError(f"cannot read partition file: {exc}", EXIT_IO) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None


def _night(args) -> NightWindow:
    try:
        return NightWindow.parse(args.night, args.utc_offset)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None


def _policy(args) -> FilterPolicy:
    try:
        return FilterPolicy(args.min_events, args.above_average, args.consensus_country)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None


def _read_events(args):
    src = sys.stdin.buffer if args.input == "-" else args.input
    events, rep = ingest.parse_events(src, args.format)
    return events, rep


# --------------------------------------------------------------------------
# Commands


def cmd_ingest(args) -> int:
    """Parse, prune and filter; write region-tagged events plus counters."""
    part = _partition(args)
    policy = _policy(args)
    night = _night(args)
    events, rep = _read_events(args)
    if rep.parsed == 0:
        raise CliError("no parseable events in input", EXIT_EMPTY)
    kept, dropped = ingest.prune(events, part, threads=args.threads)
    rep.pruned_unresolvable = dropped
    traces = ingest.group_traces(kept)
    rep.users_in = len(traces)
    traces = ingest.apply_filter(traces, FilterPolicy(policy.min_events, policy.above_average))
    if policy.consensus_country is not None:
        homes = homedetect.detect_homes(traces, night, threads=args.threads)
        traces = ingest.apply_filter(
            traces, FilterPolicy(consensus_country=policy.consensus_country), homedetect.consensus_countries(homes, part)
        )
    rep.users_after_filter = len(traces)
    with _out_binary(args.out) as fh:
        ingest.write_events_csv(traces, fh)
    side = _sidecar(args.out, args.report, ".report.json")
    if side:
        ingest.write_report_json(rep, side)
    else:
        log.info("ingest report: %s", rep.to_dict())
    if traces.total_events == 0:
        raise CliError("no events left after pruning and filtering", EXIT_EMPTY)
    return EXIT_OK


def cmd_gyration(args) -> int:
    """Per-user r_g CSV plus the distribution JSON."""
    events, _ = _read_events(args)
    if len(events) == 0:
        raise CliError("no events in input", EXIT_EMPTY)
    tab = gyration.gyration_table(ingest.group_traces(events), threads=args.threads)
    with _out_text(args.out) as fh:
        tab.write_csv(fh)
    side = _sidecar(args.out, args.distribution, ".distribution.json")
    if side:
        with _out_text(side) as fh:
            report.write_json(gyration.distribution_json(tab), fh)
    return EXIT_OK


def cmd_home(args) -> int:
    """Five-method home assignments, one row per (user, method)."""
    night = _night(args)
    policy = _policy(args)
    part = _partition(args)
    events, _ = _read_events(args)
    kept, dropped = ingest.prune(events, part, threads=args.threads)
    if dropped:
        log.warning("%d events outside the partition dropped", dropped)
    traces = ingest.apply_filter(ingest.group_traces(kept), FilterPolicy(policy.min_events, policy.above_average))
    homes = homedetect.detect_homes(traces, night, threads=args.threads)
    if policy.consensus_country is not None:
        want = policy.consensus_country.upper()
        cc = homedetect.consensus_countries(homes, part)
        homes = homes.subset([i for i, u in enumerate(homes.user_ids) if cc[u] == want])
    if len(homes) == 0:
        raise CliError("no users left to assign", EXIT_EMPTY)
    with _out_text(args.out) as fh:
        homes.write_csv(fh)
    return EXIT_OK


def cmd_agree(args) -> int:
    """Pairwise SMC JSON plus the radar CSV."""
    try:
        if args.input == "-":
            homes = HomeTable.read_csv(io.TextIOWrapper(sys.stdin.buffer, encoding="utf-8", newline=""))
        else:
            with open(args.input, encoding="utf-8", newline="") as fh:
                homes = HomeTable.read_csv(fh)
    except OSError as exc:
        raise CliError(f"cannot read {args.input}: {exc.strerror or exc}", EXIT_IO) from None
    except ValueError as exc:
        raise CliError(f"{args.input}: {exc}", EXIT_USAGE) from None
    if not homes.complete().any():
        raise CliError("no user has a home under all five methods", EXIT_EMPTY)
    m = agreement.pairwise_matrix(homes)
    with _out_text(args.out) as fh:
        agreement.write_json(m, fh)
    side = _sidecar(args.out, args.radar, ".radar.csv")
    if side:
        with _out_text(side) as fh:
            agreement.write_radar_csv(m, fh)
    return EXIT_OK


def _profile(name: str):
    try:
        return synth.load_profile(name)
    except OSError as exc:
        raise CliError(f"cannot read profile {name}: {exc.strerror or exc}", EXIT_IO) from None
    except (ValueError, TypeError, tomllib.TOMLDecodeError) as exc:
        raise CliError(f"bad profile {name}: {exc}", EXIT_USAGE) from None


def cmd_synth(args) -> int:
    """Synthetic events plus the planted homes (truth CSV)."""
    part = _partition(args)
    profile = _profile(args.profile)
    if args.n_users < 1:
        raise CliError("--n-users must be >= 1", EXIT_USAGE)
    try:
        events, truth = synth.generate(profile, args.n_users, part, args.seed, strict=not args.lenient)
    except synth.SynthError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    with _out_binary(args.out) as fh:
        ingest.write_events_csv(ingest.group_traces(events), fh)
    truth_path = args.truth or (None if args.out == "-" else str(Path(args.out).with_name("truth.csv")))
    if truth_path:
        with _out_text(truth_path) as fh:
            truth.write_csv(fh)
    return EXIT_OK


def cmd_report(args) -> int:
    """Two synthetic cohorts end to end, JSON plus Markdown."""
    part = _partition(args)
    night = _night(args)
    policy = _policy(args)
    a, b = _profile(args.profile_a), _profile(args.profile_b)
    try:
        rep = report.compare_cohorts(a, b, args.n_users, part, args.seed, night, policy, args.threads)
    except synth.SynthError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_EMPTY) from None
    with _out_text(args.out) as fh:
        report.write_json(rep, fh)
    md = _sidecar(args.out, args.markdown, ".md")
    if md:
        with _out_text(md) as fh:
            report.write_markdown(rep, fh)
    log.info("report verdict: %s", rep["verdict"])
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser


def _add_common(p: argparse.ArgumentParser, out_default: str = "-"):
    p.add_argument("--config", help="TOML file with default flag values")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-user kernels")
    p.add_argument("--out", "-o", default=out_default, help="output file, '-' for stdout")


def _add_input(p):
    # checked after the config file is merged, so it can come from there
    p.add_argument("--input", "-i", help="input file, '-' for stdin (required)")


def _add_events_input(p):
    _add_input(p)
    p.add_argument("--format", choices=["csv", "jsonl"], default="csv")


def _add_partition(p, default="grid:0.5"):
    p.add_argument("--partition", default=default, help="grid:SIZE_DEG, lookup:FILE or lookup:provinces")


def _add_night(p):
    p.add_argument("--night", default="19-7", help="night window START-END in local hours")
    p.add_argument("--utc-offset", type=int, default=0, help="local time offset from UTC in minutes")


def _add_filter(p, above_default=False):
    p.add_argument("--min-events", type=int, default=0)
    p.add_argument(
        "--above-average",
        action=argparse.BooleanOptionalAction,
        default=above_default,
        help="keep users with more events than the mean",
    )
    p.add_argument("--consensus-country", help="keep users whose five homes all lie in this country")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobitrail", description="Mobility trace statistics and home detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse, prune and filter events")
    _add_events_input(p)
    _add_partition(p)
    _add_filter(p)
    _add_night(p)
    _add_common(p)
    p.add_argument("--report", help="ingest counters JSON (default: next to --out)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gyration", help="per-user radius of gyration")
    _add_events_input(p)
    _add_common(p)
    p.add_argument("--distribution", help="ECDF/boxplot JSON (default: next to --out)")
    p.set_defaults(func=cmd_gyration)

    p = sub.add_parser("home", help="five home detection methods")
    _add_events_input(p)
    _add_partition(p)
    _add_filter(p)
    _add_night(p)
    _add_common(p)
    p.set_defaults(func=cmd_home)

    p = sub.add_parser("agree", help="pairwise SMC between home methods")
    _add_input(p)
    _add_common(p)
    p.add_argument("--radar", help="pair,value CSV (default: next to --out)")
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    _add_partition(p)
    _add_common(p)
    p.add_argument("--profile", default="transaction", help="transaction, photo or a TOML profile file")
    p.add_argument("--n-users", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth", help="planted homes CSV (default: truth.csv next to --out)")
    p.add_argument("--lenient", action="store_true", help="drop points outside the partition instead of failing")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="compare two synthetic cohorts end to end")
    _add_partition(p)
    _add_filter(p, above_default=True)
    _add_night(p)
    _add_common(p, out_default="report.json")
    p.add_argument("--profile-a", default="transaction")
    p.add_argument("--profile-b", default="photo")
    p.add_argument("--n-users", type=int, default=1000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--markdown", help="Markdown report (default: next to --out)")
    p.set_defaults(func=cmd_report)
    return parser


def _config_defaults(path: str, command: str, sub: argparse.ArgumentParser) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror or exc}", EXIT_IO) from None
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"bad config {path}: {exc}", EXIT_USAGE) from None
    known = {a.dest for a in sub._actions} - {"help", "config", "func"}
    merged = {k: v for k, v in data.items() if not isinstance(v, dict)}
    section = data.get(command, {})
    if not isinstance(section, dict):
        raise CliError(f"config: [{command}] must be a table", EXIT_USAGE)
    merged.update(section)
    out = {}
    for k, v in merged.items():
        dest = k.replace("-", "_")
        if dest in known:
            out[dest] = v
        elif k in section:
            raise CliError(f"config: unknown key {k!r} for {command}", EXIT_USAGE)
    return out


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        defaults = _config_defaults(args.config, args.command, sub)
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except CliError as exc:
        print(f"mobitrail: {exc}", file=sys.stderr)
        return exc.code
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    problem = None
    if args.threads < 1:
        problem = "--threads must be >= 1"
    elif hasattr(args, "input") and not args.input:
        problem = "--input is required"
    if problem:
        print(f"mobitrail {args.command}: {problem}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except CliError as exc:
        print(f"mobitrail {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except IngestError as exc:
        print(f"mobitrail {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"mobitrail {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
