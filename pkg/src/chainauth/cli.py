"""Command line entry point: ``chainauth run | sweep | verify-dispute``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace
from fractions import Fraction

from . import canonical
from .harness import dispute_inputs, format_reports, sweep, verify_dispute
from .scenario import ConfigError, ScenarioConfig, run_scenario


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text}")


def _id_set(text: str) -> frozenset[int]:
    return frozenset(int(x) for x in text.split(",") if x)


def _latency(text: str) -> tuple[int | None, ...]:
    return tuple(None if x.lower() == "none" else int(x) for x in text.split(","))


def _corrupt(text: str) -> tuple[str, int]:
    section, _, index = text.partition(":")
    return section, int(index or 0)


def _block_time(text: str) -> Fraction:
    return Fraction(text)


PARSERS = {
    "block_time_seconds": _block_time,
    "as_withholds_reveal": _id_set,
    "as_never_responds": _id_set,
    "as_latency": _latency,
    "corrupt_byte": _corrupt,
}

HELP = {
    "model": "1 hashes on ledger, 2 contract on one ledger, 3 contract + gateway, 4 m-of-n",
    "ledgers": "1 or 2 (model 4 only; fixed for the others)",
    "selection_mode": "ContractSelects or FirstMResponses",
    "block_time_seconds": "seconds per block, fractions like 29/2 allowed",
    "htlc_initiator": "gateway or client (model 3)",
    "as_latency": "comma list, one per AS; 'none' for unknown",
    "as_withholds_reveal": "comma list of 1-based AS indices",
    "as_never_responds": "comma list of 1-based AS indices",
    "corrupt_byte": "SECTION:INDEX with SECTION in tokens, tags, pops",
}


def _parser_for(name: str, default):
    if name in PARSERS:
        return PARSERS[name]
    if isinstance(default, bool):
        return _bool
    if isinstance(default, int) or name == "ledgers":
        return int
    return str


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for f in fields(ScenarioConfig):
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            p.add_argument(flag, dest=f.name, default=None, action=argparse.BooleanOptionalAction,
                           help=HELP.get(f.name))
        else:
            p.add_argument(flag, dest=f.name, default=None, type=_parser_for(f.name, f.default),
                           help=HELP.get(f.name))


def _config(args: argparse.Namespace) -> ScenarioConfig:
    given = {f.name: getattr(args, f.name) for f in fields(ScenarioConfig)
             if getattr(args, f.name) is not None}
    return replace(ScenarioConfig(), **given)


def _vary(items: list[str]) -> list[tuple[str, list]]:
    defaults = {f.name: f.default for f in fields(ScenarioConfig)}
    out = []
    for item in items:
        name, _, values = item.partition("=")
        name = name.replace("-", "_")
        if name not in defaults or not values:
            raise ConfigError(f"bad --vary {item!r}; expected field=v1;v2")
        parse = _parser_for(name, defaults[name])
        out.append((name, [parse(v) for v in values.split(";")]))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainauth", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    _add_config_flags(p_run)
    p_run.add_argument("--report", choices=("json", "table"), default="json")

    p_sweep = sub.add_parser("sweep", help="run the cross product of --vary values")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--vary", action="append", default=[], metavar="FIELD=V1;V2",
                         help="repeatable; values separated by ';'")
    p_sweep.add_argument("--report", choices=("json", "table"), default="table")

    p_dispute = sub.add_parser("verify-dispute",
                               help="run the hash-recording model and check its receipts")
    _add_config_flags(p_dispute)
    p_dispute.add_argument("--tamper", choices=("none", "encrypted-token", "token"),
                           default="none", help="alter a client-held item before checking")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        config = _config(args)
        if args.command == "run":
            report = run_scenario(config.validated()).report
            print(format_reports([report], args.report))
            return 0 if report.ok else 1
        if args.command == "sweep":
            reports = sweep(config, _vary(args.vary))
            print(format_reports(reports, args.report))
            return 0 if all(r.ok for r in reports) else 1
        result = run_scenario(replace(config, model=1))
        recorded, held = dispute_inputs(result)
        if args.tamper == "encrypted-token":
            held["encrypted_token"] = bytes([held["encrypted_token"][0] ^ 1]) + held["encrypted_token"][1:]
        elif args.tamper == "token" and "token" in held:
            held["token"] = bytes([held["token"][0] ^ 1]) + held["token"][1:]
        dispute = verify_dispute(recorded, held)
        print(canonical.dumps({"token_match": dispute.token_match,
                               "bundle_match": dispute.bundle_match,
                               "outcome": result.report.outcome}, indent=2))
        return 0 if result.report.ok else 1
    except ConfigError as exc:
        parser.error(str(exc))
    return 2


if __name__ == "__main__":
    sys.exit(main())
