"""Command-line entry point.

Exit codes: 0 ok, 1 usage or bad plan, 2 corpus error, 3 mutation error,
4 simulation config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from datetime import timedelta
from pathlib import Path

from . import corpus as corpus_mod
from .analytics import (
    aggregate, cumulative_series, default_periods, format_btc, hourly_rate, load_periods,
    out_of_schedule, parse_utc,
)
from .conflict import CorpusError, build_conflict_sets, normalized_key
from .hashes import sha256
from .mutation import MutationContext, MutationError, MutationKind, mutate
from .netsim import InfeasibleConfig, SimConfig, estimate_success, sweep
from .reports import (
    conflict_set_dict, format_rate, write_csv, write_cumulative, write_hourly, write_json,
    total_report, write_period_reports,
)
from .sigcrypto import SECP256K1_ORDER, KeyPair
from .txcodec import DecodeError, deserialize_tx, serialize_tx

log = logging.getLogger("malleability")

EXIT_OK, EXIT_USAGE, EXIT_CORPUS, EXIT_MUTATION, EXIT_SIM = 0, 1, 2, 3, 4


def cmd_gen_corpus(args) -> int:
    try:
        plan = corpus_mod.Plan.load(args.spec) if args.spec else corpus_mod.default_plan()
    except (corpus_mod.SpecInfeasible, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    generated = corpus_mod.generate(plan, args.seed)
    out = Path(args.out)
    corpus_mod.write_corpus(generated.records, out / "corpus.jsonl")
    write_json(out / "manifest.json", generated.manifest)
    write_json(out / "funding.json", generated.funding.to_dict())
    print(f"wrote {len(generated.records)} records, "
          f"{len(generated.manifest['planted'])} planted conflict sets to {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        periods = load_periods(args.periods) if args.periods else default_periods()
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: bad period schedule: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        records, errors = corpus_mod.read_corpus(args.corpus)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORPUS
    for err in errors:
        print(f"{args.corpus}: {err}", file=sys.stderr)
    if errors and args.strict:
        print(f"error: {len(errors)} malformed corpus lines (--strict)", file=sys.stderr)
        return EXIT_CORPUS

    try:
        sets = build_conflict_sets(records)
    except CorpusError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CORPUS

    out = Path(args.out)
    window = timedelta(hours=args.window_hours)
    origin = parse_utc(args.origin) if args.origin else None
    reports = aggregate(sets, periods)
    stray = out_of_schedule(sets, periods)
    for s in stray:
        print(f"warning: OutOfSchedule: conflict set {s.key}", file=sys.stderr)

    write_json(out / "conflict_sets.json", {"conflict_sets": [conflict_set_dict(s) for s in sets]})
    write_period_reports(out, reports, len(stray))
    write_cumulative(out / "cumulative.csv", cumulative_series(sets))
    write_hourly(out / "hourly.csv", hourly_rate(sets, window, origin), window)

    print(f"{len(records)} records, {len(sets)} conflict sets")
    for r in reports + ([total_report(reports)] if reports else []):
        print(f"{r.period.name}: attack_sets={r.attack_sets} "
              f"total_value_btc={format_btc(r.total_value_satoshi)} "
              f"successful={r.successful} "
              f"success_rate_by_count={format_rate(r.success_rate_by_count)} "
              f"success_rate_by_value={format_rate(r.success_rate_by_value)} "
              f"re_sign_sets={r.re_sign_sets}")
    return EXIT_OK


def cmd_mutate(args) -> int:
    try:
        kind = MutationKind.parse(args.kind)
        tx = deserialize_tx(bytes.fromhex(args.tx_hex.strip()))
        context = None
        if args.key:
            keypair = KeyPair.from_secret(int(args.key, 16))
            prevout = tx.inputs[args.input].previous if args.input < len(tx.inputs) else None
            spk = (bytes.fromhex(args.script_pubkey) if args.script_pubkey
                   else corpus_mod.p2pkh_script(keypair.address_hash))
            nonce = args.nonce
            if nonce is None:
                seed = sha256(keypair.privkey + serialize_tx(tx) + args.input.to_bytes(4, "little"))
                nonce = int.from_bytes(seed, "big") % (SECP256K1_ORDER - 1) + 1
            context = MutationContext({keypair.pubkey: keypair},
                                      {prevout: spk} if prevout else {}, nonce)
        mutated = mutate(tx, kind, args.input, context)
    except (MutationError, DecodeError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MUTATION
    print(serialize_tx(mutated).hex())
    print(f"txid {mutated.txid}", file=sys.stderr)
    print(f"original_txid {tx.txid}", file=sys.stderr)
    print(f"normalized_key {normalized_key(mutated)}", file=sys.stderr)
    return EXIT_OK


def _parse_sweep(text: str) -> tuple[str, list]:
    name, _, raw = text.partition("=")
    if not raw:
        raise InfeasibleConfig(f"--sweep expects name=v1,v2,... (got {text!r})")
    values = []
    for v in raw.split(","):
        v = v.strip()
        values.append(float(v) if any(c in v for c in ".eE") else int(v))
    return name.strip(), values


def cmd_simulate(args) -> int:
    try:
        config = SimConfig.load(args.config) if args.config else SimConfig()
        overrides = {k: v for k, v in (("trials", args.trials), ("seed", args.seed)) if v is not None}
        config = replace(config, **overrides)
        rows = None
        if args.sweep:
            # each swept config is validated on its own
            name, values = _parse_sweep(args.sweep)
            rows = sweep(config, name, values)
        else:
            estimate = estimate_success(config)
    except (InfeasibleConfig, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIM

    out = Path(args.out) if args.out else None
    if rows is None:
        payload = {"config": config.to_dict(), **estimate.to_dict()}
    else:
        payload = {"config": config.to_dict(), "sweep_parameter": name,
                   "rows": [{"value": v, **e.to_dict()} for v, e in rows]}
        if out:
            write_csv(out / "sweep.csv",
                      (name, "probability", "ci95_low", "ci95_high", "successes", "trials"),
                      ((v, e.probability, e.interval[0], e.interval[1], e.successes, e.trials)
                       for v, e in rows))
    if out:
        write_json(out / "results.json", payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="malleability",
                                     description="Bitcoin transaction-malleability forensics")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus with planted conflicts")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--spec", help="YAML/JSON plan of conflicts to plant (default: small demo)")
    p.add_argument("--out", default="corpus-out")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("analyze", help="build conflict sets and write reports")
    p.add_argument("corpus")
    p.add_argument("--out", default="reports")
    p.add_argument("--periods", help="YAML/JSON period schedule (default: the three 2013-14 periods)")
    p.add_argument("--strict", action="store_true", help="fail on any malformed corpus line")
    p.add_argument("--window-hours", type=int, default=1)
    p.add_argument("--origin", help="start of the first rate bucket (ISO-8601 UTC)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("mutate", help="malleate one input of a raw transaction")
    p.add_argument("tx_hex")
    p.add_argument("--kind", required=True, help=", ".join(k.name for k in MutationKind))
    p.add_argument("--input", type=int, default=0)
    p.add_argument("--key", help="private key (hex) for ReSign")
    p.add_argument("--script-pubkey", help="prevout scriptPubKey hex (default: P2PKH of --key)")
    p.add_argument("--nonce", type=int)
    p.set_defaults(func=cmd_mutate)

    p = sub.add_parser("simulate", help="estimate attack success by propagation simulation")
    p.add_argument("config", nargs="?", help="YAML/JSON simulation config")
    p.add_argument("--sweep", help="name=v1,v2,... e.g. attacker_connections=1,5,10")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
