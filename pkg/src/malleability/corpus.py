"""Synthetic observation corpora with planted conflicts, and corpus-file I/O.

A *plan* describes what to plant (groups of conflict sets with a kind mix,
a time window, a value total and which side gets confirmed).  Generation
is fully determined by the seed; the manifest written next to the corpus
records the ground truth the analysis must recover.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import yaml

from . import script as sc
from .analytics import Period, default_periods, format_btc, format_utc, parse_btc, parse_utc
from .conflict import CorpusRecord, Outcome
from .hashes import double_sha256
from .mutation import MutationContext, MutationKind, mutate
from .sigcrypto import SECP256K1_ORDER, KeyPair, encode_der, sign_input
from .txcodec import (
    DecodeError, Hash256, OutPoint, Transaction, TxInput, TxOutput, deserialize_tx, serialize_tx,
)

MULTI_BROADCAST = "MultiBroadcast"
PLANTABLE = tuple(k.name for k in MutationKind if k.implemented) + (MULTI_BROADCAST,)
ATTACK_KINDS = {k.name for k in MutationKind if k.implemented} - {"ReSign"}
SIDES = ("original", "modified", "none")

GENESIS_2013 = datetime(2013, 1, 1, tzinfo=timezone.utc)
HEIGHT_2013 = 214_563


class SpecInfeasible(ValueError):
    pass


# Plans ----------------------------------------------------------------------

@dataclass
class PlantGroup:
    name: str
    count: int
    total_satoshi: int
    start: datetime
    end: datetime
    kinds: dict[str, int]
    confirmed: dict[str, int]
    cardinality: int = 3

    @classmethod
    def from_mapping(cls, raw: dict) -> "PlantGroup":
        try:
            name = str(raw["name"])
            count = int(raw["count"])
            if "total_satoshi" in raw:
                total = int(raw["total_satoshi"])
            else:
                total = parse_btc(str(raw["total_btc"]))
            start, end = parse_utc(str(raw["start"])), parse_utc(str(raw["end"]))
        except (KeyError, ValueError) as exc:
            raise SpecInfeasible(f"bad group {raw.get('name', '?')!r}: {exc}") from None
        kinds = raw.get("kinds", "NonMinimalPush")
        if isinstance(kinds, str):
            kinds = {kinds: count}
        confirmed = raw.get("confirmed", {"original": count})
        if isinstance(confirmed, str):
            confirmed = {confirmed: count}
        group = cls(name, count, total, start, end, {str(k): int(v) for k, v in kinds.items()},
                    {str(k): int(v) for k, v in confirmed.items()},
                    int(raw.get("cardinality", 3)))
        group.check()
        return group

    def check(self) -> None:
        where = f"group {self.name!r}"
        if self.count < 0:
            raise SpecInfeasible(f"{where}: negative count")
        if self.count and self.total_satoshi < self.count:
            raise SpecInfeasible(f"{where}: {self.total_satoshi} satoshi cannot fund "
                                 f"{self.count} sets of at least 1 satoshi")
        if not self.start < self.end:
            raise SpecInfeasible(f"{where}: start must precede end")
        if unknown := set(self.kinds) - set(PLANTABLE):
            raise SpecInfeasible(f"{where}: cannot plant {sorted(unknown)}")
        if unknown := set(self.confirmed) - set(SIDES):
            raise SpecInfeasible(f"{where}: unknown confirmation sides {sorted(unknown)}")
        if sum(self.kinds.values()) != self.count:
            raise SpecInfeasible(f"{where}: kind counts do not add up to {self.count}")
        if sum(self.confirmed.values()) != self.count:
            raise SpecInfeasible(f"{where}: confirmation counts do not add up to {self.count}")
        if any(v < 0 for v in (*self.kinds.values(), *self.confirmed.values())):
            raise SpecInfeasible(f"{where}: negative counts")
        if self.cardinality < 3:
            raise SpecInfeasible(f"{where}: {MULTI_BROADCAST} needs cardinality >= 3")

    def to_dict(self) -> dict:
        return {
            "name": self.name, "count": self.count, "total_satoshi": self.total_satoshi,
            "start": format_utc(self.start), "end": format_utc(self.end),
            "kinds": dict(sorted(self.kinds.items())),
            "confirmed": dict(sorted(self.confirmed.items())),
            "cardinality": self.cardinality,
        }


@dataclass
class Plan:
    groups: list[PlantGroup]
    background: int = 0
    background_start: datetime = GENESIS_2013
    background_end: datetime = datetime(2014, 3, 1, tzinfo=timezone.utc)
    key_count: int = 16
    periods: list[Period] = field(default_factory=default_periods)

    @classmethod
    def from_mapping(cls, raw: dict) -> "Plan":
        groups = [PlantGroup.from_mapping(g) for g in raw.get("groups", [])]
        names = [g.name for g in groups]
        if len(set(names)) != len(names):
            raise SpecInfeasible("group names must be unique")
        bg = raw.get("background", 0)
        plan = cls(groups, key_count=int(raw.get("keys", 16)))
        if isinstance(bg, dict):
            plan.background = int(bg.get("count", 0))
            plan.background_start = parse_utc(str(bg.get("start", format_utc(GENESIS_2013))))
            plan.background_end = parse_utc(str(bg.get("end", format_utc(plan.background_end))))
        else:
            plan.background = int(bg)
        if "periods" in raw:
            plan.periods = [Period(p["name"], parse_utc(str(p["start"])), parse_utc(str(p["end"])))
                            for p in raw["periods"]]
        if plan.key_count < 1:
            raise SpecInfeasible("need at least one key")
        return plan

    @classmethod
    def load(cls, path: str | Path) -> "Plan":
        text = Path(path).read_text()
        raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        return cls.from_mapping(raw or {})

    def to_dict(self) -> dict:
        return {
            "groups": [g.to_dict() for g in self.groups],
            "background": {"count": self.background, "start": format_utc(self.background_start),
                           "end": format_utc(self.background_end)},
            "keys": self.key_count,
            "periods": [{"name": p.name, "start": format_utc(p.start), "end": format_utc(p.end)}
                        for p in self.periods],
        }


def default_plan() -> Plan:
    """A small plan exercising every plantable kind and every confirmation side."""
    def g(name, kinds, confirmed, start, end, total_btc):
        count = sum(kinds.values())
        return {"name": name, "count": count, "total_btc": total_btc, "kinds": kinds,
                "confirmed": confirmed, "start": start, "end": end}
    return Plan.from_mapping({
        "groups": [
            g("p1-pushdata", {"NonMinimalPush": 4}, {"original": 2, "modified": 1, "none": 1},
              "2013-03-01T00:00:00Z", "2014-02-08T00:00:00Z", "12.5"),
            g("p1-mixed", {"EcdsaNegateS": 2, "LaxDerPadding": 2, "ExtraPush": 2},
              {"original": 3, "modified": 2, "none": 1},
              "2013-06-01T00:00:00Z", "2014-02-08T00:00:00Z", "30"),
            g("p2-resign", {"ReSign": 2, "MultiBroadcast": 1}, {"original": 2, "none": 1},
              "2014-02-08T00:00:00Z", "2014-02-10T00:00:00Z", "3.2"),
            g("p3-burst", {"NonMinimalPush": 6}, {"original": 4, "modified": 2},
              "2014-02-10T00:00:00Z", "2014-02-12T00:00:00Z", "100"),
        ],
        "background": 4,
    })


# Transactions -------------------------------------------------------------

def p2pkh_script(address_hash: bytes) -> bytes:
    return sc.p2pkh_condition(address_hash).encode()


def split_value(rng: random.Random, total: int, parts: int) -> list[int]:
    """``parts`` positive integers summing exactly to ``total``."""
    if parts == 0:
        return []
    cuts = sorted(rng.sample(range(1, total), parts - 1)) if parts > 1 else []
    bounds = [0, *cuts, total]
    return [b - a for a, b in zip(bounds, bounds[1:])]


def derive_keys(rng: random.Random, count: int) -> list[KeyPair]:
    return [KeyPair.from_secret(rng.randrange(1, SECP256K1_ORDER)) for _ in range(count)]


@dataclass
class Funding:
    """Sidecar map from synthetic funding outpoints to the scripts they pay."""

    scripts: dict[OutPoint, bytes] = field(default_factory=dict)
    values: dict[OutPoint, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {f"{op.txid}:{op.index}": {"script_pubkey": self.scripts[op].hex(),
                                          "value": self.values[op]}
                for op in sorted(self.scripts, key=lambda o: (str(o.txid), o.index))}

    @classmethod
    def from_dict(cls, raw: dict) -> "Funding":
        funding = cls()
        for key, entry in raw.items():
            txid, index = key.rsplit(":", 1)
            op = OutPoint(Hash256.from_hex(txid), int(index))
            funding.scripts[op] = bytes.fromhex(entry["script_pubkey"])
            funding.values[op] = int(entry["value"])
        return funding


class TxFactory:
    """Builds signed single-key P2PKH spends of fresh synthetic funding outputs."""

    def __init__(self, rng: random.Random, keys: Sequence[KeyPair], tag: bytes = b""):
        self.rng = rng
        self.keys = list(keys)
        self.tag = tag
        self.funding = Funding()
        self._counter = 0

    def _fund(self, keypair: KeyPair, value: int) -> OutPoint:
        self._counter += 1
        txid = Hash256(double_sha256(b"funding" + self.tag + self._counter.to_bytes(8, "little")))
        op = OutPoint(txid, self.rng.randrange(4))
        self.funding.scripts[op] = p2pkh_script(keypair.address_hash)
        self.funding.values[op] = value
        return op

    def nonce(self) -> int:
        return self.rng.randrange(1, SECP256K1_ORDER)

    def context(self, nonce: int | None = None) -> MutationContext:
        return MutationContext({k.pubkey: k for k in self.keys}, self.funding.scripts,
                               self.nonce() if nonce is None else nonce)

    def spend(self, value: int, n_inputs: int = 1, n_outputs: int | None = None) -> Transaction:
        rng = self.rng
        if n_outputs is None:
            n_outputs = 1 if value < 2 else rng.choice((1, 2))
        signers = [rng.choice(self.keys) for _ in range(n_inputs)]
        inputs = [TxInput(self._fund(k, value + rng.randrange(0, 50_000)), b"",
                          0xFFFFFFFF) for k in signers]
        amounts = split_value(rng, value, n_outputs) if value >= n_outputs else [value]
        outputs = [TxOutput(a, p2pkh_script(rng.randbytes(20))) for a in amounts]
        tx = Transaction(tuple(inputs), tuple(outputs), 1, 0)
        script_sigs = []
        for i, k in enumerate(signers):
            spk = self.funding.scripts[inputs[i].previous]
            sig = sign_input(tx, i, spk, k, nonce=self.nonce())
            script_sigs.append(sc.sig_script(encode_der(sig), k.pubkey).encode())
        for i, s in enumerate(script_sigs):
            tx = tx.with_script_sig(i, s)
        return tx


def block_height(t: datetime) -> int:
    return HEIGHT_2013 + int((t - GENESIS_2013).total_seconds() // 600)


# Generation ---------------------------------------------------------------

@dataclass
class Generated:
    records: list[CorpusRecord]
    manifest: dict
    funding: Funding


def _expected_outcome(kind: str, side: str) -> str:
    if side == "none":
        return Outcome.Unconfirmed.value
    if kind not in ATTACK_KINDS:
        return Outcome.NotAnAttack.value
    return (Outcome.SuccessfulAttack if side == "modified" else Outcome.FailedAttack).value


def _expected_classification(kind: str) -> str:
    if kind == MULTI_BROADCAST:
        return MULTI_BROADCAST
    if kind == "ReSign":
        return "GenuineReSign"
    return "EncodingMutation"


def _random_time(rng: random.Random, start: datetime, end: datetime) -> datetime:
    span = int((end - start).total_seconds())
    return start + timedelta(seconds=rng.randrange(span))


def generate(plan: Plan, seed: int) -> Generated:
    rng = random.Random(seed)
    keys = derive_keys(rng, plan.key_count)
    factory = TxFactory(rng, keys, tag=seed.to_bytes(8, "little", signed=True))
    records: list[CorpusRecord] = []
    planted: list[dict] = []

    for group in plan.groups:
        kinds = [k for k, c in sorted(group.kinds.items()) for _ in range(c)]
        sides = [s for s, c in sorted(group.confirmed.items()) for _ in range(c)]
        rng.shuffle(kinds)
        rng.shuffle(sides)
        values = split_value(rng, group.total_satoshi, group.count)
        for kind, side, value in zip(kinds, sides, values):
            seen = _random_time(rng, group.start, group.end)
            original = factory.spend(value)
            if kind == MULTI_BROADCAST:
                copies = [original]
                while len(copies) < group.cardinality:
                    copies.append(mutate(original, MutationKind.ReSign, 0, factory.context()))
            else:
                copies = [original, mutate(original, MutationKind[kind], 0, factory.context())]
            times = [seen]
            for _ in copies[1:]:
                times.append(times[-1] + timedelta(seconds=rng.randint(1, 30)))
            confirmed_idx = {"original": 0, "modified": len(copies) - 1, "none": None}[side]
            for i, (tx, t) in enumerate(zip(copies, times)):
                height = block_height(times[-1]) + 1 if i == confirmed_idx else None
                records.append(CorpusRecord(tx, t, height))
            planted.append({
                "group": group.name,
                "kind": kind,
                "original_txid": str(original.txid),
                "mutated_txids": [str(tx.txid) for tx in copies[1:]],
                "first_seen": format_utc(seen),
                "value_satoshi": value,
                "confirmed": side,
                "expected_classification": _expected_classification(kind),
                "expected_outcome": _expected_outcome(kind, side),
            })

    for _ in range(plan.background):
        t = _random_time(rng, plan.background_start, plan.background_end)
        tx = factory.spend(rng.randrange(10_000, 10**9), n_inputs=rng.choice((1, 1, 2)))
        records.append(CorpusRecord(tx, t, block_height(t) + 1))

    records.sort(key=lambda r: (r.first_seen, bytes(r.txid)))
    manifest = {
        "seed": seed,
        "plan": plan.to_dict(),
        "keys": {str(i): k.privkey.hex() for i, k in enumerate(keys)},
        "record_count": len(records),
        "first_record_txid": str(records[0].txid) if records else None,
        "planted": planted,
        "expected": expected_totals(planted, plan.periods),
    }
    return Generated(records, manifest, factory.funding)


def expected_totals(planted: Iterable[dict], periods: Sequence[Period]) -> dict:
    """Ground-truth aggregates straight from the planted descriptors."""
    def blank() -> dict:
        return {"attack_sets": 0, "total_value_satoshi": 0, "successful": 0, "failed": 0,
                "unconfirmed": 0, "success_value_satoshi": 0, "re_sign_sets": 0,
                "confirmed_sets": 0, "confirmed_value_satoshi": 0}

    per_period = {p.name: blank() for p in periods}
    overall = blank()
    groups: dict[str, dict] = {}
    for d in planted:
        g = groups.setdefault(d["group"], {"sets": 0, "value_satoshi": 0})
        g["sets"] += 1
        g["value_satoshi"] += d["value_satoshi"]
        t = parse_utc(d["first_seen"])
        buckets = [overall] + [per_period[p.name] for p in periods if p.start <= t < p.end]
        for b in buckets:
            if d["confirmed"] != "none":
                b["confirmed_sets"] += 1
                b["confirmed_value_satoshi"] += d["value_satoshi"]
            if d["expected_classification"] != "EncodingMutation":
                b["re_sign_sets"] += 1
                continue
            b["attack_sets"] += 1
            b["total_value_satoshi"] += d["value_satoshi"]
            outcome = d["expected_outcome"]
            if outcome == Outcome.SuccessfulAttack.value:
                b["successful"] += 1
                b["success_value_satoshi"] += d["value_satoshi"]
            elif outcome == Outcome.FailedAttack.value:
                b["failed"] += 1
            else:
                b["unconfirmed"] += 1
    for b in [overall, *per_period.values()]:
        b["total_value_btc"] = format_btc(b["total_value_satoshi"])
        b["success_value_btc"] = format_btc(b["success_value_satoshi"])
    for g in groups.values():
        g["value_btc"] = format_btc(g["value_satoshi"])
    return {"overall": overall, "periods": per_period, "groups": groups}


# Corpus files ----------------------------------------------------------------

def record_to_json(record: CorpusRecord) -> str:
    entry = {"hex": serialize_tx(record.tx).hex(), "first_seen": format_utc(record.first_seen)}
    if record.confirmed_in is not None:
        entry["confirmed_in"] = record.confirmed_in
    return json.dumps(entry, separators=(",", ":"))


def write_corpus(records: Iterable[CorpusRecord], path: str | Path) -> None:
    from .reports import atomic_write
    atomic_write(path, "".join(record_to_json(r) + "\n" for r in records))


@dataclass
class LineError:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


def parse_record(line: str) -> CorpusRecord:
    entry = json.loads(line)
    if not isinstance(entry, dict):
        raise ValueError("expected a JSON object")
    tx = deserialize_tx(bytes.fromhex(entry["hex"]))
    first_seen = parse_utc(entry["first_seen"])
    confirmed = entry.get("confirmed_in")
    if confirmed is not None and (not isinstance(confirmed, int) or isinstance(confirmed, bool)):
        raise ValueError("confirmed_in must be an integer")
    return CorpusRecord(tx, first_seen, confirmed)


def iter_corpus(lines: Iterable[str]) -> Iterator[CorpusRecord | LineError]:
    """Yield a record or a :class:`LineError` per non-blank line; duplicates are errors."""
    seen: set[bytes] = set()
    for no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = parse_record(line)
        except (ValueError, KeyError, TypeError, DecodeError) as exc:
            yield LineError(no, f"{type(exc).__name__}: {exc}")
            continue
        if record.txid in seen:
            yield LineError(no, f"DuplicateTxid: {record.txid}")
            continue
        seen.add(record.txid)
        yield record


def read_corpus(path: str | Path) -> tuple[list[CorpusRecord], list[LineError]]:
    records, errors = [], []
    with open(path, encoding="utf-8") as fh:
        for item in iter_corpus(fh):
            (errors if isinstance(item, LineError) else records).append(item)
    return records, errors


def corpus_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
