"""Malleability-invariant keys, conflict sets and attack outcomes."""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, replace
from datetime import datetime
from typing import Iterable, Union

from .hashes import double_sha256
from .mutation import EncodingMutation, GenuineReSign, PairClassification, Unknown, classify_pair
from .txcodec import Hash256, Transaction, serialize_tx


class CorpusError(ValueError):
    pass


class DuplicateTxid(CorpusError):
    pass


class ValueMismatch(CorpusError):
    pass


class MultipleConfirmations(CorpusError):
    pass


@dataclass(frozen=True)
class CorpusRecord:
    tx: Transaction
    first_seen: datetime
    confirmed_in: int | None = None

    def __post_init__(self):
        if self.confirmed_in is not None and self.confirmed_in < 0:
            raise ValueError("confirmed_in must be a non-negative block height")

    @property
    def txid(self) -> Hash256:
        return self.tx.txid

    @property
    def confirmed(self) -> bool:
        return self.confirmed_in is not None


@dataclass(frozen=True)
class MultiBroadcast:
    cardinality: int


Classification = Union[PairClassification, MultiBroadcast]


class Outcome(enum.Enum):
    SuccessfulAttack = "SuccessfulAttack"
    FailedAttack = "FailedAttack"
    Unconfirmed = "Unconfirmed"
    NotAnAttack = "NotAnAttack"


@dataclass(frozen=True)
class ConflictSet:
    key: Hash256
    members: tuple[CorpusRecord, ...]
    value_satoshi: int
    classification: Classification
    outcome: Outcome | None = None

    @property
    def first_seen(self) -> datetime:
        return self.members[0].first_seen

    @property
    def confirmed_member(self) -> CorpusRecord | None:
        return next((m for m in self.members if m.confirmed), None)

    @property
    def original(self) -> CorpusRecord | None:
        """The member inferred to be the victim's own broadcast, if any."""
        if isinstance(self.classification, EncodingMutation):
            return self.members[self.classification.original_index]
        return None

    @property
    def is_attack(self) -> bool:
        return isinstance(self.classification, EncodingMutation)


def normalized_key(tx: Transaction) -> Hash256:
    """Hash of the transaction with every scriptSig emptied: what the signatures cover."""
    stripped = tuple(replace(txin, script_sig=b"") for txin in tx.inputs)
    return Hash256(double_sha256(serialize_tx(replace(tx, inputs=stripped))))


def determine_outcome(cset: ConflictSet) -> Outcome:
    confirmed = cset.confirmed_member
    if confirmed is None:
        return Outcome.Unconfirmed
    if not cset.is_attack:
        return Outcome.NotAnAttack
    if confirmed.txid == cset.original.txid:
        return Outcome.FailedAttack
    return Outcome.SuccessfulAttack


def _make_set(key: Hash256, members: list[CorpusRecord]) -> ConflictSet:
    members.sort(key=lambda m: (m.first_seen, bytes(m.txid)))
    values = {m.tx.output_value for m in members}
    if len(values) != 1:
        raise ValueMismatch(f"conflict set {key} members disagree on output value: "
                            f"{sorted(values)}")
    if sum(m.confirmed for m in members) > 1:
        raise MultipleConfirmations(f"conflict set {key} has several confirmed members")
    if len(members) == 2:
        classification = classify_pair(members[0].tx, members[1].tx)
    else:
        classification = MultiBroadcast(len(members))
    cset = ConflictSet(key, tuple(members), values.pop(), classification)
    return replace(cset, outcome=determine_outcome(cset))


def build_conflict_sets(corpus: Iterable[CorpusRecord]) -> list[ConflictSet]:
    groups: dict[Hash256, list[CorpusRecord]] = defaultdict(list)
    seen: set[Hash256] = set()
    for record in corpus:
        if record.txid in seen:
            raise DuplicateTxid(f"txid {record.txid} appears twice in the corpus")
        seen.add(record.txid)
        groups[normalized_key(record.tx)].append(record)
    sets = [_make_set(key, members) for key, members in groups.items() if len(members) >= 2]
    sets.sort(key=lambda s: (s.first_seen, bytes(s.key)))
    return sets


def brute_force_conflicts(corpus: Iterable[CorpusRecord]) -> list[list[Hash256]]:
    """Group txids that claim a common outpoint (transitively).

    Quadratic and key-free on purpose: it is the oracle the key-based
    grouping is checked against.
    """
    records = list(corpus)
    txids = [r.txid for r in records]
    spends = [{txin.previous for txin in r.tx.inputs} for r in records]
    parent = list(range(len(records)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(records)):
        for j in range(i + 1, len(records)):
            if not spends[i].isdisjoint(spends[j]):
                parent[find(j)] = find(i)

    groups: dict[int, list[Hash256]] = defaultdict(list)
    for i, t in enumerate(txids):
        groups[find(i)].append(t)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def describe_classification(c: Classification) -> dict:
    if isinstance(c, EncodingMutation):
        return {"type": "EncodingMutation", "kind": c.kind.name,
                "original_index": c.original_index, "original_inferred": True}
    if isinstance(c, GenuineReSign):
        return {"type": "GenuineReSign"}
    if isinstance(c, MultiBroadcast):
        return {"type": "MultiBroadcast", "cardinality": c.cardinality}
    if isinstance(c, Unknown):
        return {"type": "Unknown", "reason": c.reason}
    raise TypeError(c)
