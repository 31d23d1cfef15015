"""Malleability mutations (the attacker's move) and pair classification.

Only the claiming script of one input is ever touched, so every mutation
keeps the signed part of the transaction, and therefore its normalized key,
intact while changing the txid.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Union

from . import script as sc
from .sigcrypto import (
    DEFAULT_PROVIDER, SECP256K1_ORDER, CryptoProvider, DerSignature, KeyPair,
    SignatureError, encode_der, negate_s, parse_der, sign_input,
)
from .txcodec import OutPoint, Transaction


class MutationError(ValueError):
    pass


class NotApplicable(MutationError):
    pass


class MissingContext(MutationError):
    pass


class KeyMismatch(ValueError):
    pass


class MutationKind(enum.Enum):
    EcdsaNegateS = 1
    LaxDerPadding = 2
    ExtraPush = 3
    ComputedOperands = 4
    NonMinimalPush = 5
    ZeroPaddedNumber = 6
    IgnoredDrop = 7
    SighashFlag = 8
    ReSign = 9

    @property
    def implemented(self) -> bool:
        return self in IMPLEMENTED_KINDS

    @classmethod
    def parse(cls, name: str) -> "MutationKind":
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown mutation kind {name!r}; "
                             f"choose from {', '.join(k.name for k in cls)}") from None


IMPLEMENTED_KINDS = frozenset({
    MutationKind.EcdsaNegateS, MutationKind.LaxDerPadding, MutationKind.ExtraPush,
    MutationKind.NonMinimalPush, MutationKind.ReSign,
})

EXTRA_PUSH_PAYLOAD = b"\x51"


@dataclass(frozen=True)
class EncodingMutation:
    kind: MutationKind
    original_index: int


@dataclass(frozen=True)
class GenuineReSign:
    pass


@dataclass(frozen=True)
class Unknown:
    reason: str = ""


PairClassification = Union[EncodingMutation, GenuineReSign, Unknown]


@dataclass
class MutationContext:
    """Key material for re-signing.

    ``keys`` maps public keys to key pairs, ``prevouts`` maps the spent
    outpoints to their scriptPubKeys.
    """

    keys: Mapping[bytes, KeyPair] = field(default_factory=dict)
    prevouts: Mapping[OutPoint, bytes] = field(default_factory=dict)
    nonce: int | None = None
    provider: CryptoProvider = DEFAULT_PROVIDER

    @classmethod
    def single(cls, keypair: KeyPair, outpoint: OutPoint, script_pubkey: bytes,
               nonce: int) -> "MutationContext":
        return cls({keypair.pubkey: keypair}, {outpoint: script_pubkey}, nonce)


def _sig_script_of(tx: Transaction, input_index: int, allow_prefix: bool) -> sc.SigScript:
    if not 0 <= input_index < len(tx.inputs):
        raise NotApplicable(f"transaction has no input {input_index}")
    try:
        parsed = sc.parse_script(tx.inputs[input_index].script_sig)
    except sc.ScriptError as exc:
        raise NotApplicable(f"unparseable scriptSig: {exc}") from None
    template = sc.match_template(parsed, "claiming")
    if not isinstance(template, sc.SigScript):
        raise NotApplicable("scriptSig is not a standard signature script")
    if template.prefix_pushes and not allow_prefix:
        raise NotApplicable("scriptSig carries extra leading pushes")
    return template


def _rebuild(template: sc.SigScript, sig_push: sc.PushOp | None = None,
             pubkey_push: sc.PushOp | None = None, prefix=None) -> bytes:
    prefix = template.prefix_pushes if prefix is None else prefix
    return sc.Script(tuple(prefix) + (sig_push or template.sig_push,
                                      pubkey_push or template.pubkey_push)).encode()


def _repush(push: sc.PushOp, payload: bytes) -> sc.PushOp:
    # keep the flavor the wallet used when it can still carry the payload
    try:
        return sc.PushOp(push.encoding, payload)
    except ValueError:
        return sc.PushOp.minimal(payload)


def _strict_sig(template: sc.SigScript) -> DerSignature:
    try:
        return parse_der(template.sig_push.payload, strict=True)
    except SignatureError as exc:
        raise NotApplicable(f"signature is not strict DER: {exc}") from None


def mutate(tx: Transaction, kind: MutationKind, input_index: int = 0,
           context: MutationContext | None = None) -> Transaction:
    """Return ``tx`` with the claiming script of one input malleated by ``kind``."""
    if not kind.implemented:
        raise NotApplicable(f"{kind.name} has no generator")
    template = _sig_script_of(tx, input_index, allow_prefix=kind is MutationKind.ExtraPush)

    if kind is MutationKind.NonMinimalPush:
        pushes = (template.sig_push, template.pubkey_push)
        if not all(sc.is_minimal_push(p) for p in pushes):
            raise NotApplicable("pushes are already non-minimal")
        new = _rebuild(template, *(sc.PushOp(sc.PushEncoding.PUSHDATA2, p.payload)
                                   for p in pushes))
    elif kind is MutationKind.EcdsaNegateS:
        sig = _strict_sig(template)
        if not sig.is_low_s:
            raise NotApplicable("signature is already high-s")
        new = _rebuild(template, _repush(template.sig_push, encode_der(negate_s(sig))))
    elif kind is MutationKind.LaxDerPadding:
        sig = _strict_sig(template)
        new = _rebuild(template, _repush(template.sig_push, encode_der(sig, strict=False)))
    elif kind is MutationKind.ExtraPush:
        extra = sc.PushOp.minimal(EXTRA_PUSH_PAYLOAD)
        new = _rebuild(template, prefix=(extra,) + template.prefix_pushes)
    else:
        new = _resign(tx, input_index, template, context)

    mutated = tx.with_script_sig(input_index, new)
    if mutated.txid == tx.txid:
        raise NotApplicable(f"{kind.name} left the transaction unchanged")
    return mutated


def _resign(tx: Transaction, input_index: int, template: sc.SigScript,
            context: MutationContext | None) -> bytes:
    if context is None or context.nonce is None:
        raise MissingContext("ReSign needs key material and a fresh nonce")
    pubkey = template.pubkey_push.payload
    keypair = context.keys.get(pubkey)
    spk = context.prevouts.get(tx.inputs[input_index].previous)
    if keypair is None or spk is None:
        raise MissingContext("no private key or prevout script for this input")
    sig = sign_input(tx, input_index, spk, keypair, context.provider, context.nonce)
    sig_bytes = encode_der(sig)
    if sig_bytes == template.sig_push.payload:
        raise NotApplicable("re-signing with this nonce reproduces the signature")
    return _rebuild(template, sc.PushOp.minimal(sig_bytes))


def enumerate_applicable(tx: Transaction, context: MutationContext | None = None
                         ) -> list[tuple[int, MutationKind]]:
    found = []
    for i in range(len(tx.inputs)):
        for kind in MutationKind:
            if not kind.implemented:
                continue
            try:
                mutate(tx, kind, i, context)
            except MutationError:
                continue
            found.append((i, kind))
    return found


# Classification ------------------------------------------------------------

_SAME = "same"
_RESIGN = "resign"


def _classify_input(sa: bytes, sb: bytes):
    """Compare one input's scriptSigs.  Returns ``_SAME``, ``_RESIGN``,
    ``(kind, original_side)`` or an ``Unknown``."""
    if sa == sb:
        return _SAME
    try:
        a, b = sc.parse_script(sa), sc.parse_script(sb)
    except sc.ScriptError:
        return Unknown("unparseable scriptSig")

    if a.is_push_only and b.is_push_only and a.payloads() == b.payloads():
        min_a, min_b = sc.is_minimal(a), sc.is_minimal(b)
        if min_a != min_b:
            return MutationKind.NonMinimalPush, 0 if min_a else 1
        return Unknown("push encodings differ but neither side is minimal")

    if len(a) != len(b):
        short, long_, short_side = (a, b, 0) if len(a) < len(b) else (b, a, 1)
        extra = long_.instrs[:len(long_) - len(short)]
        if (long_.instrs[len(extra):] == short.instrs
                and all(isinstance(i, sc.PushOp) for i in extra)):
            return MutationKind.ExtraPush, short_side
        return Unknown("scripts differ in length")

    ta, tb = sc.match_template(a, "claiming"), sc.match_template(b, "claiming")
    if not (isinstance(ta, sc.SigScript) and isinstance(tb, sc.SigScript)):
        return Unknown("non-standard scriptSig")
    if ta.prefix_pushes != tb.prefix_pushes or ta.pubkey_push != tb.pubkey_push:
        return Unknown("scriptSigs differ outside the signature")
    if not (sc.is_minimal_push(ta.sig_push) and sc.is_minimal_push(tb.sig_push)):
        return Unknown("signature pushed non-minimally")
    try:
        sig_a = parse_der(ta.sig_push.payload, strict=False)
        sig_b = parse_der(tb.sig_push.payload, strict=False)
    except SignatureError:
        return Unknown("signature is not DER")
    if sig_a.sighash_flag != sig_b.sighash_flag:
        return Unknown("sighash flags differ")
    if (sig_a.r, sig_a.s) == (sig_b.r, sig_b.s):
        if sig_a.strict != sig_b.strict:
            return MutationKind.LaxDerPadding, 0 if sig_a.strict else 1
        return Unknown("same signature, different lax encodings")
    if not (sig_a.strict and sig_b.strict):
        return Unknown("signature changed and re-encoded")
    if sig_a.r == sig_b.r and sig_a.s + sig_b.s == SECP256K1_ORDER:
        return MutationKind.EcdsaNegateS, 0 if sig_a.is_low_s else 1
    return _RESIGN


def classify_pair(a: Transaction, b: Transaction) -> PairClassification:
    """Explain how two members of one conflict set relate.

    The "original" is inferred by convention: the minimal, strict, low-s or
    shorter side.  That is a heuristic, not ground truth.
    """
    from .conflict import normalized_key

    if normalized_key(a) != normalized_key(b):
        raise KeyMismatch("transactions belong to different conflict sets")
    if a.txid == b.txid:
        raise KeyMismatch("cannot classify a transaction against itself")

    verdicts = set()
    for ia, ib in zip(a.inputs, b.inputs):
        verdict = _classify_input(ia.script_sig, ib.script_sig)
        if isinstance(verdict, Unknown):
            return verdict
        if verdict is not _SAME:
            verdicts.add(verdict)
    if verdicts == {_RESIGN}:
        return GenuineReSign()
    if len(verdicts) == 1:
        kind, side = verdicts.pop()
        return EncodingMutation(kind, side)
    return Unknown("inputs were changed in different ways")
