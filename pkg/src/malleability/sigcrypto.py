"""DER signatures, ECDSA malleability arithmetic and SIGHASH_ALL signing."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Protocol

import ecdsa
from ecdsa.util import sigdecode_string

from .hashes import double_sha256, hash160, ripemd160, sha256
from .txcodec import Transaction, serialize_tx

SECP256K1_ORDER = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
SIGHASH_ALL = 0x01


class SignatureError(ValueError):
    pass


class MalformedDer(SignatureError):
    pass


class IntegerOutOfRange(SignatureError):
    pass


class InvalidNonce(SignatureError):
    pass


class IndexOutOfRange(IndexError):
    pass


class CryptoProvider(Protocol):
    def sha256(self, data: bytes) -> bytes: ...

    def ripemd160(self, data: bytes) -> bytes: ...

    def ecdsa_verify(self, pubkey: bytes, digest: bytes, r: int, s: int) -> bool: ...

    def ecdsa_sign(self, privkey: bytes, digest: bytes, nonce: int) -> tuple[int, int]: ...

    def group_order(self) -> int: ...


@lru_cache(maxsize=4096)
def _verifying_key(pubkey: bytes) -> ecdsa.VerifyingKey:
    return ecdsa.VerifyingKey.from_string(pubkey, curve=ecdsa.SECP256k1)


@lru_cache(maxsize=4096)
def _signing_key(privkey: bytes) -> ecdsa.SigningKey:
    return ecdsa.SigningKey.from_string(privkey, curve=ecdsa.SECP256k1)


class EcdsaProvider:
    """secp256k1 backed by the ``ecdsa`` package.  Stateless apart from key caches."""

    def sha256(self, data: bytes) -> bytes:
        return sha256(data)

    def ripemd160(self, data: bytes) -> bytes:
        return ripemd160(data)

    def ecdsa_verify(self, pubkey: bytes, digest: bytes, r: int, s: int) -> bool:
        n = SECP256K1_ORDER
        if not (1 <= r < n and 1 <= s < n):
            return False
        try:
            vk = _verifying_key(bytes(pubkey))
        except (ValueError, ecdsa.errors.MalformedPointError):
            return False
        sig = r.to_bytes(32, "big") + s.to_bytes(32, "big")
        try:
            return vk.verify_digest(sig, digest, sigdecode=sigdecode_string)
        except ecdsa.BadSignatureError:
            return False

    def ecdsa_sign(self, privkey: bytes, digest: bytes, nonce: int) -> tuple[int, int]:
        if not 1 <= nonce < SECP256K1_ORDER:
            raise InvalidNonce(f"nonce must lie in [1, n-1]")
        r, s = _signing_key(bytes(privkey)).sign_digest(
            digest, k=nonce, sigencode=lambda r, s, order: (int(r), int(s)))
        return r, s

    def group_order(self) -> int:
        return SECP256K1_ORDER


DEFAULT_PROVIDER = EcdsaProvider()


@dataclass(frozen=True)
class KeyPair:
    privkey: bytes
    pubkey: bytes
    address_hash: bytes

    @classmethod
    def from_secret(cls, secret: int) -> "KeyPair":
        if not 1 <= secret < SECP256K1_ORDER:
            raise ValueError("secret scalar out of range")
        privkey = secret.to_bytes(32, "big")
        pubkey = _signing_key(privkey).get_verifying_key().to_string("uncompressed")
        return cls(privkey, pubkey, hash160(pubkey))


# DER -----------------------------------------------------------------------

@dataclass(frozen=True)
class DerSignature:
    r: int
    s: int
    sighash_flag: int = SIGHASH_ALL
    # parse-time provenance only; two signatures with equal (r, s, flag) are equal
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        n = SECP256K1_ORDER
        if not (1 <= self.r < n and 1 <= self.s < n):
            raise IntegerOutOfRange("r and s must lie in [1, n-1]")

    @property
    def is_low_s(self) -> bool:
        return self.s <= SECP256K1_ORDER // 2


def _der_int(value: int, padding: int = 0) -> bytes:
    body = value.to_bytes((value.bit_length() + 7) // 8 or 1, "big")
    if body[0] & 0x80:
        body = b"\x00" + body
    body = b"\x00" * padding + body
    return b"\x02" + bytes((len(body),)) + body


def encode_der(sig: DerSignature, strict: bool = True) -> bytes:
    """DER(SEQUENCE(r, s)) followed by the sighash byte.

    ``strict=False`` emits the one lax variant we model: ``r`` carries an
    extra leading zero byte.
    """
    body = _der_int(sig.r, 0 if strict else 1) + _der_int(sig.s)
    return b"\x30" + bytes((len(body),)) + body + bytes((sig.sighash_flag,))


def _read_int(data: bytes, pos: int, strict: bool) -> tuple[int, int, bool]:
    if pos + 2 > len(data) or data[pos] != 0x02:
        raise MalformedDer("expected INTEGER tag")
    length = data[pos + 1]
    if length == 0 or length & 0x80:
        raise MalformedDer("bad INTEGER length")
    body = data[pos + 2:pos + 2 + length]
    if len(body) != length:
        raise MalformedDer("INTEGER overruns signature")
    if body[0] & 0x80:
        raise MalformedDer("negative INTEGER")
    canonical = not (length > 1 and body[0] == 0 and not body[1] & 0x80)
    if strict and not canonical:
        raise MalformedDer("INTEGER has superfluous leading zero")
    return int.from_bytes(body, "big"), pos + 2 + length, canonical


def parse_der(data: bytes, strict: bool = True) -> DerSignature:
    """Parse ``DER ‖ sighash_flag``.

    In lax mode integers may carry superfluous leading zero bytes; the
    result then has ``strict=False``.
    """
    data = bytes(data)
    if len(data) < 9 or data[0] != 0x30:
        raise MalformedDer("expected SEQUENCE tag")
    seq_len = data[1]
    if seq_len & 0x80 or seq_len + 3 != len(data):
        raise MalformedDer("SEQUENCE length does not match signature size")
    r, pos, r_ok = _read_int(data, 2, strict)
    s, pos, s_ok = _read_int(data, pos, strict)
    if pos != len(data) - 1:
        raise MalformedDer("garbage after INTEGERs")
    n = SECP256K1_ORDER
    if not (1 <= r < n and 1 <= s < n):
        raise IntegerOutOfRange("r or s outside [1, n-1]")
    return DerSignature(r, s, data[-1], strict=r_ok and s_ok)


def negate_s(sig: DerSignature, n: int = SECP256K1_ORDER) -> DerSignature:
    return replace(sig, s=n - sig.s)


def low_s(sig: DerSignature) -> DerSignature:
    return sig if sig.is_low_s else negate_s(sig)


# Signing -------------------------------------------------------------------

def sighash_all(tx: Transaction, input_index: int, referenced_script_pubkey: bytes,
                flag: int = SIGHASH_ALL) -> bytes:
    if not 0 <= input_index < len(tx.inputs):
        raise IndexOutOfRange(f"input {input_index} of {len(tx.inputs)}")
    inputs = tuple(
        replace(txin, script_sig=referenced_script_pubkey if i == input_index else b"")
        for i, txin in enumerate(tx.inputs)
    )
    preimage = serialize_tx(replace(tx, inputs=inputs)) + struct.pack("<I", flag)
    return double_sha256(preimage)


def sign_input(tx: Transaction, input_index: int, referenced_script_pubkey: bytes,
               keypair: KeyPair, provider: CryptoProvider = DEFAULT_PROVIDER,
               nonce: int = 1, low_s_only: bool = True) -> DerSignature:
    """Sign input ``input_index`` with an explicit nonce.

    Signatures come out low-s unless ``low_s_only`` is false, so that the
    s-negation mutation always moves away from the wallet's own form.
    """
    if not 1 <= nonce < provider.group_order():
        raise InvalidNonce("nonce must lie in [1, n-1]")
    digest = sighash_all(tx, input_index, referenced_script_pubkey)
    r, s = provider.ecdsa_sign(keypair.privkey, digest, nonce)
    sig = DerSignature(r, s, SIGHASH_ALL)
    return low_s(sig) if low_s_only else sig


def verify_input(tx: Transaction, input_index: int, referenced_script_pubkey: bytes,
                 pubkey: bytes, sig: DerSignature,
                 provider: CryptoProvider = DEFAULT_PROVIDER) -> bool:
    if sig.sighash_flag != SIGHASH_ALL:
        return False
    digest = sighash_all(tx, input_index, referenced_script_pubkey)
    return provider.ecdsa_verify(pubkey, digest, sig.r, sig.s)


class TransactionChecker:
    """OP_CHECKSIG backend for one input of one transaction.

    Accepts lax DER and high-s, as nodes of the era did.
    """

    def __init__(self, tx: Transaction, input_index: int,
                 provider: CryptoProvider = DEFAULT_PROVIDER):
        self.tx = tx
        self.input_index = input_index
        self.provider = provider

    def check_sig(self, sig: bytes, pubkey: bytes, script_code: bytes) -> bool:
        try:
            parsed = parse_der(sig, strict=False)
        except SignatureError:
            return False
        return verify_input(self.tx, self.input_index, script_code, pubkey, parsed, self.provider)
