"""Bit-exact (pre-segwit) Bitcoin transaction serialization and hashing."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

from .hashes import double_sha256

MAX_SCRIPT_SIZE = 10_000
MAX_IO_COUNT = 100_000
MAX_MONEY = 21 * 10**14
UINT32_MAX = 0xFFFFFFFF
UINT64_MAX = 0xFFFFFFFFFFFFFFFF


class DecodeError(ValueError):
    """Base class for byte-level decoding failures.  ``offset`` names the failing byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class TruncatedInput(DecodeError):
    pass


class TrailingBytes(DecodeError):
    pass


class LimitExceeded(DecodeError):
    pass


class NonMinimalVarInt(DecodeError):
    pass


class Hash256(bytes):
    """32 raw bytes.  ``str()`` gives the byte-reversed hex used by block explorers."""

    def __new__(cls, value: bytes):
        if len(value) != 32:
            raise ValueError(f"Hash256 needs 32 bytes, got {len(value)}")
        return super().__new__(cls, value)

    @classmethod
    def from_hex(cls, display_hex: str) -> "Hash256":
        return cls(bytes.fromhex(display_hex)[::-1])

    def __str__(self) -> str:
        return self[::-1].hex()

    def __repr__(self) -> str:
        return f"Hash256({str(self)!r})"


ZERO_HASH = Hash256(bytes(32))


@dataclass(frozen=True)
class OutPoint:
    txid: Hash256
    index: int


@dataclass(frozen=True)
class TxInput:
    previous: OutPoint
    script_sig: bytes = b""
    sequence: int = UINT32_MAX


@dataclass(frozen=True)
class TxOutput:
    value: int
    script_pubkey: bytes = b""

    def __post_init__(self):
        if not 0 <= self.value <= MAX_MONEY:
            raise ValueError(f"output value {self.value} outside [0, {MAX_MONEY}]")


@dataclass(frozen=True)
class Transaction:
    inputs: tuple[TxInput, ...]
    outputs: tuple[TxOutput, ...]
    version: int = 1
    locktime: int = 0
    _txid: Hash256 | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if not self.inputs or not self.outputs:
            raise ValueError("a transaction needs at least one input and one output")

    @property
    def txid(self) -> Hash256:
        # cached: transactions are immutable
        if self._txid is None:
            object.__setattr__(self, "_txid", Hash256(double_sha256(serialize_tx(self))))
        return self._txid

    @property
    def output_value(self) -> int:
        return sum(o.value for o in self.outputs)

    def with_script_sig(self, index: int, script_sig: bytes) -> "Transaction":
        inputs = list(self.inputs)
        inputs[index] = replace(inputs[index], script_sig=script_sig)
        return replace(self, inputs=tuple(inputs))


def encode_varint(n: int) -> bytes:
    if n < 0 or n > UINT64_MAX:
        raise ValueError(f"varint out of range: {n}")
    if n < 0xFD:
        return bytes((n,))
    if n <= 0xFFFF:
        return b"\xfd" + struct.pack("<H", n)
    if n <= 0xFFFFFFFF:
        return b"\xfe" + struct.pack("<I", n)
    return b"\xff" + struct.pack("<Q", n)


_VARINT_WIDTH = {0xFD: (2, 0xFD), 0xFE: (4, 0x10000), 0xFF: (8, 0x100000000)}


def parse_varint(data: bytes, offset: int = 0) -> tuple[int, int]:
    """Return ``(value, bytes consumed)`` for the compact-size integer at ``offset``."""
    if offset >= len(data):
        raise TruncatedInput("varint", offset)
    prefix = data[offset]
    if prefix < 0xFD:
        return prefix, 1
    width, minimum = _VARINT_WIDTH[prefix]
    if offset + 1 + width > len(data):
        raise TruncatedInput("varint body", offset + 1)
    value = int.from_bytes(data[offset + 1:offset + 1 + width], "little")
    if value < minimum:
        raise NonMinimalVarInt(f"value {value} encoded in {width + 1} bytes", offset)
    return value, 1 + width


def serialize_tx(tx: Transaction) -> bytes:
    parts = [struct.pack("<I", tx.version), encode_varint(len(tx.inputs))]
    for txin in tx.inputs:
        parts.append(txin.previous.txid)
        parts.append(struct.pack("<I", txin.previous.index))
        parts.append(encode_varint(len(txin.script_sig)))
        parts.append(txin.script_sig)
        parts.append(struct.pack("<I", txin.sequence))
    parts.append(encode_varint(len(tx.outputs)))
    for txout in tx.outputs:
        parts.append(struct.pack("<Q", txout.value))
        parts.append(encode_varint(len(txout.script_pubkey)))
        parts.append(txout.script_pubkey)
    parts.append(struct.pack("<I", tx.locktime))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedInput(what, self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def uint(self, n: int, what: str) -> int:
        return int.from_bytes(self.take(n, what), "little")

    def varint(self) -> int:
        value, used = parse_varint(self.data, self.pos)
        self.pos += used
        return value

    def count(self, what: str) -> int:
        start = self.pos
        n = self.varint()
        if n > MAX_IO_COUNT:
            raise LimitExceeded(f"{what} count {n}", start)
        return n

    def script(self, what: str) -> bytes:
        start = self.pos
        n = self.varint()
        if n > MAX_SCRIPT_SIZE:
            raise LimitExceeded(f"{what} length {n}", start)
        return self.take(n, what)


def deserialize_tx(data: bytes) -> Transaction:
    """Parse a full transaction.  Every byte must be consumed.

    Raises a :class:`DecodeError` subclass carrying the failing offset.
    """
    data = bytes(data)
    reader = _Reader(data)
    version = reader.uint(4, "version")
    inputs = []
    for _ in range(reader.count("input")):
        txid = Hash256(reader.take(32, "outpoint txid"))
        index = reader.uint(4, "outpoint index")
        script_sig = reader.script("script_sig")
        sequence = reader.uint(4, "sequence")
        inputs.append(TxInput(OutPoint(txid, index), script_sig, sequence))
    n_outputs_at = reader.pos
    outputs = []
    for _ in range(reader.count("output")):
        value_at = reader.pos
        value = reader.uint(8, "value")
        if value > MAX_MONEY:
            raise LimitExceeded(f"output value {value}", value_at)
        outputs.append(TxOutput(value, reader.script("script_pubkey")))
    locktime = reader.uint(4, "locktime")
    if reader.pos != len(data):
        raise TrailingBytes(f"{len(data) - reader.pos} unconsumed bytes", reader.pos)
    if not inputs:
        raise LimitExceeded("transaction has no inputs", 4)
    if not outputs:
        raise LimitExceeded("transaction has no outputs", n_outputs_at)
    return Transaction(tuple(inputs), tuple(outputs), version, locktime)


def txid(tx: Transaction) -> Hash256:
    return tx.txid
