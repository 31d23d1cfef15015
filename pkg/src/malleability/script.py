"""Claiming scripts and claiming conditions.

Parsing is byte-faithful: each push keeps the opcode flavor it was written
with, so ``parse_script(b).encode() == b``.  This is what lets the toolkit
see (and undo) the push-encoding malleability of old scriptSigs.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Protocol, Union

from .hashes import hash160

MAX_PUSH_SIZE = 10_000
MAX_INSTRUCTIONS = 201

OP_0 = 0x00
OP_PUSHDATA1 = 0x4C
OP_PUSHDATA2 = 0x4D
OP_PUSHDATA4 = 0x4E
OP_DROP = 0x75
OP_DUP = 0x76
OP_EQUALVERIFY = 0x88
OP_HASH160 = 0xA9
OP_CHECKSIG = 0xAC

OPCODE_NAMES = {
    OP_DROP: "OP_DROP",
    OP_DUP: "OP_DUP",
    OP_EQUALVERIFY: "OP_EQUALVERIFY",
    OP_HASH160: "OP_HASH160",
    OP_CHECKSIG: "OP_CHECKSIG",
}


class ScriptError(ValueError):
    pass


class TruncatedPush(ScriptError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnsupportedOpcode(ScriptError):
    pass


class StackUnderflow(ScriptError):
    pass


class ScriptTooLong(ScriptError):
    pass


class PushEncoding(enum.Enum):
    DIRECT = "Direct"
    PUSHDATA1 = "PushData1"
    PUSHDATA2 = "PushData2"
    PUSHDATA4 = "PushData4"


_PUSH_CAPACITY = {
    PushEncoding.DIRECT: 0x4B,
    PushEncoding.PUSHDATA1: 0xFF,
    PushEncoding.PUSHDATA2: 0xFFFF,
    PushEncoding.PUSHDATA4: 0xFFFFFFFF,
}


def minimal_encoding(length: int) -> PushEncoding:
    for encoding, capacity in _PUSH_CAPACITY.items():
        if length <= capacity:
            return encoding
    raise ValueError(f"push of {length} bytes is too large")


@dataclass(frozen=True)
class PushOp:
    encoding: PushEncoding
    payload: bytes

    def __post_init__(self):
        n = len(self.payload)
        # An empty Direct push is OP_0, the signing placeholder.
        if n > _PUSH_CAPACITY[self.encoding] or n > MAX_PUSH_SIZE:
            raise ValueError(f"{self.encoding.value} cannot carry {n} bytes")

    @classmethod
    def minimal(cls, payload: bytes) -> "PushOp":
        return cls(minimal_encoding(len(payload)), bytes(payload))

    def encode(self) -> bytes:
        n = len(self.payload)
        if self.encoding is PushEncoding.DIRECT:
            head = bytes((n,))
        elif self.encoding is PushEncoding.PUSHDATA1:
            head = bytes((OP_PUSHDATA1, n))
        elif self.encoding is PushEncoding.PUSHDATA2:
            head = bytes((OP_PUSHDATA2,)) + struct.pack("<H", n)
        else:
            head = bytes((OP_PUSHDATA4,)) + struct.pack("<I", n)
        return head + self.payload


@dataclass(frozen=True)
class Opcode:
    """Any non-push opcode.  Named ones are the P2PKH opcodes plus OP_DROP."""

    code: int

    def __post_init__(self):
        if not 0 <= self.code <= 0xFF or self.code <= OP_PUSHDATA4:
            raise ValueError(f"0x{self.code:02x} is a push opcode, not an Opcode")

    @property
    def name(self) -> str:
        return OPCODE_NAMES.get(self.code, f"Other(0x{self.code:02x})")

    def encode(self) -> bytes:
        return bytes((self.code,))


ScriptInstr = Union[PushOp, Opcode]


@dataclass(frozen=True)
class Script:
    instrs: tuple[ScriptInstr, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "instrs", tuple(self.instrs))

    def encode(self) -> bytes:
        return b"".join(i.encode() for i in self.instrs)

    def __len__(self) -> int:
        return len(self.instrs)

    @property
    def is_push_only(self) -> bool:
        return all(isinstance(i, PushOp) for i in self.instrs)

    def payloads(self) -> list[bytes]:
        return [i.payload for i in self.instrs if isinstance(i, PushOp)]

    def __str__(self) -> str:
        words = []
        for i in self.instrs:
            if isinstance(i, PushOp):
                words.append(f"{i.encoding.value}<{i.payload.hex()}>")
            else:
                words.append(i.name)
        return " ".join(words)


def parse_script(data: bytes) -> Script:
    instrs: list[ScriptInstr] = []
    pos = 0
    n = len(data)
    while pos < n:
        start = pos
        op = data[pos]
        pos += 1
        if op > OP_PUSHDATA4:
            instrs.append(Opcode(op))
            continue
        if op <= 0x4B:
            encoding, length = PushEncoding.DIRECT, op
        else:
            width = {OP_PUSHDATA1: 1, OP_PUSHDATA2: 2, OP_PUSHDATA4: 4}[op]
            if pos + width > n:
                raise TruncatedPush("push length field", start)
            length = int.from_bytes(data[pos:pos + width], "little")
            pos += width
            encoding = {1: PushEncoding.PUSHDATA1, 2: PushEncoding.PUSHDATA2,
                        4: PushEncoding.PUSHDATA4}[width]
        if pos + length > n:
            raise TruncatedPush(f"push of {length} bytes", start)
        if length > MAX_PUSH_SIZE:
            raise TruncatedPush(f"push of {length} bytes exceeds limit", start)
        instrs.append(PushOp(encoding, bytes(data[pos:pos + length])))
        pos += length
    return Script(tuple(instrs))


def is_minimal_push(push: PushOp) -> bool:
    return push.encoding is minimal_encoding(len(push.payload))


def is_minimal(script: Script) -> bool:
    return all(is_minimal_push(i) for i in script.instrs if isinstance(i, PushOp))


def minimalize(script: Script) -> Script:
    return Script(tuple(
        PushOp.minimal(i.payload) if isinstance(i, PushOp) else i for i in script.instrs
    ))


# Templates -----------------------------------------------------------------

@dataclass(frozen=True)
class P2pkhCondition:
    pubkey_hash: bytes

    def to_script(self) -> Script:
        return p2pkh_condition(self.pubkey_hash)


@dataclass(frozen=True)
class SigScript:
    sig_push: PushOp
    pubkey_push: PushOp
    prefix_pushes: tuple[PushOp, ...] = ()


@dataclass(frozen=True)
class NonStandard:
    pass


Template = Union[P2pkhCondition, SigScript, NonStandard]


def p2pkh_condition(pubkey_hash: bytes) -> Script:
    if len(pubkey_hash) != 20:
        raise ValueError("pubkey hash must be 20 bytes")
    return Script((Opcode(OP_DUP), Opcode(OP_HASH160), PushOp.minimal(pubkey_hash),
                   Opcode(OP_EQUALVERIFY), Opcode(OP_CHECKSIG)))


def sig_script(sig: bytes, pubkey: bytes) -> Script:
    return Script((PushOp.minimal(sig), PushOp.minimal(pubkey)))


def _is_op(instr: ScriptInstr, code: int) -> bool:
    return isinstance(instr, Opcode) and instr.code == code


def match_template(script: Script, kind: str) -> Template:
    """Match ``script`` against the standard condition (``kind="condition"``)
    or the standard claiming script (``kind="claiming"``)."""
    ins = script.instrs
    if kind == "condition":
        if (len(ins) == 5 and _is_op(ins[0], OP_DUP) and _is_op(ins[1], OP_HASH160)
                and isinstance(ins[2], PushOp) and ins[2].encoding is PushEncoding.DIRECT
                and len(ins[2].payload) == 20
                and _is_op(ins[3], OP_EQUALVERIFY) and _is_op(ins[4], OP_CHECKSIG)):
            return P2pkhCondition(ins[2].payload)
        return NonStandard()
    if kind == "claiming":
        if len(ins) >= 2 and script.is_push_only and ins[-2].payload and ins[-1].payload:
            return SigScript(ins[-2], ins[-1], tuple(ins[:-2]))
        return NonStandard()
    raise ValueError(f"unknown template kind {kind!r}")


# Execution -----------------------------------------------------------------

class SignatureChecker(Protocol):
    def check_sig(self, sig: bytes, pubkey: bytes, script_code: bytes) -> bool:
        ...


def cast_to_bool(item: bytes) -> bool:
    for i, b in enumerate(item):
        if b:
            # negative zero (0x80 in the last byte, zeros elsewhere) is false
            return not (i == len(item) - 1 and b == 0x80)
    return False


def execute(script_sig: Script, script_pubkey: Script, checker: SignatureChecker) -> bool:
    """Run scriptSig then scriptPubKey on a shared stack.

    Pre-BIP62 rules: non-minimal pushes and leftover stack items are fine;
    the result is the truthiness of the final top item.  A failed
    OP_EQUALVERIFY aborts with ``False``.
    """
    if len(script_sig) + len(script_pubkey) > MAX_INSTRUCTIONS:
        raise ScriptTooLong(f"more than {MAX_INSTRUCTIONS} instructions")
    script_code = script_pubkey.encode()
    stack: list[bytes] = []

    def pop() -> bytes:
        if not stack:
            raise StackUnderflow("pop from empty stack")
        return stack.pop()

    for instr in script_sig.instrs + script_pubkey.instrs:
        if isinstance(instr, PushOp):
            stack.append(instr.payload)
            continue
        code = instr.code
        if code == OP_DUP:
            if not stack:
                raise StackUnderflow("OP_DUP on empty stack")
            stack.append(stack[-1])
        elif code == OP_HASH160:
            stack.append(hash160(pop()))
        elif code == OP_EQUALVERIFY:
            if pop() != pop():
                return False
        elif code == OP_CHECKSIG:
            pubkey = pop()
            sig = pop()
            stack.append(b"\x01" if checker.check_sig(sig, pubkey, script_code) else b"")
        elif code == OP_DROP:
            pop()
        else:
            raise UnsupportedOpcode(instr.name)
    return bool(stack) and cast_to_bool(stack[-1])
