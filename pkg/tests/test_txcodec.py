import random
import struct

import pytest
from Crypto.Hash import SHA256
from hypothesis import given, settings, strategies as st

from malleability.corpus import default_plan, generate
from malleability.txcodec import (
    MAX_SCRIPT_SIZE, DecodeError, Hash256, LimitExceeded, NonMinimalVarInt, OutPoint,
    TrailingBytes, Transaction, TruncatedInput, TxInput, TxOutput, ZERO_HASH, deserialize_tx,
    encode_varint, parse_varint, serialize_tx, txid,
)


def oracle_double_sha256(data: bytes) -> bytes:
    return SHA256.new(SHA256.new(data).digest()).digest()


def minimal_tx() -> Transaction:
    return Transaction((TxInput(OutPoint(ZERO_HASH, 0), b"", 0xFFFFFFFF),), (TxOutput(0, b""),), 1, 0)


def test_minimal_tx_is_60_bytes():
    raw = serialize_tx(minimal_tx())
    assert len(raw) == 4 + 1 + (32 + 4 + 1 + 0 + 4) + 1 + (8 + 1 + 0) + 4 == 60
    assert deserialize_tx(raw) == minimal_tx()


def test_layout_matches_hand_assembly():
    tx = Transaction((TxInput(OutPoint(Hash256(bytes(range(32))), 7), b"\xab\xcd", 5),),
                     (TxOutput(1234, b"\x51"), TxOutput(99, b"")), 2, 600)
    expected = (struct.pack("<I", 2) + b"\x01" + bytes(range(32)) + struct.pack("<I", 7)
                + b"\x02\xab\xcd" + struct.pack("<I", 5) + b"\x02"
                + struct.pack("<Q", 1234) + b"\x01\x51" + struct.pack("<Q", 99) + b"\x00"
                + struct.pack("<I", 600))
    assert serialize_tx(tx) == expected


def test_empty_input_truncated_at_zero():
    with pytest.raises(TruncatedInput) as err:
        deserialize_tx(b"")
    assert err.value.offset == 0


def test_trailing_byte_rejected_at_final_offset():
    raw = serialize_tx(minimal_tx())
    with pytest.raises(TrailingBytes) as err:
        deserialize_tx(raw + b"\x00")
    assert err.value.offset == len(raw)


def test_oversized_script_is_limit_exceeded():
    raw = bytearray(serialize_tx(minimal_tx()))
    # script_sig length byte sits after version(4) + count(1) + outpoint(36)
    raw[41:42] = encode_varint(MAX_SCRIPT_SIZE + 1)
    with pytest.raises(LimitExceeded) as err:
        deserialize_tx(bytes(raw))
    assert err.value.offset == 41


@pytest.mark.parametrize("n, encoded", [
    (0, b"\x00"), (252, b"\xfc"), (253, b"\xfd\xfd\x00"), (0xFFFF, b"\xfd\xff\xff"),
    (0x10000, b"\xfe\x00\x00\x01\x00"), (0xFFFFFFFF, b"\xfe\xff\xff\xff\xff"),
    (0x100000000, b"\xff\x00\x00\x00\x00\x01\x00\x00\x00"),
])
def test_varint_table(n, encoded):
    assert encode_varint(n) == encoded
    assert parse_varint(encoded) == (n, len(encoded))


def test_varint_rejects_non_minimal():
    with pytest.raises(NonMinimalVarInt):
        parse_varint(b"\xfd\x10\x00")


@given(st.integers(0, 2**64 - 1))
def test_varint_round_trip_and_longer_forms_rejected(n):
    enc = encode_varint(n)
    assert parse_varint(enc) == (n, len(enc))
    for prefix, width in ((0xFD, 2), (0xFE, 4), (0xFF, 8)):
        if 1 + width > len(enc) and n < 2 ** (8 * width):
            with pytest.raises(NonMinimalVarInt):
                parse_varint(bytes((prefix,)) + n.to_bytes(width, "little"))


def test_varint_truncated():
    with pytest.raises(TruncatedInput):
        parse_varint(b"\xfe\x01\x02")


scripts = st.binary(max_size=120)
u32 = st.integers(0, 2**32 - 1)
tx_inputs = st.builds(lambda h, i, s, q: TxInput(OutPoint(Hash256(h), i), s, q),
                      st.binary(min_size=32, max_size=32), u32, scripts, u32)
tx_outputs = st.builds(TxOutput, st.integers(0, 21 * 10**14), scripts)
transactions = st.builds(Transaction, st.lists(tx_inputs, min_size=1, max_size=4),
                         st.lists(tx_outputs, min_size=1, max_size=4), u32, u32)


@given(transactions)
def test_round_trip(tx):
    assert deserialize_tx(serialize_tx(tx)) == tx


@settings(max_examples=500)
@given(st.binary(max_size=300))
def test_parse_is_total(data):
    try:
        tx = deserialize_tx(data)
    except DecodeError as exc:
        assert 0 <= exc.offset <= len(data)
    else:
        assert serialize_tx(tx) == data


@given(transactions, st.data())
def test_truncations_report_offsets(tx, data):
    raw = serialize_tx(tx)
    cut = data.draw(st.integers(0, len(raw) - 1))
    with pytest.raises(TruncatedInput) as err:
        deserialize_tx(raw[:cut])
    assert err.value.offset <= cut


def test_txid_is_double_sha256_of_serialization(standard_tx):
    raw = serialize_tx(standard_tx)
    assert txid(standard_tx) == oracle_double_sha256(raw)
    assert str(txid(standard_tx)) == oracle_double_sha256(raw)[::-1].hex()


def test_equal_transactions_equal_txids(standard_tx):
    clone = deserialize_tx(serialize_tx(standard_tx))
    assert clone is not standard_tx and txid(clone) == txid(standard_tx)


def test_script_sig_byte_change_changes_txid(standard_tx):
    sig = bytearray(standard_tx.inputs[0].script_sig)
    sig[10] ^= 0x01
    other = standard_tx.with_script_sig(0, bytes(sig))
    assert txid(other) != txid(standard_tx)
    assert txid(other) == oracle_double_sha256(serialize_tx(other))


def test_single_byte_flips_change_txid(standard_tx):
    raw = serialize_tx(standard_tx)
    base = txid(standard_tx)
    rng = random.Random(3)
    positions = rng.sample(range(len(raw)), 40)
    for pos in positions:
        flipped = bytearray(raw)
        flipped[pos] ^= 1 << rng.randrange(8)
        assert oracle_double_sha256(bytes(flipped)) != base


def test_fixture_fx1_hash():
    generated = generate(default_plan(), seed=1)
    fx1 = generated.records[0].tx
    assert str(txid(fx1)) == generated.manifest["first_record_txid"]
    assert txid(fx1) == oracle_double_sha256(serialize_tx(fx1))


def test_hash256_display_is_byte_reversed():
    h = Hash256(bytes(range(32)))
    assert str(h) == bytes(range(32))[::-1].hex()
    assert Hash256.from_hex(str(h)) == h
    with pytest.raises(ValueError):
        Hash256(b"short")


def test_random_bytes_never_crash():
    rng = random.Random(0)
    for _ in range(2000):
        data = rng.randbytes(rng.randrange(0, 200))
        try:
            deserialize_tx(data)
        except DecodeError:
            pass
