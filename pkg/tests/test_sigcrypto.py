import hashlib
import struct

import pytest
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec, utils
from hypothesis import given, settings, strategies as st

from malleability.corpus import p2pkh_script
from malleability.sigcrypto import (
    SECP256K1_ORDER, DerSignature, IndexOutOfRange, IntegerOutOfRange, InvalidNonce, KeyPair,
    MalformedDer, TransactionChecker, encode_der, low_s, negate_s, parse_der, sighash_all,
    sign_input, verify_input,
)
from malleability.txcodec import Transaction, TxOutput

N = SECP256K1_ORDER
P = 2**256 - 2**32 - 977
G = (0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798,
     0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8)


def _add(p1, p2):
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    (x1, y1), (x2, y2) = p1, p2
    if x1 == x2 and (y1 + y2) % P == 0:
        return None
    if p1 == p2:
        lam = 3 * x1 * x1 * pow(2 * y1, -1, P) % P
    else:
        lam = (y2 - y1) * pow(x2 - x1, -1, P) % P
    x3 = (lam * lam - x1 - x2) % P
    return x3, (lam * (x1 - x3) - y1) % P


def _mul(k, point):
    acc = None
    while k:
        if k & 1:
            acc = _add(acc, point)
        point = _add(point, point)
        k >>= 1
    return acc


def _oracle_verify(pubkey: bytes, digest: bytes, r: int, s: int) -> bool:
    key = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256K1(), pubkey)
    try:
        key.verify(utils.encode_dss_signature(r, s), digest,
                   ec.ECDSA(utils.Prehashed(hashes.SHA256())))
        return True
    except InvalidSignature:
        return False


def _oracle_sighash(tx: Transaction, index: int, spk: bytes) -> bytes:
    def varint(n):
        if n < 0xFD:
            return bytes([n])
        return b"\xfd" + struct.pack("<H", n)

    out = struct.pack("<I", tx.version) + varint(len(tx.inputs))
    for i, txin in enumerate(tx.inputs):
        script = spk if i == index else b""
        out += bytes(txin.previous.txid) + struct.pack("<I", txin.previous.index)
        out += varint(len(script)) + script + struct.pack("<I", txin.sequence)
    out += varint(len(tx.outputs))
    for o in tx.outputs:
        out += struct.pack("<q", o.value) + varint(len(o.script_pubkey)) + o.script_pubkey
    out += struct.pack("<I", tx.locktime) + struct.pack("<I", 1)
    return hashlib.sha256(hashlib.sha256(out).digest()).digest()


def test_group_order_is_curve_order():
    assert _mul(N, G) is None
    assert _mul(N - 1, G) == (G[0], P - G[1])


def test_pubkey_matches_oracle():
    kp = KeyPair.from_secret(0xC0FFEE)
    x, y = _mul(0xC0FFEE, G)
    assert kp.pubkey == b"\x04" + x.to_bytes(32, "big") + y.to_bytes(32, "big")


def test_der_minimal_example():
    sig = DerSignature(1, 1)
    assert encode_der(sig).hex() == "3006020101020101" + "01"
    assert parse_der(encode_der(sig)) == sig


def test_der_lax_padding():
    sig = DerSignature(1, 1)
    lax = encode_der(sig, strict=False)
    assert lax.hex() == "300702020001020101" + "01"
    with pytest.raises(MalformedDer):
        parse_der(lax)
    parsed = parse_der(lax, strict=False)
    assert parsed == sig and parsed.strict is False


def test_der_high_bit_r_gets_sign_byte():
    sig = DerSignature(0x80, 5)
    assert encode_der(sig).hex() == "30070202008002010501"


@pytest.mark.parametrize("hexsig", [
    "", "3006020101020101", "3106020101020101" + "01", "3007020101020101" + "01",
    "3006020001020101" + "01", "30060201810201010" + "1", "30060201010201010101",
])
def test_der_malformed(hexsig):
    with pytest.raises((MalformedDer, ValueError)):
        parse_der(bytes.fromhex(hexsig))


def test_der_range():
    with pytest.raises(IntegerOutOfRange):
        DerSignature(0, 1)
    body = b"\x02\x01\x01\x02\x21\x00" + N.to_bytes(32, "big")
    with pytest.raises(IntegerOutOfRange):
        parse_der(b"\x30" + bytes([len(body)]) + body + b"\x01")


@given(st.integers(1, N - 1), st.integers(1, N - 1))
def test_der_roundtrip(r, s):
    sig = DerSignature(r, s)
    assert parse_der(encode_der(sig)) == sig
    assert parse_der(encode_der(sig, strict=False), strict=False) == sig


@given(st.integers(1, N - 1))
def test_negate_s_involution(s):
    sig = DerSignature(1, s)
    assert negate_s(negate_s(sig)) == sig
    assert negate_s(sig).s == N - s
    assert low_s(sig).is_low_s


def test_sighash_matches_oracle(factory):
    tx = factory.spend(90_000, n_inputs=3, n_outputs=2)
    for i, txin in enumerate(tx.inputs):
        spk = factory.funding.scripts[txin.previous]
        assert sighash_all(tx, i, spk) == _oracle_sighash(tx, i, spk)
    with pytest.raises(IndexOutOfRange):
        sighash_all(tx, 3, b"")


def test_sighash_ignores_script_sigs_but_not_outputs(standard_tx):
    spk = p2pkh_script(bytes(20))
    blanked = standard_tx.with_script_sig(0, b"\x01\x02")
    assert sighash_all(standard_tx, 0, spk) == sighash_all(blanked, 0, spk)
    out = standard_tx.outputs[0]
    changed = Transaction(standard_tx.inputs,
                          (TxOutput(out.value - 1, out.script_pubkey),) + standard_tx.outputs[1:])
    assert sighash_all(standard_tx, 0, spk) != sighash_all(changed, 0, spk)


def test_sign_verify_and_oracle(keys, standard_tx):
    kp = keys[0]
    spk = p2pkh_script(kp.address_hash)
    sig = sign_input(standard_tx, 0, spk, kp, nonce=987654321)
    digest = sighash_all(standard_tx, 0, spk)
    assert sig.is_low_s
    assert verify_input(standard_tx, 0, spk, kp.pubkey, sig)
    assert _oracle_verify(kp.pubkey, digest, sig.r, sig.s)
    # the negated twin verifies too, under both implementations
    twin = negate_s(sig)
    assert verify_input(standard_tx, 0, spk, kp.pubkey, twin)
    assert _oracle_verify(kp.pubkey, digest, twin.r, twin.s)
    assert not verify_input(standard_tx, 0, spk, keys[1].pubkey, sig)


def test_sign_nonce_behaviour(keys, standard_tx):
    kp = keys[0]
    spk = p2pkh_script(kp.address_hash)
    a = sign_input(standard_tx, 0, spk, kp, nonce=5)
    assert a == sign_input(standard_tx, 0, spk, kp, nonce=5)
    assert a.r == _mul(5, G)[0] % N
    assert a != sign_input(standard_tx, 0, spk, kp, nonce=6)
    for bad in (0, N):
        with pytest.raises(InvalidNonce):
            sign_input(standard_tx, 0, spk, kp, nonce=bad)


def test_checker_accepts_lax_and_high_s(keys, standard_tx):
    kp = keys[0]
    spk = p2pkh_script(kp.address_hash)
    sig = sign_input(standard_tx, 0, spk, kp, nonce=42)
    checker = TransactionChecker(standard_tx, 0)
    for blob in (encode_der(sig), encode_der(sig, strict=False), encode_der(negate_s(sig))):
        assert checker.check_sig(blob, kp.pubkey, spk)
    assert not checker.check_sig(b"\x30\x00", kp.pubkey, spk)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, N - 1), st.integers(1, N - 1), st.binary(min_size=32, max_size=32))
def test_negation_verifies_under_oracle(secret, nonce, digest):
    from malleability.sigcrypto import DEFAULT_PROVIDER
    kp = KeyPair.from_secret(secret)
    r, s = DEFAULT_PROVIDER.ecdsa_sign(kp.privkey, digest, nonce)
    assert _oracle_verify(kp.pubkey, digest, r, s)
    assert _oracle_verify(kp.pubkey, digest, r, N - s)
